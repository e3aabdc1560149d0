"""Run-directory serialization: checkpoints, JSONL streams, CSV tables and
the atomically written manifest.

Checkpoints are .npz containers holding the flat float64 parameter vectors
plus a JSON metadata blob (net configs, shape descriptors, env spec, config
hash); reloads are bit-exact.  JSONL records replace non-finite floats with
null on write.
"""

from __future__ import annotations

import csv
import json
import math
import os
import tempfile

import numpy as np


class CheckpointError(RuntimeError):
    pass


def _sanitize(value):
    if isinstance(value, dict):
        return {k: _sanitize(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_sanitize(v) for v in value]
    if isinstance(value, (np.floating, float)):
        v = float(value)
        return v if math.isfinite(v) else None
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.bool_,)):
        return bool(value)
    return value


def write_jsonl(path: str, records) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(_sanitize(rec), sort_keys=True) + "\n")


def append_jsonl(path: str, record) -> None:
    with open(path, "a") as fh:
        fh.write(json.dumps(_sanitize(record), sort_keys=True) + "\n")


def read_jsonl(path: str) -> list:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_csv(path: str, header: list[str], rows: list[tuple]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def atomic_write_json(path: str, payload: dict) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            json.dump(_sanitize(payload), fh, indent=2, sort_keys=True)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(path: str, params: dict[str, np.ndarray], meta: dict) -> None:
    arrays = {f"param__{name}": np.asarray(vec, dtype=np.float64)
              for name, vec in params.items() if vec is not None}
    np.savez(path, __meta__=np.frombuffer(
        json.dumps(_sanitize(meta), sort_keys=True).encode(), dtype=np.uint8),
        **arrays)


def load_checkpoint(path: str):
    """Returns (params dict, meta dict); raises CheckpointError on anything
    malformed or unreadable."""
    try:
        with np.load(path) as data:
            if "__meta__" not in data:
                raise CheckpointError(f"{path}: missing metadata block")
            meta = json.loads(bytes(data["__meta__"]).decode())
            params = {key[len("param__"):]: data[key].astype(np.float64)
                      for key in data.files if key.startswith("param__")}
    except CheckpointError:
        raise
    except Exception as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint ({exc})") from exc
    if not params:
        raise CheckpointError(f"{path}: no parameter vectors found")
    return params, meta


def batch_records(batch) -> list[dict]:
    """One JSONL-ready record per trajectory of a Batch."""
    recs = []
    for i in range(batch.n):
        recs.append({
            "trajectory": i,
            "seed": batch.seed,
            "j_r": float(batch.j_r[i]),
            "j_c": float(batch.j_c[i]),
            "states": batch.states[i].tolist(),
            "actions": batch.actions[i].tolist(),
            "rewards": batch.rewards[i].tolist(),
            "costs": batch.costs[i].tolist(),
        })
    return recs


def gradpair_record(gp, update_index: int = 0, full_vectors: bool = False) -> dict:
    rec = {
        "update": update_index,
        "c": gp.c, "j_r": gp.j_r, "j_c": gp.j_c,
        "g_norm": float(np.linalg.norm(gp.g)),
        "q_norm": float(np.linalg.norm(gp.q)),
    }
    if full_vectors:
        rec["g"] = gp.g.tolist()
        rec["q"] = gp.q.tolist()
    return rec
