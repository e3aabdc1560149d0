"""Exact solver for the norm-bounded linear step under one linear constraint:

    max_delta  g . delta   s.t.   c + q . delta <= 0,   |delta|^2 <= delta_hat

delta_hat is the SQUARED radius: the trust region has radius sqrt(delta_hat).
The geometry splits into three cases: the ball misses the feasible half-space
entirely (recovery step straight down the constraint gradient), the ball sits
inside it (full ascent step along the objective gradient), or the boundary
cuts through the ball, where the optimum follows from the KKT system with two
scalar duals that have closed forms in r = g.g, s = g.q, t = q.q.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

# dual-region bookkeeping: REGION_A is the branch where the half-space
# multiplier nu = (lambda*c + s)/t is active (> 0), REGION_B where nu = 0
_REGION_A = "a"
_REGION_B = "b"

_CS_CLAMPS = 0  # count of Cauchy-Schwarz guard activations (r - s^2/t < 0)


def cs_clamp_count() -> int:
    return _CS_CLAMPS


class Case(str, enum.Enum):
    INFEASIBLE_RECOVERY = "infeasible-recovery"
    ALL_FEASIBLE = "all-feasible"
    BOUNDARY = "boundary"


@dataclass
class SubproblemInput:
    g: np.ndarray
    q: np.ndarray
    c: float
    delta_hat: float

    def __post_init__(self):
        self.g = np.asarray(self.g, dtype=np.float64)
        self.q = np.asarray(self.q, dtype=np.float64)
        if self.g.shape != self.q.shape:
            raise ValueError("g and q must have the same length")
        if not self.delta_hat > 0:
            raise ValueError("delta_hat must be > 0")
        if not (np.all(np.isfinite(self.g)) and np.all(np.isfinite(self.q))
                and np.isfinite(self.c)):
            raise ValueError("non-finite subproblem input")


@dataclass
class SubproblemSolution:
    delta: np.ndarray
    case: Case
    lambda_star: float   # nan outside the boundary case
    nu_star: float       # nan outside the boundary case
    r: float
    s: float
    t: float


def _vanish_tol(dim: int) -> float:
    return 1e-10 * (1.0 + dim)


def classify(inp: SubproblemInput) -> Case:
    """Geometric case of the trust region against the linearized constraint."""
    tol = _vanish_tol(inp.g.size)
    qnorm = float(np.linalg.norm(inp.q))
    if qnorm <= tol:
        if inp.c > 0:
            raise ValueError("constraint gradient vanished while infeasible")
        return Case.ALL_FEASIBLE
    ratio = inp.c ** 2 / (qnorm ** 2)
    if ratio > inp.delta_hat and inp.c > 0:
        return Case.INFEASIBLE_RECOVERY
    if ratio > inp.delta_hat and inp.c <= 0:
        return Case.ALL_FEASIBLE
    return Case.BOUNDARY


def _interval_a(c: float, s: float):
    """Closure of {lambda >= 0 : lambda*c + s > 0}, or None if empty."""
    if c > 0:
        return (max(0.0, -s / c), np.inf)
    if c < 0:
        hi = -s / c
        return (0.0, hi) if hi > 0 else None
    return (0.0, np.inf) if s > 0 else None


def _interval_b(c: float, s: float):
    """Closure of {lambda >= 0 : lambda*c + s <= 0}, or None if empty."""
    if c > 0:
        hi = -s / c
        return (0.0, hi) if hi >= 0 else None
    if c < 0:
        return (max(0.0, -s / c), np.inf)
    return None if s > 0 else (0.0, np.inf)


def _clamp(x: float, interval) -> float:
    lo, hi = interval
    return float(min(max(x, lo), hi))


def _dual_value_a(lam: float, r: float, s: float, t: float,
                  c: float, delta_hat: float) -> float:
    gap = s * s / t - r
    if lam == 0.0:
        # limit exists only in the parallel-gradients case (gap == 0)
        return s * c / t if abs(gap) <= 1e-12 * max(r, 1.0) else -np.inf
    return gap / (2 * lam) + 0.5 * lam * (c * c / t - delta_hat) + s * c / t


def _dual_value_b(lam: float, r: float, delta_hat: float) -> float:
    if lam == 0.0:
        return -np.inf
    return -0.5 * (r / lam + lam * delta_hat)


def solve_dual(inp: SubproblemInput):
    """Optimal duals (lambda*, nu*) for the boundary case.

    Candidate multipliers for the ball constraint are evaluated on the two
    regions where the half-space multiplier is active/inactive, projected onto
    the closure of their region, and kept by comparing the dual values; ties
    prefer the constraint-active candidate.  A vanished objective gradient
    returns the (0, 0) sentinel: the caller takes the zero/min-norm step.
    Returns (lambda_star, nu_star, region, (r, s, t)).
    """
    global _CS_CLAMPS
    g, q, c, delta_hat = inp.g, inp.q, inp.c, inp.delta_hat
    r = float(g @ g)
    s = float(g @ q)
    t = float(q @ q)
    tol = _vanish_tol(g.size)
    if np.sqrt(r) <= tol:
        return 0.0, 0.0, _REGION_B, (r, s, t)

    gap = r - s * s / t
    if gap < 0:
        if gap < -1e-12 * max(r, 1.0):
            _CS_CLAMPS += 1
        gap = 0.0

    ball_room = delta_hat - c * c / t
    # tangent geometry (ball_room -> 0) sends lambda_a to +inf; the floor keeps
    # it finite and the decomposed primal recovery below stays accurate
    lam_a_raw = np.sqrt(gap / max(ball_room, 1e-18 * delta_hat))
    lam_b_raw = np.sqrt(r / delta_hat)

    int_a = _interval_a(c, s)
    int_b = _interval_b(c, s)
    lam_a = _clamp(lam_a_raw, int_a) if int_a is not None else None
    lam_b = _clamp(lam_b_raw, int_b) if int_b is not None else None

    if lam_a is None and lam_b is None:          # cannot happen: regions cover [0, inf)
        raise RuntimeError("empty dual feasible set")
    if lam_b is None:
        lam_star, region = lam_a, _REGION_A
    elif lam_a is None:
        lam_star, region = lam_b, _REGION_B
    else:
        va = _dual_value_a(lam_a, r, s, t, c, delta_hat)
        vb = _dual_value_b(lam_b, r, delta_hat)
        lam_star, region = (lam_a, _REGION_A) if va >= vb else (lam_b, _REGION_B)

    nu_star = max((lam_star * c + s) / t, 0.0)
    return float(lam_star), float(nu_star), region, (r, s, t)


def _boundary_step(inp: SubproblemInput, lam: float, nu: float, region: str,
                   r: float, s: float, t: float) -> np.ndarray:
    g, q, c = inp.g, inp.q, inp.c
    lam_tol = _vanish_tol(g.size)
    if region == _REGION_A:
        # delta = (g - nu*q)/lambda with nu = (lambda*c + s)/t, rewritten as
        # g_perp/lambda - (c/t)*q: exact for any lambda in region a and stable
        # as lambda -> 0 (parallel gradients), where g_perp vanishes too
        g_perp = g - (s / t) * q
        if lam <= lam_tol:
            return -(c / t) * q
        return g_perp / lam - (c / t) * q
    if lam <= lam_tol:
        # vanished-objective sentinel: min-norm feasible point
        return -(c / t) * q if c > 0 else np.zeros_like(g)
    return g / lam


def solve_step(inp: SubproblemInput) -> SubproblemSolution:
    """Full three-case step.  Recovery and all-feasible steps use the whole
    radius; the boundary step comes from the closed-form duals."""
    case = classify(inp)
    g, q, c, delta_hat = inp.g, inp.q, inp.c, inp.delta_hat
    root = np.sqrt(delta_hat)
    nan = float("nan")
    if case is Case.INFEASIBLE_RECOVERY:
        delta = -root / np.linalg.norm(q) * q
        return SubproblemSolution(delta, case, nan, nan,
                                  float(g @ g), float(g @ q), float(q @ q))
    if case is Case.ALL_FEASIBLE:
        gnorm = float(np.linalg.norm(g))
        delta = (root / gnorm) * g if gnorm > _vanish_tol(g.size) else np.zeros_like(g)
        return SubproblemSolution(delta, case, nan, nan,
                                  float(g @ g), float(g @ q), float(q @ q))
    lam, nu, region, (r, s, t) = solve_dual(inp)
    delta = _boundary_step(inp, lam, nu, region, r, s, t)
    return SubproblemSolution(delta, case, lam, nu, r, s, t)


@dataclass
class KktResiduals:
    stationarity: float
    primal_linear: float   # max(c + q.delta, 0)
    primal_ball: float     # max(|delta|^2 - delta_hat, 0)
    comp_nu: float
    comp_lambda: float
    dual_feasible: bool


def kkt_residuals(inp: SubproblemInput, sol: SubproblemSolution) -> KktResiduals:
    """Residuals of the boundary-case optimality system for a solution."""
    g, q, c, delta_hat = inp.g, inp.q, inp.c, inp.delta_hat
    d = sol.delta
    lam, nu = sol.lambda_star, sol.nu_star
    lin = float(c + q @ d)
    ball = float(d @ d - delta_hat)
    return KktResiduals(
        stationarity=float(np.linalg.norm(-g + nu * q + lam * d)),
        primal_linear=max(lin, 0.0),
        primal_ball=max(ball, 0.0),
        comp_nu=abs(nu * lin),
        comp_lambda=abs(lam * ball),
        dual_feasible=(lam >= 0 and nu >= 0),
    )
