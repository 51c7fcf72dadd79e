"""Baseline ToF estimator: basis pursuit denoising on squared carrier samples.

The squared carrier responses are Fourier samples of the channel convolved
with itself. An l1-sparse fit over an oversampled delay grid puts the first
significant component at twice the time of flight.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .handshake import squared_cfr
from .model import BandPlan, HandshakeSamples


class BaselineError(RuntimeError):
    pass


@dataclass
class BpdnProblem:
    q: np.ndarray
    F: np.ndarray
    eps: float
    grid_size: int

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=complex)
        if self.eps < 0:
            raise ValueError("eps must be non-negative")
        if self.F.shape != (self.q.size, self.grid_size):
            raise ValueError("F must be M x G'")
        if self.grid_size < self.q.size:
            raise ValueError("grid size must be at least M")

    @classmethod
    def for_plan(cls, q, plan: BandPlan, eps: float, grid_size: int | None = None):
        return cls(q, fourier_matrix(plan, grid_size), eps,
                   grid_size or 32 * plan.num_bands)


@dataclass
class BpdnResult:
    x: np.ndarray
    iterations: int
    primal_residual: float
    dual_residual: float
    converged: bool

    @property
    def objective(self) -> float:
        return float(np.sum(np.abs(self.x)))


def fourier_matrix(plan: BandPlan, grid_size: int | None = None) -> np.ndarray:
    """``[F]_{m,i} = exp(-j 2 pi f_m0 (i/G') / f_s) / sqrt(M)``, ``i = 0 .. G'-1``."""
    g = grid_size or 32 * plan.num_bands
    ratio = plan.carrier_array / plan.subcarrier_spacing
    k = np.round(ratio)
    if np.all(np.abs(ratio - k) < 1e-9):
        cycles = (np.outer(k.astype(np.int64), np.arange(g)) % g) / g
    else:
        cycles = np.mod(np.outer(ratio, np.arange(g) / g), 1.0)
    return np.exp(-2j * np.pi * cycles) / np.sqrt(plan.num_bands)


def _soft(v: np.ndarray, thresh: float) -> np.ndarray:
    mag = np.abs(v)
    shrink = np.maximum(mag - thresh, 0.0)
    out = np.zeros_like(v)
    nz = mag > 0
    out[nz] = v[nz] * (shrink[nz] / mag[nz])
    return out


def _project_ball(v: np.ndarray, centre: np.ndarray, radius: float) -> np.ndarray:
    d = v - centre
    n = np.linalg.norm(d)
    if n <= radius:
        return v
    return centre + d * (radius / n)


def solve_bpdn(problem: BpdnProblem, *, rho: float = 1.0, tol: float = 1e-10,
               max_iters: int = 50000) -> BpdnResult:
    """``min ||x||_1  s.t.  ||q - F x||_2 <= eps`` by ADMM.

    Splits ``x = z`` (l1 term) and ``F x = v`` (ball constraint). The final
    iterate is moved onto the constraint set along the minimum-norm
    correction, so the returned point is feasible up to rounding.
    """
    F = problem.F
    q = problem.q
    m, g = F.shape
    scale = float(np.linalg.norm(q))
    if scale == 0.0 or problem.eps >= scale:
        return BpdnResult(np.zeros(g, complex), 0, 0.0, 0.0, True)
    qn = q / scale
    eps = problem.eps / scale

    Fh = F.conj().T
    # (I + F^H F)^{-1} = I - F^H (I + F F^H)^{-1} F
    inner = np.linalg.inv(np.eye(m) + F @ Fh)

    def solve_x(rhs):
        return rhs - Fh @ (inner @ (F @ rhs))

    x = np.zeros(g, complex)
    z = np.zeros(g, complex)
    v = qn.copy()
    u1 = np.zeros(g, complex)
    u2 = np.zeros(m, complex)
    converged = False
    r = s = np.inf
    it = 0
    for it in range(1, max_iters + 1):
        x = solve_x((z - u1) + Fh @ (v - u2))
        fx = F @ x
        z_prev, v_prev = z, v
        z = _soft(x + u1, 1.0 / rho)
        v = _project_ball(fx + u2, qn, eps)
        u1 += x - z
        u2 += fx - v
        r = np.sqrt(np.linalg.norm(x - z) ** 2 + np.linalg.norm(fx - v) ** 2)
        s = rho * np.linalg.norm((z - z_prev) + Fh @ (v - v_prev))
        scale_p = max(np.linalg.norm(x), np.linalg.norm(z), 1e-300)
        scale_d = max(rho * np.sqrt(np.linalg.norm(u1) ** 2 + np.linalg.norm(u2) ** 2), 1e-300)
        if r <= tol * scale_p and s <= tol * scale_d:
            converged = True
            break

    x_out = _make_feasible(z, F, qn, eps)
    return BpdnResult(x_out * scale, it, float(r), float(s), converged)


def _make_feasible(x, F, q, eps):
    resid = q - F @ x
    n = np.linalg.norm(resid)
    if n <= eps:
        return x
    step = np.linalg.lstsq(F, resid, rcond=None)[0]
    return x + (1.0 - eps / n) * step


def chronos_tof(samples: HandshakeSamples, plan: BandPlan, grid_size: int | None = None,
                eps: float = 0.0, *, threshold: float = 0.1, **solver_options):
    """Half the delay of the first BPDN component above ``threshold * max``.

    Returns ``(tof_seconds, solution)``.
    """
    g = grid_size or 32 * plan.num_bands
    problem = BpdnProblem.for_plan(squared_cfr(samples), plan, eps, g)
    result = solve_bpdn(problem, **solver_options)
    mag = np.abs(result.x)
    peak = mag.max()
    if not peak > 0:
        raise BaselineError("BPDN returned the all-zero solution")
    first = int(np.flatnonzero(mag > threshold * peak)[0])
    round_trip = first / (g * plan.subcarrier_spacing)
    return round_trip / 2.0, result.x
