"""Per-band atomic norm denoising.

The denoiser solves

    minimize  1/2 ||x - y||^2 + lam/2 (t + u[0])
    s.t.      [[T(u), x], [x^H, t]] >= 0

by ADMM, splitting the PSD constraint onto a separate block variable.
Delay support is read off the dual polynomial built from the residual
``(y - x_hat) / lam``; coefficients are refit by least squares.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .model import BandPlan

log = logging.getLogger(__name__)

GRID_OVERSAMPLING = 64
DUAL_THRESHOLD = 1e-3


class ConvergenceError(RuntimeError):
    """ADMM stopped at ``max_iters`` with residuals above tolerance."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


@dataclass
class DenoiseResult:
    x_hat: np.ndarray
    u: np.ndarray
    t: float
    iterations: int
    primal_residual: float
    dual_residual: float
    converged: bool
    objective: float
    history: list = field(default_factory=list, repr=False)

    def block_matrix(self) -> np.ndarray:
        return block(self.u, self.x_hat, self.t)


@dataclass
class BandEstimate:
    delays: np.ndarray
    coefficients: np.ndarray
    denoise: DenoiseResult | None = field(default=None, repr=False)

    @property
    def count(self) -> int:
        return self.delays.size


def atom(tau: float, theta: float, plan: BandPlan) -> np.ndarray:
    """Length-``N`` atom with entries ``exp(-j (2 pi n f_s tau - theta))``."""
    n = plan.indices
    return np.exp(-1j * (2 * np.pi * n * plan.subcarrier_spacing * tau - theta))


def lambda_for(N: int, snr: float) -> float:
    """Regularization weight for white Gaussian noise of variance ``1/snr``."""
    if N < 2:
        raise ValueError("N must be at least 2")
    if not snr > 0:
        raise ValueError("snr must be positive")
    log_n = np.log(N)
    return float((1 + 1 / log_n) / np.sqrt(snr)
                 * np.sqrt(N * log_n + N * np.log(4 * np.pi * log_n)))


def toeplitz(u: np.ndarray) -> np.ndarray:
    """Hermitian Toeplitz matrix with first column ``u``."""
    n = u.size
    d = np.subtract.outer(np.arange(n), np.arange(n))
    return np.where(d >= 0, u[np.abs(d)], np.conj(u[np.abs(d)]))


def block(u: np.ndarray, x: np.ndarray, t: float) -> np.ndarray:
    n = x.size
    out = np.empty((n + 1, n + 1), dtype=complex)
    out[:n, :n] = toeplitz(u)
    out[:n, n] = x
    out[n, :n] = np.conj(x)
    out[n, n] = t
    return out


def objective(x: np.ndarray, u: np.ndarray, t: float, y: np.ndarray, lam: float) -> float:
    return float(0.5 * np.vdot(x - y, x - y).real + 0.5 * lam * (t + u[0].real))


class _ToeplitzProjector:
    """Least-squares fit of a Hermitian Toeplitz matrix to an arbitrary one."""

    def __init__(self, n: int):
        i, j = np.indices((n, n))
        d = (i - j).ravel()
        self.n = n
        self.lower = d >= 0
        self.upper = d < 0
        self.lag_lower = d[self.lower]
        self.lag_upper = -d[self.upper]
        counts = np.bincount(self.lag_lower, minlength=n).astype(float)
        counts[1:] *= 2
        self.counts = counts
        self.lag = np.abs(d).reshape(n, n)
        self.upper_mask = self.upper.reshape(n, n)

    def expand(self, u: np.ndarray) -> np.ndarray:
        out = u[self.lag]
        np.conjugate(out, out=out, where=self.upper_mask)
        return out

    def fit(self, m: np.ndarray) -> np.ndarray:
        """Average each diagonal (lower entries and conjugated upper ones)."""
        flat = m.ravel()
        lo = flat[self.lower]
        up = np.conj(flat[self.upper])
        re = (np.bincount(self.lag_lower, lo.real, self.n)
              + np.bincount(self.lag_upper, up.real, self.n))
        im = (np.bincount(self.lag_lower, lo.imag, self.n)
              + np.bincount(self.lag_upper, up.imag, self.n))
        return (re + 1j * im) / self.counts


def _psd_part(a: np.ndarray) -> np.ndarray:
    # iterates are low rank near convergence; only the positive pairs are needed
    w, v = scipy.linalg.eigh(a, subset_by_value=(0.0, np.inf), driver="evr",
                             check_finite=False)
    if w.size == 0:
        return np.zeros_like(a)
    return (v * w) @ v.conj().T


def an_denoise(y_band, lam: float, *, tol: float = 1e-8, max_iters: int = 20000,
               rho: float | None = None, relax: float = 1.3, adapt_every: int = 50,
               record_history: bool = False, raise_on_failure: bool = False) -> DenoiseResult:
    """Atomic norm denoising of one band by ADMM.

    Parameters
    ----------
    y_band : array_like
        Length-``N`` complex samples, subcarrier index ascending.
    lam : float
        Regularization weight (see :func:`lambda_for`).
    tol : float
        Tolerance on both residuals, relative to the iterate norms plus one
        (at unit signal scale).
    rho : float, optional
        Initial penalty; defaults to ``1/N`` at unit signal scale and is
        rebalanced every ``adapt_every`` iterations.
    relax : float
        Over-relaxation factor in (0, 2).
    record_history : bool
        Keep the objective value of every iterate in ``result.history``.
    raise_on_failure : bool
        Raise :class:`ConvergenceError` instead of returning an
        unconverged result flagged by ``converged=False``.
    """
    if not lam > 0:
        raise ValueError("lam must be positive")
    y = np.asarray(y_band, dtype=complex)
    n = y.size
    scale = float(np.max(np.abs(y))) if y.size else 0.0
    if scale == 0.0:
        return DenoiseResult(np.zeros(n, complex), np.zeros(n, complex), 0.0, 0,
                             0.0, 0.0, True, 0.0)

    # The problem is 1-homogeneous in (y, lam): solve at unit scale.
    yn = y / scale
    lam_n = lam / scale
    proj = _ToeplitzProjector(n)
    if rho is None:
        rho = 1.0 / n

    z = np.zeros((n + 1, n + 1), dtype=complex)
    dual = np.zeros_like(z)
    history = []
    x = np.zeros(n, complex)
    u = np.zeros(n, complex)
    t = 0.0
    r_norm = s_norm = np.inf
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        m = z - dual / rho
        mx = 0.5 * (m[:n, n] + np.conj(m[n, :n]))
        x = (yn + 2 * rho * mx) / (1 + 2 * rho)
        t = m[n, n].real - lam_n / (2 * rho)
        u = proj.fit(m[:n, :n])
        u[0] = u[0].real - lam_n / (2 * rho * n)
        theta = _fill_block(z, u, x, t, proj)

        theta_r = relax * theta + (1 - relax) * z
        z_prev = z
        z = _psd_part(theta_r + dual / rho)
        dual = dual + rho * (theta_r - z)

        if record_history:
            history.append(objective(x, u, t, yn, lam_n) * scale ** 2)

        r_norm = np.linalg.norm(theta - z)
        s_norm = rho * np.linalg.norm(z - z_prev)
        # the unit absolute floor matters only when the optimum is near zero
        eps_pri = 1.0 + max(np.linalg.norm(theta), np.linalg.norm(z))
        eps_dual = 1.0 + np.linalg.norm(dual)
        if r_norm <= tol * eps_pri and s_norm <= tol * eps_dual and it > 1:
            converged = True
            break
        if adapt_every and it % adapt_every == 0:
            if r_norm / eps_pri > 10 * s_norm / eps_dual:
                rho *= 2.0
            elif s_norm / eps_dual > 10 * r_norm / eps_pri:
                rho /= 2.0

    result = DenoiseResult(
        x_hat=x * scale, u=u * scale, t=float(t * scale), iterations=it,
        primal_residual=float(r_norm / (1.0 + np.linalg.norm(theta))),
        dual_residual=float(s_norm / (1.0 + np.linalg.norm(dual))),
        converged=converged,
        objective=objective(x * scale, u * scale, t * scale, y, lam),
        history=history,
    )
    if not converged:
        msg = (f"ADMM did not converge in {max_iters} iterations "
               f"(primal {result.primal_residual:.2e}, dual {result.dual_residual:.2e})")
        if raise_on_failure:
            raise ConvergenceError(msg, result)
        log.warning(msg)
    return result


def _fill_block(like, u, x, t, proj):
    n = x.size
    theta = np.empty_like(like)
    theta[:n, :n] = proj.expand(u)
    theta[:n, n] = x
    theta[n, :n] = np.conj(x)
    theta[n, n] = t
    return theta


def dual_vector(result: DenoiseResult, y_band, lam: float) -> np.ndarray:
    return (np.asarray(y_band, dtype=complex) - result.x_hat) / lam


def dual_polynomial(q: np.ndarray, plan: BandPlan, oversampling: int = GRID_OVERSAMPLING):
    """``|<a(tau, 0), q>|`` on ``oversampling * N`` uniform delays in ``[0, 1/f_s)``.

    Returns ``(taus, modulus)``.
    """
    n = q.size
    size = oversampling * n
    padded = np.zeros(size, dtype=complex)
    padded[plan.indices % size] = q
    # sum_n q_n exp(+j 2 pi n l / L)
    values = np.fft.ifft(padded) * size
    taus = np.arange(size) / (size * plan.subcarrier_spacing)
    return taus, np.abs(values)


def _modulus_at(q: np.ndarray, plan: BandPlan, taus: np.ndarray) -> np.ndarray:
    phase = 2j * np.pi * np.outer(taus, plan.indices) * plan.subcarrier_spacing
    return np.abs(np.exp(phase) @ q)


def extract_support(result: DenoiseResult, y_band, lam: float, plan: BandPlan, *,
                    eps_dual: float = DUAL_THRESHOLD,
                    oversampling: int = GRID_OVERSAMPLING,
                    refine_steps: int = 1) -> np.ndarray:
    """Delays where the dual polynomial touches the unit circle.

    Local maxima of the dual-polynomial modulus above ``1 - eps_dual`` on the
    uniform grid are refined by quadratic interpolation through the three
    neighbouring samples. With ``refine_steps > 1`` the interpolation is
    repeated on a grid shrunk around the previous estimate.
    """
    if not np.any(result.x_hat):
        return np.empty(0)
    q = dual_vector(result, y_band, lam)
    taus, mod = dual_polynomial(q, plan, oversampling)
    size = taus.size
    left = np.roll(mod, 1)
    right = np.roll(mod, -1)
    peaks = np.flatnonzero((mod >= left) & (mod > right) & (mod >= 1 - eps_dual))
    if peaks.size == 0:
        return np.empty(0)

    period = plan.delay_range
    step = period / size
    found = []
    for p in peaks:
        centre = taus[p]
        h = step
        for _ in range(max(refine_steps, 1)):
            if h == step and _ == 0:
                ym, y0, yp = mod[(p - 1) % size], mod[p], mod[(p + 1) % size]
            else:
                ym, y0, yp = _modulus_at(q, plan, np.array([centre - h, centre, centre + h]))
            denom = ym - 2 * y0 + yp
            offset = 0.5 * (ym - yp) / denom if denom < 0 else 0.0
            offset = float(np.clip(offset, -0.5, 0.5))
            centre = centre + offset * h
            h = h / 8
        found.append(np.mod(centre, period))
    return np.unique(np.sort(np.asarray(found)))


def atom_matrix(delays, plan: BandPlan) -> np.ndarray:
    """``N x K`` matrix of zero-phase atoms."""
    delays = np.asarray(delays, dtype=float)
    return np.exp(-2j * np.pi * np.outer(plan.indices * plan.subcarrier_spacing, delays))


def merge_close(delays, plan: BandPlan, oversampling: int = GRID_OVERSAMPLING) -> np.ndarray:
    """Collapse delays closer than one dual-polynomial grid step (circularly)."""
    delays = np.sort(np.asarray(delays, dtype=float))
    if delays.size < 2:
        return delays
    min_gap = 1.0 / (oversampling * plan.subcarriers_per_band * plan.subcarrier_spacing)
    groups = [[delays[0]]]
    for d in delays[1:]:
        if d - groups[-1][-1] < min_gap:
            groups[-1].append(d)
        else:
            groups.append([d])
    if len(groups) > 1 and delays[0] + plan.delay_range - groups[-1][-1] < min_gap:
        groups[0] = groups.pop() + groups[0]
        return np.sort([np.mod(np.mean(np.unwrap(np.asarray(g) * 2 * np.pi / plan.delay_range))
                               * plan.delay_range / (2 * np.pi), plan.delay_range)
                        for g in groups])
    return np.asarray([np.mean(g) for g in groups])


def fit_coeffs(y_band, delays, plan: BandPlan) -> np.ndarray:
    """Least-squares coefficients of ``y_band`` on zero-phase atoms at ``delays``.

    Near-duplicate delays must be merged first (:func:`merge_close`); the
    caller's delay list is used as is.
    """
    delays = np.asarray(delays, dtype=float)
    if delays.size == 0:
        return np.empty(0, dtype=complex)
    if delays.size > plan.subcarriers_per_band:
        raise ValueError("more delays than subcarriers")
    a = atom_matrix(delays, plan)
    coeffs, *_ = np.linalg.lstsq(a, np.asarray(y_band, dtype=complex), rcond=None)
    return coeffs


def polish_support(y_band, delays, plan: BandPlan, coefficients=None):
    """Jointly refine delays and coefficients by nonlinear least squares.

    The dual-polynomial support of the regularized problem is biased by an
    amount proportional to ``lam``; a local Levenberg-Marquardt fit on the
    raw samples removes that bias. The refined support is kept only if it
    lowers the residual and every delay stays within half a resolution cell
    (``1 / (2 N f_s)``) of its starting point.
    """
    from scipy.optimize import least_squares

    y = np.asarray(y_band, dtype=complex)
    delays = np.asarray(delays, dtype=float)
    k = delays.size
    if k == 0:
        return delays, np.empty(0, dtype=complex)
    if coefficients is None:
        coefficients = fit_coeffs(y, delays, plan)
    cell = 1.0 / (plan.subcarriers_per_band * plan.subcarrier_spacing)
    w = 2 * np.pi * plan.indices * plan.subcarrier_spacing * cell  # per unit delay cell

    def residual(p):
        tau = p[:k]
        c = p[k:2 * k] + 1j * p[2 * k:]
        r = y - np.exp(-1j * np.outer(w, tau)) @ c
        return np.concatenate([r.real, r.imag])

    def jacobian(p):
        tau = p[:k]
        c = p[k:2 * k] + 1j * p[2 * k:]
        a = np.exp(-1j * np.outer(w, tau))
        d_tau = (1j * w[:, None]) * a * c[None, :]
        jac = np.concatenate([d_tau, -a, -1j * a], axis=1)
        return np.concatenate([jac.real, jac.imag], axis=0)

    start = np.concatenate([delays / cell, coefficients.real, coefficients.imag])
    before = np.linalg.norm(residual(start))
    try:
        sol = least_squares(residual, start, jac=jacobian, method="lm",
                            xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=200 * (3 * k + 1))
    except (ValueError, np.linalg.LinAlgError):
        return delays, coefficients
    tau = sol.x[:k] * cell
    if (np.linalg.norm(sol.fun) > before or not np.all(np.isfinite(sol.x))
            or np.any(np.abs(tau - delays) > 0.5 * cell)):
        return delays, coefficients
    tau = np.mod(tau, plan.delay_range)
    order = np.argsort(tau)
    coeffs = sol.x[k:2 * k] + 1j * sol.x[2 * k:]
    return tau[order], coeffs[order]


def denoise_band(y_band, snr: float, plan: BandPlan, *, polish: bool = True,
                 eps_dual: float = DUAL_THRESHOLD, refine_steps: int = 1,
                 **solver_options) -> BandEstimate:
    """Denoise one band and return its delay support with refit coefficients.

    ``solver_options`` are forwarded to :func:`an_denoise`.
    """
    lam = lambda_for(plan.subcarriers_per_band, snr)
    result = an_denoise(y_band, lam, **solver_options)
    delays = extract_support(result, y_band, lam, plan, eps_dual=eps_dual,
                             refine_steps=refine_steps)
    delays = merge_close(delays, plan)
    coeffs = fit_coeffs(y_band, delays, plan)
    if polish and delays.size:
        delays, coeffs = polish_support(y_band, delays, plan, coeffs)
        merged = merge_close(delays, plan)
        if merged.size != delays.size:
            delays = merged
            coeffs = fit_coeffs(y_band, delays, plan)
    return BandEstimate(delays, coeffs, result)
