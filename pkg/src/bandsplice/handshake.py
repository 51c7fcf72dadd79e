"""Delay/phase ambiguity resolution from squared zero-subcarrier samples.

The relative CIR fixes the channel up to a common delay shift and a global
phase. The two APs' carrier-frequency samples carry conjugate phase
offsets, so their product is the squared channel response at each carrier;
matching the squared prediction of the shifted relative CIR against it over
a grid of (delay, phase) pairs recovers the absolute time of flight.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import SPEED_OF_LIGHT, BandPlan, Cir, HandshakeSamples
from .splicer import RelativeCirEstimate


class ResolutionError(RuntimeError):
    """The relative CIR predicts no energy on any carrier."""


@dataclass(frozen=True)
class AmbiguityGrid:
    tau_points: int = 65536
    theta_points: int = 64

    def __post_init__(self):
        if self.tau_points < 1 or self.theta_points < 1:
            raise ValueError("grid counts must be positive")

    def taus(self, plan: BandPlan) -> np.ndarray:
        return np.arange(self.tau_points) / (self.tau_points * plan.subcarrier_spacing)

    def thetas(self) -> np.ndarray:
        return 2 * np.pi * np.arange(self.theta_points) / self.theta_points


@dataclass
class ResolvedCir:
    cir: Cir
    tof: float
    theta: float
    cost: float
    tau_index: int
    theta_index: int
    # theta and theta + pi always give the same cost
    phase_ambiguous: bool = True


def squared_cfr(samples: HandshakeSamples) -> np.ndarray:
    """``y_rx * y_tx`` per band: the squared carrier response plus cross terms."""
    return samples.y_rx * samples.y_tx


def _raster(plan: BandPlan):
    """Carrier frequencies in subcarrier units if they are all integers."""
    k = plan.carrier_array / plan.subcarrier_spacing
    if np.all(np.abs(k - np.round(k)) < 1e-9) and np.all(np.abs(k) < 2 ** 52):
        return np.round(k).astype(np.int64)
    return None


def _carrier_cycles(plan: BandPlan, tau_index: np.ndarray, tau_points: int,
                    factor: int = 1) -> np.ndarray:
    """``factor * f_m0 * tau`` mod 1 for ``tau = j / (tau_points f_s)``; shape (J, M)."""
    tau_index = np.asarray(tau_index, dtype=np.int64)
    k = _raster(plan)
    if k is not None:
        prod = (factor * np.outer(tau_index, k)) % tau_points
        return prod / tau_points
    ratio = plan.carrier_array / plan.subcarrier_spacing
    return np.mod(factor * np.outer(tau_index / tau_points, ratio), 1.0)


def carrier_sums(h0: RelativeCirEstimate, plan: BandPlan) -> np.ndarray:
    """``s_m = sum_i h0_i exp(-j 2 pi f_m0 (i/G) / f_s)`` for each band."""
    if h0.indices.size == 0:
        raise ValueError("relative CIR estimate is empty")
    cycles = _carrier_cycles(plan, h0.indices, h0.grid_size)
    return np.exp(-2j * np.pi * cycles).T @ h0.tap_gains


def predict_zero_carrier(h0: RelativeCirEstimate, plan: BandPlan,
                         tau_bar: float, theta_bar: float) -> np.ndarray:
    """Carrier-frequency response of ``exp(j theta_bar) h0(tau - tau_bar)``."""
    s = carrier_sums(h0, plan)
    shift = np.exp(-2j * np.pi * np.mod(plan.carrier_array * tau_bar, 1.0))
    return np.exp(1j * theta_bar) * shift * s


def cost_surface(h0: RelativeCirEstimate, q, plan: BandPlan,
                 grid: AmbiguityGrid = AmbiguityGrid(),
                 tau_index: np.ndarray | None = None) -> np.ndarray:
    """``C(tau, theta) = sum_m |q_m - H_(tau,theta)[m,0]^2|^2``, shape (I_tau, I_theta).

    Uses the expansion ``|q|^2 + |s^2|^2 - 2 Re(e^{2j theta} P(tau))`` with
    ``P(tau) = sum_m conj(q_m) s_m^2 exp(-4j pi f_m0 tau)``.
    """
    q = np.asarray(q, dtype=complex)
    s2 = carrier_sums(h0, plan) ** 2
    if tau_index is None:
        tau_index = np.arange(grid.tau_points)
    const = float(np.sum(np.abs(q) ** 2) + np.sum(np.abs(s2) ** 2))
    cycles = _carrier_cycles(plan, tau_index, grid.tau_points, factor=2)
    p = np.exp(-2j * np.pi * cycles) @ (np.conj(q) * s2)
    l2 = (2 * np.arange(grid.theta_points)) % grid.theta_points
    rot = np.exp(2j * np.pi * l2 / grid.theta_points)
    cost = const - 2 * np.real(np.outer(p, rot))
    return cost


def resolve(h0: RelativeCirEstimate, q, plan: BandPlan,
            grid: AmbiguityGrid = AmbiguityGrid(), *, chunk: int = 8192,
            tie_tol: float = 1e-12) -> ResolvedCir:
    """Grid search for the delay shift and phase that best explain ``q``.

    Ties (costs within ``tie_tol`` of the minimum, relative to the cost
    scale) go to the smaller delay, then the smaller phase.
    """
    s = carrier_sums(h0, plan)
    if not np.any(np.abs(s) > 0):
        raise ResolutionError("relative CIR predicts zero response on every carrier")
    q = np.asarray(q, dtype=complex)
    row_min = np.empty(grid.tau_points)
    row_arg = np.empty(grid.tau_points, dtype=np.int64)
    for start in range(0, grid.tau_points, chunk):
        idx = np.arange(start, min(start + chunk, grid.tau_points))
        cost = cost_surface(h0, q, plan, grid, idx)
        row_arg[idx] = np.argmin(cost, axis=1)
        row_min[idx] = cost[np.arange(idx.size), row_arg[idx]]
    scale = float(np.sum(np.abs(q) ** 2) + np.sum(np.abs(s) ** 4))
    lowest = row_min.min()
    j = int(np.flatnonzero(row_min <= lowest + tie_tol * scale)[0])
    l = int(row_arg[j])
    tof = j / (grid.tau_points * plan.subcarrier_spacing)
    theta = 2 * np.pi * l / grid.theta_points
    return ResolvedCir(final_cir(h0, tof, theta, plan), tof, theta, float(row_min[j]), j, l)


def final_cir(h0: RelativeCirEstimate, tof: float, theta: float, plan: BandPlan) -> Cir:
    """Shift the relative CIR by ``tof`` (circularly in ``[0, 1/f_s)``) and rotate by ``theta``."""
    delays = np.mod(h0.delays + tof, plan.delay_range)
    gains = np.exp(1j * theta) * h0.tap_gains
    order = np.argsort(delays)
    return Cir(delays[order], gains[order])


def ranging_error(tau_true: float, tau_star: float) -> float:
    """Distance error in metres."""
    return abs(tau_true - tau_star) * SPEED_OF_LIGHT
