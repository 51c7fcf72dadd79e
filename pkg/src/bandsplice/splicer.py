"""Multi-band splicing and grid-based sparse recovery of the relative CIR."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cleaner import CleanedBandSet
from .model import BandPlan


@dataclass(frozen=True, eq=False)
class Dictionary:
    """Overcomplete delay dictionary over all active subcarriers.

    ``matrix`` always holds the full ``MN x G`` set of rows; ``active`` masks
    rows belonging to unusable bands.
    """

    plan: BandPlan
    grid_size: int
    matrix: np.ndarray
    active: np.ndarray

    @property
    def delays(self) -> np.ndarray:
        return np.arange(self.grid_size) / (self.grid_size * self.plan.subcarrier_spacing)

    def active_matrix(self) -> np.ndarray:
        return self.matrix[self.active]

    def with_active_bands(self, usable) -> "Dictionary":
        usable = np.asarray(usable, dtype=bool)
        rows = np.repeat(usable, self.plan.subcarriers_per_band)
        return Dictionary(self.plan, self.grid_size, self.matrix, rows)


@dataclass
class RelativeCirEstimate:
    """Sparse grid coefficients of the relative CIR.

    ``gains`` are coefficients on the unit-norm dictionary columns;
    ``tap_gains`` rescales them to channel tap amplitudes.
    """

    indices: np.ndarray
    gains: np.ndarray
    grid_size: int
    subcarrier_spacing: float
    column_scale: float = 1.0
    residual_norms: np.ndarray | None = None

    @property
    def delays(self) -> np.ndarray:
        return self.indices / (self.grid_size * self.subcarrier_spacing)

    @property
    def tap_gains(self) -> np.ndarray:
        return self.gains * self.column_scale

    def dense(self) -> np.ndarray:
        h = np.zeros(self.grid_size, dtype=complex)
        h[self.indices] = self.tap_gains
        return h

    def sorted(self) -> "RelativeCirEstimate":
        order = np.argsort(self.indices)
        return RelativeCirEstimate(self.indices[order], self.gains[order], self.grid_size,
                                   self.subcarrier_spacing, self.column_scale,
                                   self.residual_norms)


def build_dictionary(plan: BandPlan, G: int | None = None) -> Dictionary:
    """Columns ``exp(-j 2 pi f (i/G) / f_s) / sqrt(MN)`` for ``i = 0 .. G-1``."""
    rows = plan.num_bands * plan.subcarriers_per_band
    if G is None:
        G = 2 * rows
    if G < rows:
        raise ValueError(f"grid size {G} must be at least MN = {rows}")
    ratio = plan.frequencies.ravel() / plan.subcarrier_spacing
    k = np.round(ratio)
    if np.all(np.abs(ratio - k) < 1e-9):
        # carriers on the subcarrier raster: exact phase via integer arithmetic
        cycles = (np.outer(k.astype(np.int64), np.arange(G)) % G) / G
    else:
        cycles = np.mod(np.outer(ratio, np.arange(G) / G), 1.0)
    matrix = np.exp(-2j * np.pi * cycles) / np.sqrt(rows)
    return Dictionary(plan, G, matrix, np.ones(rows, dtype=bool))


def splice(cleaned: CleanedBandSet) -> np.ndarray:
    """Stack usable cleaned bands band-major, subcarrier index ascending."""
    if not np.any(cleaned.usable):
        raise ValueError("no usable bands to splice")
    return cleaned.csi.values[cleaned.usable].ravel()


def omp(y, dictionary: Dictionary, sparsity: int, *, tiny: float = 1e-12) -> RelativeCirEstimate:
    """Orthogonal matching pursuit on the active rows of ``dictionary``.

    Columns are renormalized over the active rows before correlating. Ties
    in correlation go to the smaller grid index. Stops after ``sparsity``
    selections or once the residual norm drops below ``tiny * ||y||``.
    """
    if sparsity < 1:
        raise ValueError("sparsity must be at least 1")
    d = dictionary.active_matrix()
    y = np.asarray(y, dtype=complex)
    if y.size != d.shape[0]:
        raise ValueError(f"measurement length {y.size} does not match {d.shape[0]} active rows")
    if d.shape[0] < sparsity:
        raise ValueError("fewer active rows than the requested sparsity")
    norms = np.linalg.norm(d, axis=0)
    y_norm = np.linalg.norm(y)
    residual = y.copy()
    support: list[int] = []
    coeffs = np.empty(0, dtype=complex)
    history = [y_norm]
    while len(support) < sparsity and np.linalg.norm(residual) > tiny * y_norm:
        corr = np.abs(d.conj().T @ residual) / norms
        corr[support] = -1.0
        best = int(np.argmax(corr))  # first maximum = smallest index on ties
        support.append(best)
        sub = d[:, support]
        coeffs, *_ = np.linalg.lstsq(sub, y, rcond=None)
        residual = y - sub @ coeffs
        history.append(np.linalg.norm(residual))
    plan = dictionary.plan
    scale = 1.0 / np.sqrt(plan.num_bands * plan.subcarriers_per_band)
    return RelativeCirEstimate(np.asarray(support, dtype=int), coeffs, dictionary.grid_size,
                               plan.subcarrier_spacing, scale, np.asarray(history))


def estimate_relative_cir(cleaned: CleanedBandSet, sparsity: int,
                          dictionary: Dictionary | None = None) -> RelativeCirEstimate:
    dictionary = dictionary or build_dictionary(cleaned.plan)
    dictionary = dictionary.with_active_bands(cleaned.usable)
    return omp(splice(cleaned), dictionary, sparsity)
