"""Per-band distortion estimation and removal.

Each band's earliest recovered path is taken as the reference: its delay
becomes the timing-offset estimate and its phase the phase-offset
estimate. Counter-rotating by both leaves the CSI of the relative channel,
which starts at delay zero with a real positive first gain.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .andenoise import BandEstimate, denoise_band
from .model import BandPlan, CsiMatrix, DistortionParams

log = logging.getLogger(__name__)


@dataclass
class CleanedBandSet:
    csi: CsiMatrix
    distortion: DistortionParams
    counts: np.ndarray
    usable: np.ndarray
    estimates: list[BandEstimate] = field(default_factory=list, repr=False)

    @property
    def plan(self) -> BandPlan:
        return self.csi.plan

    @property
    def unusable_bands(self) -> list[int]:
        return [int(m) for m in np.flatnonzero(~self.usable)]


def estimate_band_distortion(estimate: BandEstimate) -> tuple[float, float]:
    """``(delta_hat, phi_hat)`` from the earliest recovered path.

    Raises ValueError for an empty estimate; :func:`clean_all` marks such
    bands unusable instead.
    """
    if estimate.count == 0:
        raise ValueError("band has no recovered paths")
    first = int(np.argmin(estimate.delays))
    delta_hat = float(estimate.delays[first])
    phi_hat = float(np.mod(-np.angle(estimate.coefficients[first]) / (2 * np.pi), 1.0))
    if phi_hat >= 1.0:
        phi_hat = 0.0
    return delta_hat, phi_hat


def clean_band(y_band, delta_hat: float, phi_hat: float, plan: BandPlan) -> np.ndarray:
    n_fs = plan.indices * plan.subcarrier_spacing
    return np.exp(2j * np.pi * (delta_hat * n_fs + phi_hat)) * np.asarray(y_band)


def clean_all(csi: CsiMatrix, snr: float, plan: BandPlan | None = None, *,
              workers: int = 1, **solver_options) -> CleanedBandSet:
    """Denoise, estimate and clean every band of ``csi``.

    Bands without any recovered path are flagged unusable; their rows in
    the cleaned matrix are left as zeros and their distortion estimates
    are zero.
    """
    plan = plan or csi.plan
    values = csi.values

    def work(m):
        return denoise_band(values[m], snr, plan, **dict(solver_options))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            estimates = list(pool.map(work, range(plan.num_bands)))
    else:
        estimates = [work(m) for m in range(plan.num_bands)]

    cleaned = np.zeros_like(values)
    delta = np.zeros(plan.num_bands)
    phi = np.zeros(plan.num_bands)
    usable = np.zeros(plan.num_bands, dtype=bool)
    for m, est in enumerate(estimates):
        if est.count == 0:
            log.info("band %d: no support recovered, marked unusable", m)
            continue
        delta[m], phi[m] = estimate_band_distortion(est)
        cleaned[m] = clean_band(values[m], delta[m], phi[m], plan)
        usable[m] = True
    counts = np.array([est.count for est in estimates])
    return CleanedBandSet(CsiMatrix(cleaned, plan, "cleaned"),
                          DistortionParams(delta, phi), counts, usable, estimates)
