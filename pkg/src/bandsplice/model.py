"""Channel, distortion and handshake simulator for multi-band WiFi CSI.

Everything the estimation pipeline consumes is produced here: the band
geometry, sparse ground-truth channels, their frequency responses, the
per-band affine phase distortion and the zero-subcarrier handshake pair.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0

DEFAULT_SPACING = 312.5e3
DEFAULT_SUBCARRIERS = 65

# Extra carrier spacing (in subcarrier units, cumulative) on top of the
# minimum (N - 1) * f_s separation. Irregular on purpose: a uniform raster
# makes the squared handshake samples periodic in delay. The offsets also
# keep every prefix plan's carriers distinct modulo 32 M, so the baseline's
# Fourier matrix has full row rank.
_LOW_GROUP_BASE = 2.01e9
_HIGH_GROUP_BASE = 5.01e9
_LOW_GROUP_EXTRA = (0, 6, 35, 37, 49, 69, 90, 93)
_HIGH_GROUP_EXTRA = (8, 41, 57, 59, 60, 62, 69, 78)

CSI_KINDS = ("ideal", "distorted", "cleaned")


@dataclass(frozen=True, eq=False)
class BandPlan:
    """Frequency geometry of ``M`` bands of ``N`` equispaced subcarriers."""

    carriers: tuple[float, ...]
    subcarriers_per_band: int = DEFAULT_SUBCARRIERS
    subcarrier_spacing: float = DEFAULT_SPACING

    def __post_init__(self):
        object.__setattr__(self, "carriers", tuple(float(c) for c in self.carriers))
        n = self.subcarriers_per_band
        if n < 1 or n % 2 == 0:
            raise ValueError(f"subcarriers_per_band must be odd and positive, got {n}")
        if self.subcarrier_spacing <= 0:
            raise ValueError("subcarrier_spacing must be positive")
        if not self.carriers:
            raise ValueError("at least one carrier is required")
        gaps = np.diff(self.carriers)
        if np.any(gaps <= 0):
            raise ValueError("carriers must be strictly increasing")
        # Small slack so that exact (N-1)*f_s separations pass.
        if np.any(gaps < (n - 1) * self.subcarrier_spacing * (1 - 1e-12)):
            raise ValueError("bands overlap: carriers closer than (N-1)*f_s")

    @property
    def num_bands(self) -> int:
        return len(self.carriers)

    @property
    def indices(self) -> np.ndarray:
        """Signed subcarrier indices ``-(N-1)/2 .. (N-1)/2``."""
        half = (self.subcarriers_per_band - 1) // 2
        return np.arange(-half, half + 1)

    @property
    def carrier_array(self) -> np.ndarray:
        return np.asarray(self.carriers)

    @property
    def frequencies(self) -> np.ndarray:
        """``M x N`` array of absolute subcarrier frequencies."""
        return self.carrier_array[:, None] + self.indices[None, :] * self.subcarrier_spacing

    @property
    def delay_range(self) -> float:
        """Unambiguous delay interval length ``1 / f_s``."""
        return 1.0 / self.subcarrier_spacing

    def subset(self, bands) -> "BandPlan":
        return BandPlan(tuple(self.carriers[m] for m in bands),
                        self.subcarriers_per_band, self.subcarrier_spacing)


def default_band_plan() -> BandPlan:
    """16 bands of 65 subcarriers, 8 in (2, 2.19) GHz and 8 in (5, 5.19) GHz."""
    return make_band_plan(16)


def make_band_plan(num_bands: int = 16,
                   subcarriers: int = DEFAULT_SUBCARRIERS,
                   spacing: float = DEFAULT_SPACING) -> BandPlan:
    """Band plan with the first ``ceil(M/2)`` low-group and ``floor(M/2)``
    high-group carriers of the default layout."""
    if not 1 <= num_bands <= 2 * len(_LOW_GROUP_EXTRA):
        raise ValueError(f"num_bands must be in [1, {2 * len(_LOW_GROUP_EXTRA)}]")
    width = subcarriers - 1
    n_low = (num_bands + 1) // 2
    n_high = num_bands // 2
    low = [_LOW_GROUP_BASE + (i * width + _LOW_GROUP_EXTRA[i]) * spacing
           for i in range(n_low)]
    high = [_HIGH_GROUP_BASE + (i * width + _HIGH_GROUP_EXTRA[i]) * spacing
            for i in range(n_high)]
    return BandPlan(tuple(low + high), subcarriers, spacing)


def contiguous_band_plan(num_bands: int = 16, subcarriers: int = DEFAULT_SUBCARRIERS,
                         spacing: float = DEFAULT_SPACING) -> BandPlan:
    """Adjacent (N - 1) f_s channels from 2.01 and 5.01 GHz.

    Kept for comparison only: the squared carrier responses of this layout
    repeat in delay every 1 / (2 (N - 1) f_s), so handshake resolution
    cannot pin the time of flight down.
    """
    width = (subcarriers - 1) * spacing
    n_low = (num_bands + 1) // 2
    low = [_LOW_GROUP_BASE + i * width for i in range(n_low)]
    high = [_HIGH_GROUP_BASE + i * width for i in range(num_bands - n_low)]
    return BandPlan(tuple(low + high), subcarriers, spacing)


@dataclass(frozen=True, eq=False)
class Cir:
    """Sparse delay-domain channel ``sum_k c_k delta(tau - tau_k)``."""

    delays: np.ndarray
    gains: np.ndarray

    def __post_init__(self):
        delays = np.atleast_1d(np.asarray(self.delays, dtype=float))
        gains = np.atleast_1d(np.asarray(self.gains, dtype=complex))
        if delays.ndim != 1 or delays.shape != gains.shape:
            raise ValueError("delays and gains must be 1-D arrays of equal length")
        if delays.size < 1:
            raise ValueError("a CIR needs at least one tap")
        if np.any(np.diff(delays) <= 0):
            raise ValueError("delays must be strictly increasing")
        if delays[0] < 0:
            raise ValueError("delays must be non-negative")
        delays.flags.writeable = False
        gains.flags.writeable = False
        object.__setattr__(self, "delays", delays)
        object.__setattr__(self, "gains", gains)

    @property
    def sparsity(self) -> int:
        return self.delays.size

    @property
    def tof(self) -> float:
        return float(self.delays[0])

    @property
    def first_phase(self) -> float:
        return float(np.angle(self.gains[0]))

    def relative(self) -> "Cir":
        """Shift so the first tap sits at delay 0 with a real positive gain."""
        return Cir(self.delays - self.delays[0],
                   self.gains * np.exp(-1j * np.angle(self.gains[0])))

    def check_range(self, plan: BandPlan):
        if self.delays[-1] >= plan.delay_range:
            raise ValueError("CIR delays must lie in [0, 1/f_s)")


@dataclass(frozen=True, eq=False)
class DistortionParams:
    """Per-band timing offsets (seconds) and phase offsets (cycles)."""

    delta: np.ndarray
    phi: np.ndarray

    def __post_init__(self):
        delta = np.atleast_1d(np.asarray(self.delta, dtype=float))
        phi = np.atleast_1d(np.asarray(self.phi, dtype=float))
        if delta.shape != phi.shape or delta.ndim != 1:
            raise ValueError("delta and phi must be 1-D arrays of equal length")
        if np.any(delta < 0):
            raise ValueError("timing offsets must be non-negative")
        if np.any((phi < 0) | (phi >= 1)):
            raise ValueError("phase offsets must lie in [0, 1) cycles")
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "phi", phi)

    @property
    def num_bands(self) -> int:
        return self.delta.size

    @classmethod
    def zeros(cls, num_bands: int) -> "DistortionParams":
        return cls(np.zeros(num_bands), np.zeros(num_bands))

    def phase(self, plan: BandPlan) -> np.ndarray:
        """``M x N`` distortion phase ``-2 pi (delta_m n f_s + phi_m)``."""
        n_fs = plan.indices * plan.subcarrier_spacing
        return -2 * np.pi * (self.delta[:, None] * n_fs[None, :] + self.phi[:, None])


@dataclass(frozen=True, eq=False)
class CsiMatrix:
    """``M x N`` complex pilot observations tagged with their processing stage."""

    values: np.ndarray
    plan: BandPlan
    kind: str = "ideal"

    def __post_init__(self):
        if self.kind not in CSI_KINDS:
            raise ValueError(f"kind must be one of {CSI_KINDS}")
        values = np.asarray(self.values, dtype=complex)
        shape = (self.plan.num_bands, self.plan.subcarriers_per_band)
        if values.shape != shape:
            raise ValueError(f"CSI shape {values.shape} does not match band plan {shape}")
        object.__setattr__(self, "values", values)


@dataclass(frozen=True, eq=False)
class HandshakeSamples:
    """Zero-subcarrier observations at the transmitting and receiving AP."""

    y_tx: np.ndarray
    y_rx: np.ndarray

    def __post_init__(self):
        y_tx = np.atleast_1d(np.asarray(self.y_tx, dtype=complex))
        y_rx = np.atleast_1d(np.asarray(self.y_rx, dtype=complex))
        if y_tx.shape != y_rx.shape or y_tx.ndim != 1:
            raise ValueError("y_tx and y_rx must be 1-D arrays of equal length")
        object.__setattr__(self, "y_tx", y_tx)
        object.__setattr__(self, "y_rx", y_rx)

    @property
    def num_bands(self) -> int:
        return self.y_tx.size


@dataclass(frozen=True)
class NoiseModel:
    """Circularly-symmetric complex Gaussian noise of variance ``1/snr``."""

    snr: float

    def __post_init__(self):
        if not self.snr > 0:
            raise ValueError("snr must be positive")

    @classmethod
    def from_db(cls, snr_db: float) -> "NoiseModel":
        return cls(10.0 ** (snr_db / 10.0))

    def sample(self, rng: np.random.Generator, shape) -> np.ndarray:
        scale = np.sqrt(0.5 / self.snr)
        return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def complex_gaussian(rng: np.random.Generator, variance, size=None) -> np.ndarray:
    std = np.sqrt(np.asarray(variance, dtype=float) / 2.0)
    if size is None:
        size = std.shape
    return std * (rng.standard_normal(size) + 1j * rng.standard_normal(size))


def draw_cir(rng: np.random.Generator, K: int = 3, tau_max: float = 100.0 / SPEED_OF_LIGHT,
             variance_base: float = 4.0, plan: BandPlan | None = None) -> Cir:
    """Draw ``K`` uniform delays on ``[0, tau_max]`` with gains of variance
    ``variance_base ** -k`` (k = 1 for the earliest tap)."""
    if K < 1:
        raise ValueError("K must be at least 1")
    limit = (plan or default_band_plan()).delay_range
    if not 0 <= tau_max < limit:
        raise ValueError(f"tau_max must lie in [0, {limit}), got {tau_max}")
    if tau_max == 0 and K > 1:
        raise ValueError("tau_max = 0 admits a single tap only")
    delays = np.sort(rng.uniform(0.0, tau_max, size=K))
    while K > 1 and np.any(np.diff(delays) <= 0):
        delays = np.sort(rng.uniform(0.0, tau_max, size=K))
    variances = variance_base ** -np.arange(1, K + 1, dtype=float)
    gains = complex_gaussian(rng, variances)
    return Cir(delays, gains)


def _split(a):
    c = 134217729.0 * a  # 2**27 + 1
    hi = c - (c - a)
    return hi, a - hi


def product_cycles(a, b) -> np.ndarray:
    """Fractional part of ``a * b`` with the product's rounding error kept.

    ``f * tau`` is thousands of cycles at GHz carriers; dropping the
    rounding error of the product would cost about 1e-12 rad of phase.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    p = a * b
    ah, al = _split(a)
    bh, bl = _split(b)
    err = ((ah * bh - p) + ah * bl + al * bh) + al * bl
    return np.mod(np.mod(p, 1.0) + err, 1.0)


def cfr(cir: Cir, freqs: np.ndarray) -> np.ndarray:
    """Fourier transform of ``cir`` at arbitrary frequencies (any shape)."""
    freqs = np.asarray(freqs, dtype=float)
    phase = np.exp(-2j * np.pi * product_cycles(freqs[..., None], cir.delays))
    return phase @ cir.gains


def synth_cfr(cir: Cir, plan: BandPlan) -> CsiMatrix:
    cir.check_range(plan)
    return CsiMatrix(cfr(cir, plan.frequencies), plan, "ideal")


def apply_distortion(csi: CsiMatrix, distortion: DistortionParams,
                     noise: NoiseModel | None = None,
                     rng: np.random.Generator | None = None) -> CsiMatrix:
    """``y = exp(j psi) H + z`` with the per-band affine phase ``psi``."""
    plan = csi.plan
    if distortion.num_bands != plan.num_bands:
        raise ValueError("distortion parameters do not match the band count")
    y = np.exp(1j * distortion.phase(plan)) * csi.values
    if noise is not None:
        if rng is None:
            raise ValueError("a generator is required when noise is enabled")
        y = y + noise.sample(rng, y.shape)
    return CsiMatrix(y, plan, "distorted")


def zero_carrier_response(cir: Cir, plan: BandPlan) -> np.ndarray:
    return cfr(cir, plan.carrier_array)


def synth_handshake(cir: Cir, plan: BandPlan, distortion: DistortionParams,
                    noise: NoiseModel | None = None,
                    rng: np.random.Generator | None = None) -> HandshakeSamples:
    """Conjugate-phase zero-subcarrier pair seen by the two APs."""
    h0 = zero_carrier_response(cir, plan)
    rot = np.exp(2j * np.pi * distortion.phi)
    y_tx = rot * h0
    y_rx = np.conj(rot) * h0
    if noise is not None:
        if rng is None:
            raise ValueError("a generator is required when noise is enabled")
        y_tx = y_tx + noise.sample(rng, h0.shape)
        y_rx = y_rx + noise.sample(rng, h0.shape)
    return HandshakeSamples(y_tx, y_rx)


def shift_equivalent_params(cir: Cir, distortion: DistortionParams,
                            delta_bar: float, phi_bar: float,
                            plan: BandPlan | None = None) -> tuple[Cir, DistortionParams]:
    """Shift delays by ``-delta_bar`` and rotate gains by ``phi_bar`` cycles,
    moving both into the distortion so that the distorted CSI is unchanged.

    Delaying every tap by ``-delta_bar`` also rotates each band's carrier
    phase by ``f_m0 * delta_bar`` cycles; that term is folded into ``phi_m``.
    """
    plan = plan or default_band_plan()
    delays = cir.delays - delta_bar
    if delays[0] < 0 or delays[-1] >= plan.delay_range:
        raise ValueError("shifted delays leave [0, 1/f_s)")
    new_delta = distortion.delta + delta_bar
    if np.any(new_delta < 0) or np.any(new_delta >= plan.delay_range):
        raise ValueError("shifted timing offsets leave [0, 1/f_s)")
    gains = cir.gains * np.exp(2j * np.pi * phi_bar)
    carrier_cycles = np.mod(plan.carrier_array * delta_bar, 1.0)
    phi = np.mod(distortion.phi + phi_bar + carrier_cycles, 1.0)
    # mod can round up to exactly 1.0
    phi[phi >= 1.0] = 0.0
    return Cir(delays, gains), DistortionParams(new_delta, phi)


def per_band_parameters(cir: Cir, distortion: DistortionParams,
                        plan: BandPlan) -> tuple[np.ndarray, np.ndarray]:
    """Band-local delays ``tau_k + delta_m`` and gains
    ``c_k exp(-j 2 pi (f_m0 tau_k + phi_m))``, each ``M x K``."""
    delays = cir.delays[None, :] + distortion.delta[:, None]
    phase = plan.carrier_array[:, None] * cir.delays[None, :] + distortion.phi[:, None]
    gains = cir.gains[None, :] * np.exp(-2j * np.pi * phase)
    return delays, gains


@dataclass
class Scenario:
    """One simulated measurement: truth plus everything observed."""

    plan: BandPlan
    cir: Cir
    distortion: DistortionParams
    csi: CsiMatrix
    handshake: HandshakeSamples
    noise: NoiseModel | None = None
    extras: dict = field(default_factory=dict)
