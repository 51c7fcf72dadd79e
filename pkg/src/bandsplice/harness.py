"""Seeded Monte-Carlo driver comparing the spliced estimator with the baseline.

Every trial draws its own channel, distortion and noise from generators
keyed by ``(seed, trial, stream)``, so any trial can be rerun in isolation
and the results do not depend on execution order or worker count.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from functools import partial
from pathlib import Path

import numpy as np

from . import io
from .chronos import chronos_tof
from .cleaner import clean_all
from .handshake import AmbiguityGrid, ranging_error, resolve, squared_cfr
from .model import (SPEED_OF_LIGHT, Cir, DistortionParams, NoiseModel, Scenario,
                    apply_distortion, draw_cir, make_band_plan, synth_cfr,
                    synth_handshake, zero_carrier_response)
from .splicer import build_dictionary, estimate_relative_cir

log = logging.getLogger(__name__)

RESULTS_HEADER = ("trial", "true_tof_s", "prop_tof_s", "prop_err_m",
                  "chronos_tof_s", "chronos_err_m", "flags")
CDF_HEADER = ("error_m", "cdf")
METHODS = ("proposed", "chronos")
PERCENTILES = (50, 90, 95)
UNDEFINED = "NA"

# generator stream ids
_CHANNEL, _DISTORTION, _CSI_NOISE, _HANDSHAKE_NOISE = range(4)

# Regularizer for noiseless runs. Weaker regularization splits paths closer
# than one band's resolution into spurious atoms; this merges them instead.
NOISELESS_LAMBDA_SNR_DB = 20.0


@dataclass(frozen=True)
class ExperimentConfig:
    trials: int = 200
    snr_db: float = 20.0
    K: int = 3
    d_max: float = 100.0
    variance_base: float = 4.0
    delta_max: float = 960e-9
    bands: int = 16
    subcarriers: int = 65
    spacing: float = 312.5e3
    grid: int | None = None
    baseline_grid: int | None = None
    tau_grid: int = 65536
    theta_grid: int = 64
    seed: int = 0
    workers: int = 1
    noise: bool = True
    distortion: bool = True
    snap_to_grids: bool = False
    lambda_snr_db: float | None = None
    admm_tol: float = 1e-6
    threshold: float = 0.1

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if not math.isfinite(self.snr_db):
            raise ValueError("snr_db must be finite")
        if self.K < 1:
            raise ValueError("K must be at least 1")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")
        limit = 1.0 / self.spacing
        if not 0 <= self.delta_max < limit:
            raise ValueError(f"delta_max must lie in [0, {limit})")
        if not 0 < self.tau_max < limit:
            raise ValueError("d_max puts path delays outside [0, 1/f_s)")

    @property
    def tau_max(self) -> float:
        return self.d_max / SPEED_OF_LIGHT

    @property
    def dictionary_size(self) -> int:
        return self.grid or 2 * self.bands * self.subcarriers

    @property
    def baseline_size(self) -> int:
        return self.baseline_grid or 32 * self.bands

    @property
    def ambiguity_grid(self) -> AmbiguityGrid:
        return AmbiguityGrid(self.tau_grid, self.theta_grid)

    @property
    def noise_model(self) -> NoiseModel:
        return NoiseModel.from_db(self.snr_db)

    @property
    def lambda_snr(self) -> float:
        """SNR used for the denoiser's regularizer."""
        if self.lambda_snr_db is not None:
            return 10.0 ** (self.lambda_snr_db / 10.0)
        if self.noise:
            return self.noise_model.snr
        return 10.0 ** (NOISELESS_LAMBDA_SNR_DB / 10.0)

    def plan(self):
        return make_band_plan(self.bands, self.subcarriers, self.spacing)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_strings(cls, values: dict) -> "ExperimentConfig":
        """Build from string values keyed by field name (dashes allowed)."""
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            name = key.replace("-", "_")
            if name not in types:
                raise ValueError(f"unknown config key {key!r}")
            kwargs[name] = _parse_value(types[name], raw)
        return cls(**kwargs)


def _parse_value(type_name: str, raw):
    if not isinstance(raw, str):
        return raw
    raw = raw.strip()
    if "None" in type_name and raw.lower() in ("", "none"):
        return None
    if type_name.startswith("bool"):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if type_name.startswith("int"):
        return int(raw)
    return float(raw)


def load_config_file(path) -> dict:
    """Flat ``key=value`` file; blank lines and ``#`` comments ignored."""
    return io.read_meta(path)


@dataclass
class TrialRecord:
    trial: int
    true_tof: float
    prop_tof: float | None = None
    prop_err: float | None = None
    chronos_tof: float | None = None
    chronos_err: float | None = None
    band_counts: tuple[int, ...] = ()
    flags: tuple[str, ...] = ()

    @property
    def proposed_failed(self) -> bool:
        return self.prop_err is None

    @property
    def chronos_failed(self) -> bool:
        return self.chronos_err is None

    def csv_row(self) -> tuple[str, ...]:
        return (str(self.trial), io.fmt(self.true_tof), io.fmt(self.prop_tof),
                io.fmt(self.prop_err), io.fmt(self.chronos_tof), io.fmt(self.chronos_err),
                ";".join(self.flags))


def trial_rng(seed: int, trial: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, trial, stream])))


def _snap(cir: Cir, config: ExperimentConfig, plan) -> Cir:
    """Put every delay on the dictionary grid and the first one also on the
    ambiguity grid."""
    g, j = config.dictionary_size, config.tau_grid
    common = math.gcd(g, j)
    fs = plan.subcarrier_spacing
    first = (j // common) * int(np.floor(cir.delays[0] * common * fs))
    tau1 = first / (j * fs)
    steps = np.round((cir.delays - cir.delays[0]) * g * fs).astype(int)
    for k in range(1, steps.size):
        # keep snapped taps distinct
        steps[k] = max(steps[k], steps[k - 1] + 1)
    delays = tau1 + steps / (g * fs)
    delays[0] = tau1
    return Cir(delays, cir.gains)


def simulate_trial(config: ExperimentConfig, trial: int) -> Scenario:
    plan = config.plan()
    cir = draw_cir(trial_rng(config.seed, trial, _CHANNEL), config.K, config.tau_max,
                   config.variance_base, plan)
    if config.snap_to_grids:
        cir = _snap(cir, config, plan)
    if config.distortion:
        drng = trial_rng(config.seed, trial, _DISTORTION)
        distortion = DistortionParams(drng.uniform(0.0, config.delta_max, plan.num_bands),
                                      drng.uniform(0.0, 1.0, plan.num_bands))
    else:
        distortion = DistortionParams.zeros(plan.num_bands)
    noise = config.noise_model if config.noise else None
    csi = apply_distortion(synth_cfr(cir, plan), distortion, noise,
                           trial_rng(config.seed, trial, _CSI_NOISE))
    hs = synth_handshake(cir, plan, distortion, noise,
                         trial_rng(config.seed, trial, _HANDSHAKE_NOISE))
    return Scenario(plan, cir, distortion, csi, hs, noise)


def run_trial(config: ExperimentConfig, trial: int) -> TrialRecord:
    """Simulate trial ``trial`` and run both estimators on it.

    Stage failures become flags; the affected error is left undefined.
    """
    sc = simulate_trial(config, trial)
    plan = sc.plan
    record = TrialRecord(trial, sc.cir.tof)
    flags = []
    q = squared_cfr(sc.handshake)

    stage = "clean"
    try:
        cleaned = clean_all(sc.csi, config.lambda_snr, tol=config.admm_tol)
        record.band_counts = tuple(int(k) for k in cleaned.counts)
        if not np.all(cleaned.usable):
            flags.append("unusable_bands=" + "|".join(map(str, cleaned.unusable_bands)))
        slow = [m for m, est in enumerate(cleaned.estimates) if not est.denoise.converged]
        if slow:
            flags.append("unconverged_bands=" + "|".join(map(str, slow)))
        stage = "omp"
        h0 = estimate_relative_cir(cleaned, config.K,
                                   build_dictionary(plan, config.dictionary_size))
        stage = "resolve"
        resolved = resolve(h0, q, plan, config.ambiguity_grid)
        record.prop_tof = resolved.tof
        record.prop_err = ranging_error(sc.cir.tof, resolved.tof)
    except Exception as exc:  # noqa: BLE001 - failures are data here
        flags.append(f"proposed_failed:{stage}")
        log.debug("trial %d: proposed method failed at %s: %s", trial, stage, exc)

    try:
        eps = float(np.linalg.norm(q - zero_carrier_response(sc.cir, plan) ** 2))
        tof, _ = chronos_tof(sc.handshake, plan, config.baseline_size, eps,
                             threshold=config.threshold)
        record.chronos_tof = tof
        record.chronos_err = ranging_error(sc.cir.tof, tof)
    except Exception as exc:  # noqa: BLE001
        flags.append("chronos_failed")
        log.debug("trial %d: baseline failed: %s", trial, exc)

    record.flags = tuple(flags)
    log.info("trial %d: proposed %s m, chronos %s m%s", trial,
             _show(record.prop_err), _show(record.chronos_err),
             f" [{';'.join(flags)}]" if flags else "")
    return record


def _show(value):
    return UNDEFINED if value is None else f"{value:.4g}"


def nearest_rank(values, p: float) -> float | None:
    """Nearest-rank percentile: the ``ceil(p/100 * n)``-th smallest value."""
    values = np.sort(np.asarray(values, dtype=float))
    if values.size == 0:
        return None
    rank = max(1, math.ceil(p / 100.0 * values.size))
    return float(values[rank - 1])


@dataclass
class MethodSummary:
    method: str
    scope: str
    count: int
    failed: int
    percentiles: dict = field(default_factory=dict)

    @property
    def defined(self) -> bool:
        return all(v is not None for v in self.percentiles.values())


def summarize(records: list[TrialRecord]) -> list[MethodSummary]:
    """Percentiles per method, excluding failed trials and (separately)
    counting them as infinitely bad."""
    out = []
    for method in METHODS:
        errs = [getattr(r, "prop_err" if method == "proposed" else "chronos_err") for r in records]
        ok = [e for e in errs if e is not None]
        failed = len(errs) - len(ok)
        inclusive = ok + [math.inf] * failed
        for scope, vals in (("exclusive", ok), ("inclusive", inclusive if ok else [])):
            out.append(MethodSummary(method, scope, len(vals), failed,
                                     {p: nearest_rank(vals, p) for p in PERCENTILES}))
    return out


def error_cdf(records: list[TrialRecord], method: str) -> tuple[np.ndarray, np.ndarray]:
    attr = "prop_err" if method == "proposed" else "chronos_err"
    errs = np.sort([getattr(r, attr) for r in records if getattr(r, attr) is not None])
    return errs, np.arange(1, errs.size + 1) / max(errs.size, 1)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    records: list[TrialRecord]
    summary: list[MethodSummary]

    @property
    def complete(self) -> bool:
        """Every method has at least one usable result."""
        return all(s.defined for s in self.summary if s.scope == "exclusive")

    def lookup(self, method: str, scope: str = "exclusive") -> MethodSummary:
        return next(s for s in self.summary if s.method == method and s.scope == scope)


def run_experiment(config: ExperimentConfig, out_dir=None) -> ExperimentResult:
    """Run all trials, in parallel if ``config.workers > 1``, and optionally
    write ``results.csv``, ``cdf_<method>.csv`` and ``summary.txt``."""
    job = partial(run_trial, config)
    ids = range(config.trials)
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            records = list(pool.map(job, ids))
    else:
        records = [job(t) for t in ids]
    records.sort(key=lambda r: r.trial)
    result = ExperimentResult(config, records, summarize(records))
    if out_dir is not None:
        write_outputs(result, out_dir)
    return result


def write_outputs(result: ExperimentResult, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    io._write_rows(out / "results.csv", RESULTS_HEADER, [r.csv_row() for r in result.records])
    for method in METHODS:
        errs, cdf = error_cdf(result.records, method)
        io._write_rows(out / f"cdf_{method}.csv", CDF_HEADER,
                       [(io.fmt(e), io.fmt(c)) for e, c in zip(errs, cdf)])
    (out / "summary.txt").write_text(format_summary(result))
    return out


def format_summary(result: ExperimentResult, timestamp: datetime | None = None) -> str:
    ts = (timestamp or datetime.now(timezone.utc)).isoformat(timespec="seconds")
    cfg = result.config
    lines = [f"# generated {ts}",
             "# " + " ".join(f"{f.name}={getattr(cfg, f.name)}" for f in dataclasses.fields(cfg)),
             "method,scope,count,failed," + ",".join(f"p{p}_m" for p in PERCENTILES)]
    for s in result.summary:
        vals = [UNDEFINED if s.percentiles[p] is None else io.fmt(s.percentiles[p])
                for p in PERCENTILES]
        lines.append(f"{s.method},{s.scope},{s.count},{s.failed}," + ",".join(vals))
    return "\n".join(lines) + "\n"
