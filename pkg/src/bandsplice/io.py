"""CSV interchange for CSI, channels, handshake samples and diagnostics.

Floats are written with 17 significant digits so that a write/read round
trip reproduces every value exactly. CSI files carry a ``.meta`` sidecar
with the processing stage and the band geometry.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .model import BandPlan, Cir, CsiMatrix, HandshakeSamples
from .splicer import RelativeCirEstimate

FLOAT_FORMAT = "%.17g"

CSI_HEADER = ("band", "subcarrier", "re", "im")
CIR_HEADER = ("delay_s", "gain_re", "gain_im")
HANDSHAKE_HEADER = ("band", "carrier_hz", "tx_re", "tx_im", "rx_re", "rx_im")
RELATIVE_CIR_HEADER = ("grid_index", "delay_s", "gain_re", "gain_im")
DUAL_HEADER = ("tau_s", "abs_Q")
COST_HEADER = ("tau_s", "theta_rad", "cost")


def fmt(value) -> str:
    if value is None:
        return ""
    return FLOAT_FORMAT % value


def _write_rows(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def _read_rows(path, header):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        got = tuple(next(reader))
        if got != tuple(header):
            raise ValueError(f"{path}: expected header {','.join(header)}, got {','.join(got)}")
        return [row for row in reader if row]


def meta_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta")


def write_meta(path, values: dict):
    with open(path, "w") as fh:
        for key, value in values.items():
            fh.write(f"{key}={value}\n")


def read_meta(path) -> dict:
    out = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out


def plan_meta(plan: BandPlan) -> dict:
    return {
        "carriers_hz": " ".join(fmt(c) for c in plan.carriers),
        "subcarriers": plan.subcarriers_per_band,
        "spacing_hz": fmt(plan.subcarrier_spacing),
    }


def plan_from_meta(meta: dict) -> BandPlan:
    carriers = tuple(float(c) for c in meta["carriers_hz"].split())
    return BandPlan(carriers, int(meta["subcarriers"]), float(meta["spacing_hz"]))


def write_csi(path, csi: CsiMatrix) -> Path:
    plan = csi.plan
    rows = [(m, n, fmt(v.real), fmt(v.imag))
            for m in range(plan.num_bands)
            for n, v in zip(plan.indices, csi.values[m])]
    path = _write_rows(path, CSI_HEADER, rows)
    write_meta(meta_path(path), {"kind": csi.kind, **plan_meta(plan)})
    return path


def read_csi(path, plan: BandPlan | None = None) -> CsiMatrix:
    """Read a CSI CSV. The band plan comes from ``plan`` or else the sidecar."""
    meta = read_meta(meta_path(path)) if meta_path(path).exists() else {}
    if plan is None:
        if "carriers_hz" not in meta:
            raise ValueError(f"{path}: no band plan given and no sidecar metadata")
        plan = plan_from_meta(meta)
    half = (plan.subcarriers_per_band - 1) // 2
    values = np.full((plan.num_bands, plan.subcarriers_per_band), np.nan + 0j)
    for band, sub, re, im in _read_rows(path, CSI_HEADER):
        values[int(band), int(sub) + half] = complex(float(re), float(im))
    if np.any(np.isnan(values)):
        raise ValueError(f"{path}: missing CSI samples")
    return CsiMatrix(values, plan, meta.get("kind", "distorted"))


def write_cir(path, cir: Cir) -> Path:
    rows = [(fmt(d), fmt(g.real), fmt(g.imag)) for d, g in zip(cir.delays, cir.gains)]
    return _write_rows(path, CIR_HEADER, rows)


def read_cir(path) -> Cir:
    rows = _read_rows(path, CIR_HEADER)
    delays = [float(r[0]) for r in rows]
    gains = [complex(float(r[1]), float(r[2])) for r in rows]
    return Cir(delays, gains)


def write_handshake(path, samples: HandshakeSamples, plan: BandPlan) -> Path:
    rows = [(m, fmt(plan.carriers[m]), fmt(tx.real), fmt(tx.imag), fmt(rx.real), fmt(rx.imag))
            for m, (tx, rx) in enumerate(zip(samples.y_tx, samples.y_rx))]
    return _write_rows(path, HANDSHAKE_HEADER, rows)


def read_handshake(path) -> tuple[HandshakeSamples, np.ndarray]:
    """Returns the samples and the carrier frequencies recorded alongside."""
    rows = sorted(_read_rows(path, HANDSHAKE_HEADER), key=lambda r: int(r[0]))
    carriers = np.array([float(r[1]) for r in rows])
    tx = [complex(float(r[2]), float(r[3])) for r in rows]
    rx = [complex(float(r[4]), float(r[5])) for r in rows]
    return HandshakeSamples(tx, rx), carriers


def write_relative_cir(path, estimate: RelativeCirEstimate) -> Path:
    est = estimate.sorted()
    rows = [(int(i), fmt(d), fmt(g.real), fmt(g.imag))
            for i, d, g in zip(est.indices, est.delays, est.tap_gains)]
    return _write_rows(path, RELATIVE_CIR_HEADER, rows)


def write_dual_polynomial(path, taus, modulus) -> Path:
    return _write_rows(path, DUAL_HEADER, [(fmt(t), fmt(a)) for t, a in zip(taus, modulus)])


def write_cost_surface(path, taus, thetas, cost, decimate: int = 64) -> Path:
    """Cost surface on every ``decimate``-th delay (all phases)."""
    rows = [(fmt(taus[j]), fmt(th), fmt(cost[j, l]))
            for j in range(0, len(taus), decimate)
            for l, th in enumerate(thetas)]
    return _write_rows(path, COST_HEADER, rows)
