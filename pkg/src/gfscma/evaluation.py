"""Activity detection error rate (ADER), sweeps, CSV output and SVG plots.

ADER of a frame is the normalized Hamming distance ``||delta - delta_hat||_0 / N_R``.
Over many frames, ``ader = (misses + false_alarms) / (N_R * frames)`` and the
reported ``miss_rate``/``false_alarm_rate`` use the same denominator, so they
add up to ``ader``.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .models import ModelBundle, decide
from .sim import ActivityModel, Scenario, generate_batch
from .streams import EVAL, Stream

log = logging.getLogger(__name__)

CSV_COLUMNS = ["model", "snr_db", "n_active", "frames", "ader", "miss_rate",
               "false_alarm_rate", "stderr", "seed"]


def ader(delta, delta_hat) -> float:
    """Mean over frames of ``||delta - delta_hat||_0 / N_R``."""
    d = np.asarray(delta)
    e = np.asarray(delta_hat)
    if d.shape != e.shape:
        raise ValueError(f"length mismatch: {d.shape} vs {e.shape}")
    if d.size == 0:
        raise ValueError("empty activity vectors")
    return float(np.mean(d != e))


@dataclass
class AderReport:
    model: str
    snr_db: float
    n_active: int
    ader: float
    miss_rate: float
    false_alarm_rate: float
    frames: int
    seed: int
    N_R: int
    warnings: list[str] = field(default_factory=list)

    @property
    def stderr(self) -> float:
        a = self.ader
        return math.sqrt(a * (1 - a) / (self.frames * self.N_R))

    def row(self) -> list[str]:
        return [self.model, f"{self.snr_db:g}", str(self.n_active), str(self.frames),
                f"{self.ader:.9g}", f"{self.miss_rate:.9g}", f"{self.false_alarm_rate:.9g}",
                f"{self.stderr:.9g}", str(self.seed)]


def ader_report(delta, delta_hat, model: str = "", snr_db: float = float("nan"), n_active: int = -1,
                seed: int = 0) -> AderReport:
    d = np.asarray(delta).astype(bool)
    e = np.asarray(delta_hat).astype(bool)
    if d.shape != e.shape:
        raise ValueError(f"length mismatch: {d.shape} vs {e.shape}")
    d2 = d.reshape(-1, d.shape[-1])
    e2 = e.reshape(-1, e.shape[-1])
    frames, N_R = d2.shape
    if frames == 0:
        raise ValueError("need at least one frame")
    misses = int(np.sum(d2 & ~e2))
    fas = int(np.sum(~d2 & e2))
    tot = frames * N_R
    return AderReport(model, snr_db, n_active, (misses + fas) / tot, misses / tot, fas / tot,
                      frames, seed, N_R)


def oracle_correlator(y_p, preambles: np.ndarray, gamma_c: float) -> np.ndarray:
    """Matched-filter detector: CTU ``n`` active iff ``|<p_n, y_p>| > gamma_c``.

    ``preambles`` has one unit-energy preamble per CTU (rows).
    """
    y = np.asarray(y_p)
    stat = np.abs(y @ np.asarray(preambles).conj().T)
    return (stat > gamma_c).astype(np.uint8)


# ---------------------------------------------------------------- sweeps


@dataclass(frozen=True)
class SweepSpec:
    """``axis`` is ``'snr_db'`` or ``'n_active'``; the other quantity is held fixed."""

    axis: str
    points: tuple
    snr_db: float = 20.0
    n_active: int = 6
    frames: int = 10_000
    seed: int = 0
    batch: int = 2000

    def __post_init__(self):
        if self.axis not in ("snr_db", "n_active"):
            raise ValueError(f"sweep axis must be 'snr_db' or 'n_active', got {self.axis!r}")
        if not self.points:
            raise ValueError("sweep needs at least one point")
        if self.frames <= 0:
            raise ValueError("frames per point must be positive")
        if self.frames < 10_000:
            log.debug("fewer than 1e4 frames per point; ADER resolution is coarse")

    def point(self, i: int) -> tuple[float, int]:
        v = self.points[i]
        if self.axis == "snr_db":
            return float(v), int(self.n_active)
        return float(self.snr_db), int(v)


@dataclass(frozen=True)
class EvalTarget:
    """A detector plus the link it is evaluated on. ``bundle=None`` means the
    matched-filter correlator with threshold ``gamma_c``."""

    bundle: ModelBundle | None
    scenario: Scenario
    gamma_c: float = 0.5


def eval_frames(scenario: Scenario, snr_db: float, n_active: int, frames: int, seed: int, point: int):
    cfg = scenario.config(snr_db, ActivityModel.fixed(n_active), seed)
    return generate_batch(cfg, scenario.cmap, scenario.pset, scenario.cbs, frames,
                          Stream(seed).child(EVAL, "sweep", point))


def evaluate_point(target: EvalTarget, label: str, spec: SweepSpec, i: int) -> AderReport:
    snr, n_a = spec.point(i)
    batch = eval_frames(target.scenario, snr, n_a, spec.frames, spec.seed, i)
    warnings = []
    if target.bundle is None:
        P = target.scenario.cmap.preamble_matrix(target.scenario.pset)
        dhat = oracle_correlator(batch.y_p, P, target.gamma_c)
    else:
        b = target.bundle
        if b.stage not in ("pretrained", "joint", "trained"):
            msg = f"{label}: model is untrained (stage={b.stage!r})"
            log.warning(msg)
            warnings.append(msg)
        eta = b.predict(batch.x_p, batch.x_d if b.kind != "paudn" else None, batch=spec.batch)
        dhat = decide(eta, b.audn.threshold)
    rep = ader_report(batch.delta, dhat, label, snr, n_a, spec.seed)
    rep.warnings.extend(warnings)
    return rep


def sweep(spec: SweepSpec, targets: Mapping[str, EvalTarget]) -> list[AderReport]:
    """Evaluate every target at every point. Frames for point ``i`` come from the
    same keyed stream for all targets, so comparisons are paired."""
    reports = []
    for label, target in targets.items():
        for i in range(len(spec.points)):
            rep = evaluate_point(target, label, spec, i)
            log.info("%s snr=%g N_a=%d ader=%.5f", label, rep.snr_db, rep.n_active, rep.ader)
            reports.append(rep)
    return reports


def reports_csv(reports: Sequence[AderReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in reports:
        w.writerow(r.row())
    return buf.getvalue()


def parse_csv(text: str) -> list[dict]:
    rows = list(csv.DictReader(io.StringIO(text)))
    if not rows:
        raise ValueError("sweep CSV has no data rows")
    missing = set(CSV_COLUMNS) - set(rows[0])
    if missing:
        raise ValueError(f"sweep CSV is missing columns {sorted(missing)}")
    out = []
    for k, r in enumerate(rows, 2):
        try:
            out.append({"model": r["model"], "snr_db": float(r["snr_db"]),
                        "n_active": int(r["n_active"]), "frames": int(r["frames"]),
                        "ader": float(r["ader"]), "miss_rate": float(r["miss_rate"]),
                        "false_alarm_rate": float(r["false_alarm_rate"]),
                        "stderr": float(r["stderr"]), "seed": int(r["seed"])})
        except (TypeError, ValueError) as exc:
            raise ValueError(f"malformed sweep CSV line {k}: {exc}") from None
    return out


# ---------------------------------------------------------------- SVG

_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"]
ADER_FLOOR = 1e-5


def emit_plot(csv_text: str, title: str = "") -> str:
    """Line chart of ADER (log scale) against the varying axis, one polyline per series.

    A series is a model label, split further by the fixed quantity when the CSV
    mixes several values of it. ADER values of zero are drawn at 1e-5.
    """
    rows = parse_csv(csv_text)
    snrs = {r["snr_db"] for r in rows}
    nas = {r["n_active"] for r in rows}
    by_model = {}
    for r in rows:
        by_model.setdefault(r["model"], []).append(r)
    axis = "snr_db"
    for rs in by_model.values():
        if len({r["n_active"] for r in rs}) > len({r["snr_db"] for r in rs}):
            axis = "n_active"
    if len(snrs) == 1 and len(nas) > 1:
        axis = "n_active"
    other = "n_active" if axis == "snr_db" else "snr_db"
    series: dict[str, list[tuple[float, float]]] = {}
    for r in rows:
        fixed = {r2[other] for r2 in by_model[r["model"]]}
        name = r["model"] if len(fixed) == 1 else f"{r['model']} ({other}={r[other]:g})"
        series.setdefault(name, []).append((float(r[axis]), max(r["ader"], ADER_FLOOR)))
    for name, pts in series.items():
        if not pts:
            raise ValueError(f"series {name!r} is empty")
        pts.sort()

    W, H, ml, mr, mt, mb = 640, 420, 70, 170, 40, 50
    xs = [x for pts in series.values() for x, _ in pts]
    ys = [math.log10(y) for pts in series.values() for _, y in pts]
    x0, x1 = min(xs), max(xs)
    if x1 == x0:
        x0, x1 = x0 - 1, x1 + 1
    y0, y1 = math.floor(min(ys)), math.ceil(max(ys))
    if y1 == y0:
        y1 = y0 + 1

    def px(x):
        return ml + (x - x0) / (x1 - x0) * (W - ml - mr)

    def py(ly):
        return mt + (y1 - ly) / (y1 - y0) * (H - mt - mb)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
           f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>',
           f'<rect x="{ml}" y="{mt}" width="{W - ml - mr}" height="{H - mt - mb}" fill="none" stroke="black"/>']
    if title:
        out.append(f'<text x="{W / 2:.1f}" y="22" text-anchor="middle" font-size="14">{_esc(title)}</text>')
    for e in range(y0, y1 + 1):
        y = py(e)
        out.append(f'<line x1="{ml}" y1="{y:.2f}" x2="{W - mr}" y2="{y:.2f}" stroke="#dddddd"/>')
        out.append(f'<text x="{ml - 6}" y="{y + 4:.2f}" text-anchor="end" font-size="11">1e{e}</text>')
    for x in sorted(set(xs)):
        out.append(f'<text x="{px(x):.2f}" y="{H - mb + 16}" text-anchor="middle" font-size="11">{x:g}</text>')
    xlabel = "SNR (dB)" if axis == "snr_db" else "number of active users N_a"
    out.append(f'<text x="{(ml + W - mr) / 2:.1f}" y="{H - 10}" text-anchor="middle" font-size="12">{xlabel}</text>')
    out.append(f'<text x="16" y="{(mt + H - mb) / 2:.1f}" text-anchor="middle" font-size="12" '
               f'transform="rotate(-90 16 {(mt + H - mb) / 2:.1f})">ADER</text>')
    for k, (name, pts) in enumerate(series.items()):
        color = _COLORS[k % len(_COLORS)]
        coords = " ".join(f"{px(x):.2f},{py(math.log10(y)):.2f}" for x, y in pts)
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{coords}"/>')
        ly = mt + 14 + 18 * k
        out.append(f'<line x1="{W - mr + 10}" y1="{ly}" x2="{W - mr + 30}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{W - mr + 34}" y="{ly + 4}" font-size="11">{_esc(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
