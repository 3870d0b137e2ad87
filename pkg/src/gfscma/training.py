"""Progressive training: UAEN pre-training, then joint UAEN + detector training.

An epoch is one pass over a pool of activity vectors drawn once per stage.
Channels, data bits and noise are drawn fresh for every (epoch, batch) from
keyed streams, so a fixed seed reproduces the whole run.
"""

from __future__ import annotations

import configparser
import contextlib
import logging
import math
import queue
import threading
import time
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Iterator

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .models import CONVENTIONAL, PAUDN, PROPOSED, ModelBundle, build_bundle
from .neural import functional as F
from .neural.engine import no_grad
from .neural.optim import Adam
from .sim import ActivityModel, Scenario, TransmissionBatch, draw_activity, generate_frames
from .streams import EVAL, TRAIN, Stream

log = logging.getLogger(__name__)

PRESETS = ("paper", "desk")


@dataclass(frozen=True)
class TrainConfig:
    lr_pretrain: float = 0.001
    lr_joint: float = 0.0001
    epochs: int = 50
    batch: int = 1000
    n_pretrain_samples: int = 500_000
    n_joint_samples: int = 5_000_000
    snr_db_train: float = 20.0
    seed: int = 0
    n_active_min: int = 1
    n_active_max: int = 6
    workers: int = 1

    def __post_init__(self):
        for f in ("lr_pretrain", "lr_joint", "epochs", "batch", "n_pretrain_samples",
                  "n_joint_samples", "workers"):
            if not getattr(self, f) > 0:
                raise ValueError(f"{f} must be positive, got {getattr(self, f)}")
        if self.batch < 2:
            raise ValueError("batch normalization needs batch >= 2")
        if not 0 <= self.n_active_min <= self.n_active_max:
            raise ValueError("invalid active-user range")

    def steps(self, n_samples: int) -> int:
        return self.epochs * math.ceil(n_samples / self.batch)

    def replace(self, **kw) -> "TrainConfig":
        d = asdict(self)
        d.update(kw)
        return TrainConfig(**d)


def load_train_config(source: str | Path = "desk", **overrides) -> TrainConfig:
    """Read a preset name (``paper``/``desk``) or an INI file with a ``[train]`` section."""
    if str(source) in PRESETS:
        text = (resources.files("gfscma") / "data" / f"{source}.ini").read_text(encoding="utf-8")
    else:
        text = Path(source).read_text(encoding="utf-8")
    cp = configparser.ConfigParser()
    cp.read_string(text)
    if "train" not in cp:
        raise ValueError("training config needs a [train] section")
    types = {f.name: f.type for f in fields(TrainConfig)}
    kw = {}
    for key, val in cp["train"].items():
        if key not in types:
            raise ValueError(f"unknown training config key {key!r}")
        kw[key] = float(val) if types[key] in (float, "float") else int(float(val))
    kw.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig(**kw)


def dumps_train_config(cfg: TrainConfig) -> str:
    lines = ["[train]"] + [f"{k} = {v!r}" for k, v in asdict(cfg).items()]
    return "\n".join(lines) + "\n"


@dataclass
class TrainReport:
    kind: str
    stages: list[str] = field(default_factory=list)
    pretrain_losses: list[float] = field(default_factory=list)
    joint_losses: list[float] = field(default_factory=list)
    initial_pretrain_loss: float | None = None
    initial_joint_loss: float | None = None
    steps: dict = field(default_factory=dict)
    grad_first_layer: dict = field(default_factory=dict)
    uaen_grad_reached: dict = field(default_factory=dict)
    wall_clock: float = 0.0
    checkpoint_id: str | None = None
    config: dict = field(default_factory=dict)

    def to_dict(self, include_timing: bool = True) -> dict:
        d = asdict(self)
        if not include_timing:
            d.pop("wall_clock")
        return d

    def merge(self, other: "TrainReport") -> "TrainReport":
        out = TrainReport(self.kind, self.stages + other.stages,
                          self.pretrain_losses + other.pretrain_losses,
                          self.joint_losses + other.joint_losses,
                          self.initial_pretrain_loss if self.initial_pretrain_loss is not None
                          else other.initial_pretrain_loss,
                          self.initial_joint_loss if self.initial_joint_loss is not None
                          else other.initial_joint_loss,
                          {**self.steps, **other.steps},
                          {**self.grad_first_layer, **other.grad_first_layer},
                          {**self.uaen_grad_reached, **other.uaen_grad_reached},
                          self.wall_clock + other.wall_clock,
                          other.checkpoint_id or self.checkpoint_id,
                          {**self.config, **other.config})
        return out


# ---------------------------------------------------------------- data


class TrainingData:
    """Online batches for one training stage (``'pretrain'`` or ``'joint'``)."""

    def __init__(self, scenario: Scenario, cfg: TrainConfig, stage: str, n_samples: int | None = None,
                 prefetch: int = 0):
        self.scenario = scenario
        self.cfg = cfg
        self.stage = stage
        if n_samples is None:
            n_samples = cfg.n_pretrain_samples if stage == "pretrain" else cfg.n_joint_samples
        self.n_samples = n_samples
        self.prefetch = prefetch
        self.stream = Stream(cfg.seed).child(TRAIN, stage)
        self.sim_cfg = scenario.config(
            cfg.snr_db_train, ActivityModel.uniform(cfg.n_active_min, cfg.n_active_max), cfg.seed)
        self.pool = draw_activity(self.sim_cfg, self.stream.child("activity").generator(), size=n_samples)

    @property
    def steps_per_epoch(self) -> int:
        return math.ceil(self.n_samples / self.cfg.batch)

    def _batches(self, epoch: int) -> Iterator[TransmissionBatch]:
        perm = self.stream.child("perm", epoch).generator().permutation(self.n_samples)
        sc = self.scenario
        for b in range(self.steps_per_epoch):
            idx = perm[b * self.cfg.batch:(b + 1) * self.cfg.batch]
            if idx.size < 2:
                continue
            yield generate_frames(self.sim_cfg, sc.cmap, sc.pset, sc.cbs, self.pool[idx],
                                  self.stream.child("epoch", epoch, "batch", b),
                                  workers=self.cfg.workers)

    def epoch(self, epoch: int) -> Iterator[TransmissionBatch]:
        it = self._batches(epoch)
        return _prefetched(it, self.prefetch) if self.prefetch > 0 else it


def _prefetched(it, depth: int):
    """Single background producer; consumption order equals production order."""
    q: queue.Queue = queue.Queue(maxsize=depth)
    done = object()

    def produce():
        try:
            for item in it:
                q.put(item)
        finally:
            q.put(done)

    threading.Thread(target=produce, daemon=True).start()
    while True:
        item = q.get()
        if item is done:
            return
        yield item


def heldout_batch(scenario: Scenario, cfg: TrainConfig, n: int = 2000) -> TransmissionBatch:
    """Evaluation-domain batch at the training SNR and activity range."""
    sim_cfg = scenario.config(cfg.snr_db_train, ActivityModel.uniform(cfg.n_active_min, cfg.n_active_max),
                              cfg.seed)
    from .sim import generate_batch

    return generate_batch(sim_cfg, scenario.cmap, scenario.pset, scenario.cbs, n,
                          Stream(cfg.seed).child(EVAL, "heldout"))


# ---------------------------------------------------------------- loops


@contextlib.contextmanager
def frozen(params):
    """Temporarily exclude parameters from gradient computation."""
    prev = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p, r in zip(params, prev):
            p.requires_grad = r


def _bce_value(bundle: ModelBundle, batch: TransmissionBatch, uaen_only: bool) -> float:
    # batch statistics, but leave the running averages untouched
    saved = {k: dict(v) for k, v in bundle.buffers.items()}
    with no_grad():
        q = bundle.uaen_forward(batch.x_d, True) if uaen_only else bundle.forward(batch.x_p, batch.x_d, True)
    for k, v in saved.items():
        bundle.buffers[k].update(v)
    return F.logistic_loss_value(q.data, batch.labels)


def _loop(bundle: ModelBundle, params, lr: float, data: TrainingData, epochs: int, uaen_only: bool,
          report: TrainReport, label: str, watch_uaen: bool) -> list[float]:
    opt = Adam(params, lr=lr)
    losses = []
    first = bundle.params.get("uaen.conv1.kernels")
    uaen = bundle.component_params("uaen") if watch_uaen else []
    reached = {p.name: False for p in uaen}
    diag = []
    for e in range(epochs):
        total, count, gsum = 0.0, 0, 0.0
        for batch in data.epoch(e):
            for p in bundle.params.values():
                p.zero_grad()
            if uaen_only:
                q = bundle.uaen_forward(batch.x_d, training=True)
            else:
                q = bundle.forward(batch.x_p, batch.x_d, training=True)
            loss = F.bce_loss(q, batch.labels)
            loss.backward()
            if first is not None and first.grad is not None:
                gsum += float(np.mean(np.abs(first.grad)))
            if e == 0:
                for p in uaen:
                    if p.grad is not None and np.any(p.grad != 0):
                        reached[p.name] = True
            opt.step()
            total += float(loss.data) * len(batch)
            count += len(batch)
        losses.append(total / count)
        diag.append(gsum / max(1, data.steps_per_epoch))
        log.info("%s %s epoch %d/%d loss %.5f", bundle.kind, label, e + 1, epochs, losses[-1])
    report.steps[label] = opt.t
    if first is not None and first.requires_grad:
        report.grad_first_layer[label] = diag
    if watch_uaen:
        report.uaen_grad_reached = reached
    for p in bundle.params.values():
        p.zero_grad()
    return losses


def pretrain_uaen(bundle: ModelBundle, cfg: TrainConfig, data: TrainingData) -> TrainReport:
    """Fit only the UAEN so that its priors match the activity vector."""
    if bundle.kind != PROPOSED:
        raise ValueError(f"only {PROPOSED!r} models have a UAEN to pre-train (got {bundle.kind!r})")
    t0 = time.perf_counter()
    report = TrainReport(bundle.kind, ["pretrain"], config=asdict(cfg))
    first = next(iter(data.epoch(0)))
    report.initial_pretrain_loss = _bce_value(bundle, first, uaen_only=True)
    report.pretrain_losses = _loop(bundle, bundle.component_params("uaen"), cfg.lr_pretrain, data,
                                   cfg.epochs, True, report, "pretrain", False)
    bundle.pretrained = True
    bundle.stage = "pretrained"
    report.wall_clock = time.perf_counter() - t0
    return report


def joint_train(bundle: ModelBundle, cfg: TrainConfig, data: TrainingData, force: bool = False,
                freeze_uaen: bool = False) -> TrainReport:
    """Train UAEN and detector together on the final detection loss.

    ``freeze_uaen`` keeps the UAEN fixed (control experiment); ``force`` allows
    joint training without a pre-trained UAEN.
    """
    if bundle.kind != PROPOSED:
        raise ValueError(f"joint training applies to {PROPOSED!r} models (got {bundle.kind!r})")
    if not bundle.pretrained and not (force or freeze_uaen):
        raise ValueError("UAEN has not been pre-trained; pass force=True to train jointly anyway")
    t0 = time.perf_counter()
    label = "joint_frozen_uaen" if freeze_uaen else "joint"
    report = TrainReport(bundle.kind, [label], config=asdict(cfg))
    first = next(iter(data.epoch(0)))
    report.initial_joint_loss = _bce_value(bundle, first, uaen_only=False)
    if freeze_uaen:
        with frozen(bundle.component_params("uaen")):
            losses = _loop(bundle, bundle.component_params("audn"), cfg.lr_joint, data, cfg.epochs,
                           False, report, label, False)
    else:
        losses = _loop(bundle, list(bundle.params.values()), cfg.lr_joint, data, cfg.epochs,
                       False, report, label, True)
    report.joint_losses = losses
    bundle.stage = "joint"
    report.wall_clock = time.perf_counter() - t0
    return report


def train_baselines(kind: str, cfg: TrainConfig, data: TrainingData, bundle: ModelBundle | None = None,
                    model_seed: int | None = None) -> tuple[ModelBundle, TrainReport]:
    """Single-stage training of a baseline on the detection loss at ``lr_joint``."""
    if kind not in (PAUDN, CONVENTIONAL):
        raise ValueError(f"baseline kind must be {PAUDN!r} or {CONVENTIONAL!r}, got {kind!r}")
    sc = data.scenario
    if bundle is None:
        bundle = build_bundle(kind, sc.cmap.N_R, sc.pset.n_zc, sc.cbs.K, sc.N_d,
                              seed=cfg.seed if model_seed is None else model_seed)
    elif bundle.kind != kind:
        raise ValueError(f"bundle kind {bundle.kind!r} != {kind!r}")
    t0 = time.perf_counter()
    report = TrainReport(kind, ["joint"], config=asdict(cfg))
    first = next(iter(data.epoch(0)))
    report.initial_joint_loss = _bce_value(bundle, first, uaen_only=False)
    report.joint_losses = _loop(bundle, list(bundle.params.values()), cfg.lr_joint, data, cfg.epochs,
                                False, report, "joint", False)
    bundle.stage = "trained"
    report.wall_clock = time.perf_counter() - t0
    return bundle, report


def train_model(kind: str, scenario: Scenario, cfg: TrainConfig, out_dir: str | Path | None = None,
                stage: str = "all", bundle: ModelBundle | None = None, force: bool = False,
                meta: dict | None = None, prefetch: int = 0) -> tuple[ModelBundle, TrainReport, dict]:
    """End-to-end driver used by the CLI. Returns the bundle, the report and written paths."""
    out = Path(out_dir) if out_dir is not None else None
    written: dict[str, Path] = {}
    sc = scenario
    if bundle is None:
        bundle = build_bundle(kind, sc.cmap.N_R, sc.pset.n_zc, sc.cbs.K, sc.N_d, seed=cfg.seed)
    bundle.meta.update(meta or {})
    if kind != PROPOSED:
        if stage == "pretrain":
            raise ValueError(f"{kind!r} has no UAEN; stage 'pretrain' does not apply")
        data = TrainingData(sc, cfg, "joint", prefetch=prefetch)
        bundle, report = train_baselines(kind, cfg, data, bundle)
        if out is not None:
            written["trained"] = out / f"{kind}_trained.ckpt"
            report.checkpoint_id = save_checkpoint(bundle, written["trained"], "trained")
        return bundle, report, written
    report = TrainReport(kind)
    if stage in ("pretrain", "all"):
        r = pretrain_uaen(bundle, cfg, TrainingData(sc, cfg, "pretrain", prefetch=prefetch))
        if out is not None:
            written["pretrained"] = out / f"{kind}_pretrained.ckpt"
            r.checkpoint_id = save_checkpoint(bundle, written["pretrained"], "pretrained")
        report = report.merge(r)
    if stage in ("joint", "all"):
        r = joint_train(bundle, cfg, TrainingData(sc, cfg, "joint", prefetch=prefetch), force=force)
        if out is not None:
            written["joint"] = out / f"{kind}_joint.ckpt"
            r.checkpoint_id = save_checkpoint(bundle, written["joint"], "joint")
        report = report.merge(r)
    return bundle, report, written


def resume_for_joint(path: str | Path) -> ModelBundle:
    bundle = load_checkpoint(path)
    if bundle.stage != "pretrained" or not bundle.pretrained:
        raise ValueError(f"{path} is not a pre-trained checkpoint (stage={bundle.stage!r})")
    return bundle
