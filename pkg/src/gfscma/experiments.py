"""Named link setups and a checkpoint cache for the reference experiments.

A trained model is cached under a key derived from everything that determines
it (model kind, codebook file, association, ZC length, training config), so a
repeated experiment reuses the checkpoint instead of retraining.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

from .checkpoint import load_checkpoint, save_checkpoint
from .codebook import dumps_codebook_set, load_shipped
from .ctu import RANDOM, ROOT_SEPARATED, random_association, root_separated_association
from .models import PROPOSED, ModelBundle
from .sim import Scenario
from .training import TrainConfig, TrainingData, joint_train, pretrain_uaen, train_baselines
from .zc import reference_preamble_set

log = logging.getLogger(__name__)

J = 6


@dataclass(frozen=True)
class Setup:
    codebook: str = "pb"      # 'pb' or 'pi'
    assoc: str = RANDOM       # 'random' or 'root_separated'
    n_zc: int = 7
    assoc_seed: int = 0
    N_d: int = 16

    def scenario(self) -> Scenario:
        pset = reference_preamble_set(self.n_zc)
        if self.assoc == RANDOM:
            cmap = random_association(pset, J, self.assoc_seed)
        elif self.assoc == ROOT_SEPARATED:
            cmap = root_separated_association(pset, J)
        else:
            raise ValueError(f"unknown association {self.assoc!r}")
        return Scenario.build(load_shipped(self.codebook), pset, cmap, N_d=self.N_d)


def cache_key(kind: str, setup: Setup, cfg: TrainConfig, variant: str = "") -> str:
    doc = {"kind": kind, "setup": asdict(setup), "train": asdict(cfg), "variant": variant,
           "codebook": dumps_codebook_set(load_shipped(setup.codebook))}
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]


def trained_model(kind: str, setup: Setup, cfg: TrainConfig, cache_dir: str | Path,
                  prefetch: int = 1) -> ModelBundle:
    """Return the fully trained model, training (and caching) it on first use."""
    cache = Path(cache_dir)
    cache.mkdir(parents=True, exist_ok=True)
    path = cache / f"{kind}-{setup.codebook}-{setup.assoc}-{cache_key(kind, setup, cfg)}.ckpt"
    if path.exists():
        return load_checkpoint(path)
    sc = setup.scenario()
    log.info("training %s on %s (cache miss: %s)", kind, setup, path.name)
    if kind == PROPOSED:
        from .models import build_bundle

        bundle = build_bundle(kind, sc.cmap.N_R, sc.pset.n_zc, sc.cbs.K, sc.N_d, seed=cfg.seed)
        r1 = pretrain_uaen(bundle, cfg, TrainingData(sc, cfg, "pretrain", prefetch=prefetch))
        r2 = joint_train(bundle, cfg, TrainingData(sc, cfg, "joint", prefetch=prefetch))
        wall = r1.wall_clock + r2.wall_clock
    else:
        bundle, rep = train_baselines(kind, cfg, TrainingData(sc, cfg, "joint", prefetch=prefetch))
        wall = rep.wall_clock
    bundle.meta["train_wall_clock_s"] = round(wall, 1)
    tmp = path.with_suffix(".tmp")
    save_checkpoint(bundle, tmp)
    tmp.replace(path)
    return load_checkpoint(path)
