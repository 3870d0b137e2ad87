"""Train (or load from cache) every model used by the reference experiments."""

import logging
import sys
from pathlib import Path

from gfscma.ctu import ROOT_SEPARATED
from gfscma.experiments import Setup, trained_model
from gfscma.models import CONVENTIONAL, PAUDN, PROPOSED
from gfscma.training import load_train_config

RUNS = [
    (PROPOSED, Setup("pb")),
    (PAUDN, Setup("pb")),
    (CONVENTIONAL, Setup("pb")),
    (PROPOSED, Setup("pi")),
    (PROPOSED, Setup("pb", ROOT_SEPARATED)),
]

if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    cache = Path(sys.argv[1] if len(sys.argv) > 1 else "tests/.acceptance_cache")
    cfg = load_train_config("desk")
    for kind, setup in RUNS:
        trained_model(kind, setup, cfg, cache)
