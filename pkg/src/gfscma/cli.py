"""Command-line front end: ``gfscma <command> ...``.

Every command writes its outputs plus a ``manifest.json`` into ``--out``
(default: ``$GFSCMA_OUT`` or ``./gfscma-out``). The manifest stores the argument
vector, the resolved configuration, seeds, input and output hashes and timing;
``gfscma rerun MANIFEST --out DIR`` replays the command and compares outputs.

Exit codes: 0 success, 1 runtime or invariant failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint
from .codebook import CodebookError, dumps_codebook_set, load_codebook_set, loads_codebook_set, shipped_path
from .ctu import (ctu_csv, load_ctu_map, loads_ctu_map, random_association,
                  root_separated_association, same_cb_correlation_stats)
from .evaluation import EvalTarget, SweepSpec, emit_plot, reports_csv, sweep
from .models import CONVENTIONAL, PAUDN, PROPOSED, parameter_count_for
from .sim import ActivityModel, Scenario, generate_batch, write_shard
from .streams import Stream
from .training import PRESETS, dumps_train_config, load_train_config, resume_for_joint, train_model
from .verify import SUITES, run_suites, table
from .zc import ZcParams, build_preamble_set, reference_preamble_set

log = logging.getLogger("gfscma")

MANIFEST = "manifest.json"
MODEL_NAMES = {"proposed": PROPOSED, "paudn": PAUDN, "daudn": CONVENTIONAL}
J_DEFAULT = 6


class UsageError(Exception):
    """Invalid flag combination (exit code 2)."""


# ---------------------------------------------------------------- helpers


def default_out() -> Path:
    return Path(os.environ.get("GFSCMA_OUT", "gfscma-out"))


def sha256_file(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def parse_ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def parse_points(text: str) -> list[float]:
    """``a:b:step`` (inclusive) or a comma list."""
    try:
        if ":" in text:
            a, b, s = (float(x) for x in text.split(":"))
            if s <= 0 or b < a:
                raise ValueError
            n = int(np.floor((b - a) / s + 1e-9)) + 1
            return [a + k * s for k in range(n)]
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad point list {text!r}; use a:b:step or v1,v2,...") from None


def build_scenario(cb_file: str | None, ctu_file: str | None, n_zc: int, seed: int, N_d: int = 16) -> Scenario:
    cbs = load_codebook_set(cb_file or shipped_path("pb"))
    pset = reference_preamble_set(n_zc)
    if ctu_file:
        cmap = load_ctu_map(ctu_file, pset, cbs.J)
    else:
        cmap = random_association(pset, cbs.J, seed)
    return Scenario.build(cbs, pset, cmap, N_d=N_d)


def scenario_meta(sc: Scenario) -> dict:
    return {"codebooks": dumps_codebook_set(sc.cbs), "ctu_csv": ctu_csv(sc.cmap, sc.pset),
            "n_zc": sc.pset.n_zc, "N_d": sc.N_d}


def scenario_from_meta(meta: dict) -> Scenario:
    for k in ("codebooks", "ctu_csv", "n_zc"):
        if k not in meta:
            raise CheckpointError(f"checkpoint metadata lacks {k!r}; cannot rebuild its link setup")
    cbs = loads_codebook_set(meta["codebooks"])
    pset = reference_preamble_set(int(meta["n_zc"]))
    cmap = loads_ctu_map(meta["ctu_csv"], pset, cbs.J)
    return Scenario.build(cbs, pset, cmap, N_d=int(meta.get("N_d", 16)), normalize=False)


class Run:
    """Collects manifest fields while a command executes."""

    def __init__(self, args: argparse.Namespace, argv: list[str]):
        self.out = Path(args.out) if getattr(args, "out", None) else default_out()
        self.out.mkdir(parents=True, exist_ok=True)
        self.manifest = {
            "command": args.command, "argv": argv, "config": {}, "seeds": {}, "inputs": {},
            "outputs": {}, "started": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
            "environment": {"python": platform.python_version(), "numpy": np.__version__},
        }
        self.t0 = time.perf_counter()

    def path(self, name: str) -> Path:
        return self.out / name

    def input(self, path) -> None:
        if path:
            self.manifest["inputs"][str(path)] = sha256_file(Path(path))

    def write_text(self, name: str, text: str) -> Path:
        p = self.path(name)
        p.write_text(text, encoding="utf-8")
        return p

    def finish(self) -> None:
        for p in sorted(self.out.iterdir()):
            if p.is_file() and p.name != MANIFEST:
                self.manifest["outputs"][p.name] = sha256_file(p)
        self.manifest["finished"] = time.strftime("%Y-%m-%dT%H:%M:%S%z")
        self.manifest["wall_clock_s"] = round(time.perf_counter() - self.t0, 3)
        self.path(MANIFEST).write_text(json.dumps(self.manifest, indent=2, sort_keys=True) + "\n",
                                       encoding="utf-8")


# ---------------------------------------------------------------- commands


def cmd_ctu_build(args, run: Run) -> int:
    roots = args.roots or list(range(1, J_DEFAULT + 1))
    if args.assoc == "rs" and len(roots) != args.J:
        raise UsageError(f"--assoc rs needs exactly J={args.J} roots, got {len(roots)}")
    try:
        params = ZcParams(args.n_zc, tuple(roots))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if not 1 <= args.shifts <= args.n_zc:
        raise UsageError(f"--shifts must be in [1, {args.n_zc}]")
    pset = build_preamble_set(params, args.shifts)
    if args.assoc == "rs":
        cmap = root_separated_association(pset, args.J)
    else:
        cmap = random_association(pset, args.J, args.seed)
    mx, mean = same_cb_correlation_stats(cmap, pset)
    stats = {"N_R": cmap.N_R, "J": cmap.J, "scheme": cmap.scheme, "same_cb_max_corr": mx,
             "same_cb_mean_corr": mean, "n_zc": args.n_zc, "roots": roots, "shifts": args.shifts}
    run.manifest["config"] = stats
    run.manifest["seeds"] = {"assoc": args.seed}
    run.write_text("ctu_map.csv", ctu_csv(cmap, pset))
    run.write_text("ctu_stats.json", json.dumps(stats, indent=2, sort_keys=True) + "\n")
    print(json.dumps(stats, sort_keys=True))
    return 0


def cmd_train(args, run: Run) -> int:
    kind = MODEL_NAMES[args.model]
    if kind != PROPOSED and args.stage != "all":
        raise UsageError(f"--model {args.model} has no UAEN; only --stage all applies")
    overrides = {"seed": args.seed, "epochs": args.epochs, "n_pretrain_samples": args.n_pretrain,
                 "n_joint_samples": args.n_joint, "workers": args.workers, "batch": args.batch}
    cfg = load_train_config(args.config or args.preset, **overrides)
    run.input(args.config)
    run.input(args.cb_file)
    run.input(args.ctu_file)
    sc = build_scenario(args.cb_file, args.ctu_file, args.n_zc, cfg.seed)
    bundle = None
    if args.stage == "joint":
        ckpt = Path(args.init) if args.init else run.path(f"{kind}_pretrained.ckpt")
        if ckpt.exists():
            run.input(ckpt)
            bundle = resume_for_joint(ckpt)
        elif not args.force:
            raise RuntimeError(f"no pre-trained checkpoint at {ckpt}; run --stage pretrain first or pass --force")
    run.manifest["config"] = {"train": asdict(cfg), "model": kind, "stage": args.stage,
                              "n_zc": args.n_zc, "total_steps": {
                                  "pretrain": cfg.steps(cfg.n_pretrain_samples),
                                  "joint": cfg.steps(cfg.n_joint_samples)}}
    run.manifest["seeds"] = {"train": cfg.seed, "model_init": cfg.seed}
    run.write_text("train_config.ini", dumps_train_config(cfg))
    bundle, report, written = train_model(kind, sc, cfg, run.out, args.stage, bundle=bundle,
                                          force=args.force, meta=scenario_meta(sc), prefetch=args.prefetch)
    run.manifest["wall_clock_train_s"] = round(report.wall_clock, 3)
    run.write_text(f"{kind}_report.json", json.dumps(report.to_dict(include_timing=False), indent=2,
                                                     sort_keys=True) + "\n")
    for stage, p in written.items():
        print(f"{stage}: {p}")
    return 0


def _targets(specs: list[str], gamma_c: float | None, n_zc: int, seed: int) -> dict:
    targets = {}
    for spec in specs:
        label, _, path = spec.rpartition("=")
        bundle = load_checkpoint(path)
        label = label or bundle.kind
        if label in targets:
            label = f"{label}@{Path(path).stem}"
        targets[label] = EvalTarget(bundle, scenario_from_meta(bundle.meta))
    if gamma_c is not None:
        sc = next(iter(targets.values())).scenario if targets else build_scenario(None, None, n_zc, seed)
        targets["correlator"] = EvalTarget(None, sc, gamma_c)
    if not targets:
        raise UsageError("give at least one --models checkpoint or --correlator threshold")
    return targets


def cmd_eval_sweep(args, run: Run) -> int:
    points = args.points
    if args.axis == "na":
        if any(p != int(p) or p < 0 for p in points):
            raise UsageError("--axis na needs non-negative integer points")
        points = [int(p) for p in points]
    try:
        spec = SweepSpec("snr_db" if args.axis == "snr" else "n_active", tuple(points), args.snr, args.na,
                         args.frames, args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    for m in args.models:
        run.input(m.rpartition("=")[2])
    targets = _targets(args.models, args.correlator, args.n_zc, args.seed)
    run.manifest["config"] = {"sweep": asdict(spec), "models": list(targets)}
    run.manifest["seeds"] = {"eval": args.seed}
    reports = sweep(spec, targets)
    text = reports_csv(reports)
    run.write_text(args.csv_name, text)
    if args.svg:
        run.write_text(Path(args.csv_name).with_suffix(".svg").name, emit_plot(text))
    for r in reports:
        for w in r.warnings:
            print(f"warning: {w}", file=sys.stderr)
    sys.stdout.write(text)
    return 0


def cmd_plot(args, run: Run) -> int:
    run.input(args.input)
    text = Path(args.input).read_text(encoding="utf-8")
    name = args.name or Path(args.input).with_suffix(".svg").name
    run.write_text(name, emit_plot(text, args.title or ""))
    run.manifest["config"] = {"input": str(args.input), "title": args.title}
    return 0


def cmd_verify(args, run: Run) -> int:
    names = SUITES if args.suite == "all" else (args.suite,)
    rows = run_suites(names)
    out = table(rows)
    print(out)
    run.write_text("verify.txt", out + "\n")
    run.manifest["config"] = {"suites": list(names)}
    return 0 if all(r.passed for r in rows) else 1


def cmd_gen(args, run: Run) -> int:
    run.input(args.cb_file)
    run.input(args.ctu_file)
    sc = build_scenario(args.cb_file, args.ctu_file, args.n_zc, args.seed)
    if args.na is not None:
        act = ActivityModel.fixed(args.na)
    else:
        act = ActivityModel.uniform(args.na_min, args.na_max)
    cfg = sc.config(args.snr, act, args.seed)
    batch = generate_batch(cfg, sc.cmap, sc.pset, sc.cbs, args.frames, Stream(args.seed).child("gen"),
                           workers=args.workers)
    write_shard(run.path("frames.gfsb"), cfg, batch)
    run.write_text("ctu_map.csv", ctu_csv(sc.cmap, sc.pset))
    run.manifest["config"] = {"sim": cfg.to_dict(), "frames": args.frames}
    run.manifest["seeds"] = {"sim": args.seed}
    return 0


def cmd_params(args, run: Run) -> int:
    rows = []
    for n_zc in args.n_zc:
        c = parameter_count_for(6 * n_zc, n_zc)
        rows.append({"N_R": 6 * n_zc, "N_ZC": n_zc, "uaen": c["uaen"], "audn": c["audn"],
                     "ratio_percent": round(100 * c["ratio"], 4)})
    text = json.dumps(rows, indent=2) + "\n"
    run.write_text("params.json", text)
    run.manifest["config"] = {"n_zc": args.n_zc}
    sys.stdout.write(text)
    return 0


def cmd_rerun(args) -> int:
    manifest = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
    argv = list(manifest["argv"])
    for src, want in manifest.get("inputs", {}).items():
        if Path(src).exists() and sha256_file(Path(src)) != want:
            print(f"input {src} changed since the original run", file=sys.stderr)
            return 1
    if "--out" in argv:
        i = argv.index("--out")
        del argv[i:i + 2]
    out = Path(args.out) if args.out else default_out()
    code = main(argv + ["--out", str(out)])
    if code != 0:
        return code
    fresh = json.loads((out / MANIFEST).read_text(encoding="utf-8"))["outputs"]
    bad = [k for k, v in manifest["outputs"].items() if fresh.get(k) != v]
    for k in bad:
        print(f"MISMATCH {k}", file=sys.stderr)
    print("reproduced" if not bad else f"{len(bad)} output(s) differ")
    return 1 if bad else 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gfscma", description="Grant-free SCMA activity-detection lab.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def out_flag(sp):
        sp.add_argument("--out", help="output directory (default $GFSCMA_OUT or ./gfscma-out)")

    ctu = sub.add_parser("ctu", help="CTU (preamble/codebook) association")
    ctu_sub = ctu.add_subparsers(dest="ctu_command", required=True)
    b = ctu_sub.add_parser("build", help="build a CTU map")
    b.add_argument("--n-zc", type=int, default=7)
    b.add_argument("--roots", type=parse_ints)
    b.add_argument("--shifts", type=int, default=7)
    b.add_argument("--assoc", choices=("random", "rs"), default="random")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--J", type=int, default=J_DEFAULT, help="number of codebooks")
    out_flag(b)

    t = sub.add_parser("train", help="train a detector")
    t.add_argument("--model", choices=tuple(MODEL_NAMES), required=True)
    t.add_argument("--stage", choices=("pretrain", "joint", "all"), default="all")
    t.add_argument("--preset", choices=PRESETS, default="desk")
    t.add_argument("--config", help="INI file with a [train] section (overrides --preset)")
    t.add_argument("--cb-file")
    t.add_argument("--ctu-file")
    t.add_argument("--n-zc", type=int, default=7)
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch", type=int)
    t.add_argument("--n-pretrain", type=int)
    t.add_argument("--n-joint", type=int)
    t.add_argument("--workers", type=int)
    t.add_argument("--prefetch", type=int, default=0, help="batches generated ahead by a producer thread")
    t.add_argument("--init", help="pre-trained checkpoint for --stage joint")
    t.add_argument("--force", action="store_true", help="joint training without pre-training")
    out_flag(t)

    e = sub.add_parser("eval", help="evaluation")
    e_sub = e.add_subparsers(dest="eval_command", required=True)
    s = e_sub.add_parser("sweep", help="ADER sweep over SNR or number of active users")
    s.add_argument("--axis", choices=("snr", "na"), required=True)
    s.add_argument("--points", type=parse_points, required=True)
    s.add_argument("--frames", type=int, default=10_000)
    s.add_argument("--models", nargs="*", default=[], help="checkpoints, optionally LABEL=PATH")
    s.add_argument("--correlator", type=float, help="also evaluate the matched-filter correlator")
    s.add_argument("--snr", type=float, default=20.0, help="fixed SNR for --axis na")
    s.add_argument("--na", type=int, default=6, help="fixed N_a for --axis snr")
    s.add_argument("--n-zc", type=int, default=7)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--csv-name", default="sweep.csv")
    s.add_argument("--svg", action="store_true", help="also write an SVG chart")
    out_flag(s)

    pl = sub.add_parser("plot", help="SVG chart from a sweep CSV")
    pl.add_argument("--in", dest="input", required=True)
    pl.add_argument("--name", help="output file name inside --out")
    pl.add_argument("--title")
    out_flag(pl)

    v = sub.add_parser("verify", help="run self-check suites")
    v.add_argument("--suite", choices=SUITES + ("all",), default="all")
    out_flag(v)

    g = sub.add_parser("gen", help="generate a binary shard of frames")
    g.add_argument("--frames", type=int, default=1000)
    g.add_argument("--snr", type=float, default=20.0)
    g.add_argument("--na", type=int)
    g.add_argument("--na-min", type=int, default=1)
    g.add_argument("--na-max", type=int, default=6)
    g.add_argument("--cb-file")
    g.add_argument("--ctu-file")
    g.add_argument("--n-zc", type=int, default=7)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--workers", type=int, default=1)
    out_flag(g)

    pc = sub.add_parser("params", help="trainable parameter counts of the proposed model")
    pc.add_argument("--n-zc", type=parse_ints, default=[7, 13])
    out_flag(pc)

    r = sub.add_parser("rerun", help="replay a command from its manifest and compare outputs")
    r.add_argument("manifest")
    out_flag(r)
    return p


HANDLERS = {"train": cmd_train, "plot": cmd_plot, "verify": cmd_verify, "gen": cmd_gen, "params": cmd_params}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        if args.command == "rerun":
            return cmd_rerun(args)
        if args.command == "ctu":
            handler = cmd_ctu_build
        elif args.command == "eval":
            handler = cmd_eval_sweep
        else:
            handler = HANDLERS[args.command]
        run = Run(args, argv)
        code = handler(args, run)
        run.finish()
        return code
    except UsageError as exc:
        print(f"gfscma: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError, OSError, CodebookError, CheckpointError, KeyError) as exc:
        print(f"gfscma: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
