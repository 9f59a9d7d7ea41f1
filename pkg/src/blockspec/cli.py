"""Command-line harness: corpora, training runs, benchmarks, losslessness grids, cost reports."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import statistics
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import costmodel
from .config import RUN_MODES, RunConfig, default_out_root
from .drafter import ConstantDrafter, OracleDrafter, load_bundle, read_bundle_header
from .lm import TabularTarget, TinyTransformer, cycle_tabular, random_tabular, uniform_tabular, words_tabular
from .numerics.params import CHECKPOINT_MAGIC
from .specdec import adversarial_drafter, enumerate_losslessness
from .experiments import evaluate_tau
from .trainer import compute_features, read_corpus, sample_corpus, train_run, train_target_lm, write_corpus

log = logging.getLogger("blockspec")

WARMUP = 3
REPEATS = 5
LOSSLESS_DRAFTERS = ("random", "uniform", "adversarial", "self")


class CommandError(RuntimeError):
    """A precondition of a command does not hold."""


# ---------------------------------------------------------------- targets


def load_target(spec: str):
    """A saved transformer or tabular file, or a built-in ``cycle:V`` / ``words:V:N:LEN:SEED``."""
    kind, _, rest = spec.partition(":")
    if kind == "cycle" and rest:
        return cycle_tabular(int(rest))
    if kind == "words" and rest:
        V, n, length, seed = (int(x) for x in rest.split(":"))
        return words_tabular(V, n, length, np.random.default_rng(seed), reserved=(V - 2, V - 1))
    path = Path(spec)
    if not path.is_file():
        raise CommandError(f"target not found: {spec}")
    with open(path, "rb") as fh:
        head = fh.read(len(CHECKPOINT_MAGIC))
    if head == CHECKPOINT_MAGIC:
        return TinyTransformer.load(path)
    if path.read_text(errors="replace").startswith("# tabular"):
        return TabularTarget.load(path)
    raise CommandError(f"unrecognised target file: {spec}")


def _digest(target) -> str:
    return target.digest()


# --------------------------------------------------------------- commands


def cmd_gen_corpus(args) -> int:
    target = load_target(args.target)
    seqs = sample_corpus(target, args.n, args.length, np.random.default_rng(args.seed))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_corpus(out, seqs, {"target": _digest(target)[:16], "n": args.n, "length": args.length, "seed": args.seed})
    print(f"wrote {len(seqs)} sequences to {out}")
    return 0


def _train_cell(target_path: str, corpus_path: str, cfg: RunConfig, out_dir: str) -> dict:
    target = load_target(target_path)
    if not isinstance(target, TinyTransformer):
        raise CommandError("drafter training needs a transformer target (context features)")
    seqs, _ = read_corpus(corpus_path)
    feats = compute_features(target, seqs)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.txt")
    res = train_run(
        target,
        seqs,
        feats,
        cfg.mode,
        None if cfg.mode == "eagle-ar-baseline" else cfg.drafter_config(),
        steps=cfg.steps,
        batch_size=cfg.batch_size,
        lr=cfg.lr,
        seed=cfg.seed,
        warmup_ratio=cfg.warmup_ratio,
        weight_decay=cfg.weight_decay,
        clip_norm=cfg.clip_norm,
        out_dir=out,
        ar_gamma=cfg.gamma,
    )
    return {"mode": cfg.mode, "bundle": str(res.bundle_path), "sha256": res.bundle_digest}


def _train_target(args, cfg: RunConfig, out: Path) -> int:
    source = load_target(args.source)
    if not isinstance(source, TabularTarget):
        raise CommandError("--source must be a tabular language")
    model, losses = train_target_lm(
        source, cfg.target_config(), steps=cfg.steps, batch_size=cfg.batch_size, lr=cfg.lr, seed=cfg.seed
    )
    out.mkdir(parents=True, exist_ok=True)
    model.save(out / "target.ckpt")
    source.save(out / "source.tabular")
    with open(out / "target_loss.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "loss"])
        w.writerows([i, repr(v)] for i, v in enumerate(losses))
    print(f"target {model.digest()[:16]} final loss {losses[-1]:.4f} -> {out / 'target.ckpt'}")
    return 0


def cmd_train(args) -> int:
    cfg = _config_from_args(args)
    out = Path(args.out) if args.out else default_out_root() / "train"
    if args.mode == "target":
        if not args.source:
            raise CommandError("--mode target needs --source")
        return _train_target(args, cfg, out)
    if not args.target or not args.corpus:
        raise CommandError("drafter training needs --target and --corpus")
    if not Path(args.corpus).is_file():
        raise CommandError(f"corpus not found: {args.corpus}")
    modes = list(RUN_MODES[:4]) if args.mode == "grid" else [args.mode]
    cells = [(args.target, args.corpus, cfg.with_updates(mode=m), str(out / m.replace("+", "_"))) for m in modes]
    if args.workers > 1 and len(cells) > 1:
        with ProcessPoolExecutor(args.workers) as pool:
            results = list(pool.map(_train_cell, *zip(*cells)))
    else:
        results = [_train_cell(*c) for c in cells]
    for r in results:
        print(f"{r['mode']}: {r['bundle']} sha256={r['sha256']}")
    return 0


def _make_drafter(spec: str, target):
    if spec == "oracle":
        return OracleDrafter(target)
    if spec.startswith("constant:"):
        return ConstantDrafter(int(spec.split(":", 1)[1]), target.vocab_size)
    path = Path(spec)
    if not path.is_file():
        raise CommandError(f"drafter bundle not found: {spec}")
    return load_bundle(path, target)


def _median_time(fn) -> float:
    for _ in range(WARMUP):
        fn()
    samples = []
    for _ in range(REPEATS):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return statistics.median(samples)


def measure_profile(target, drafter, prompt: list[int], gamma: int) -> costmodel.LatencyProfile:
    """Median-of-5 component timings (3 warmups discarded) around one prompt."""
    session = target.session(prompt)
    rng = np.random.default_rng(0)
    block = drafter.propose(session.tokens, session.features, gamma, True, rng)
    draft = list(block.tokens)
    t_draft = _median_time(lambda: drafter.propose(session.tokens, session.features, gamma, True, rng))
    t_verify = _median_time(lambda: session.verify(draft))
    l_target = _median_time(lambda: session.verify([]))
    if getattr(drafter, "method", "") in costmodel.AR_METHODS:
        return costmodel.LatencyProfile(t_net=t_draft / gamma, T_verify=t_verify, L_target=l_target)
    return costmodel.LatencyProfile(t_net_block=t_draft, T_verify=t_verify, L_target=l_target)


def cmd_bench(args) -> int:
    target = load_target(args.target)
    if args.bundle:
        header = read_bundle_header(args.bundle)
        if header["target_hash"] != target.digest():
            raise CommandError(
                f"bundle target hash {header['target_hash'][:16]} does not match eval target {target.digest()[:16]}"
            )
    drafter = _make_drafter(args.bundle or args.drafter, target)
    gamma = args.block_size - 1
    seqs, _ = read_corpus(args.eval)
    if len(seqs) == 0:
        raise CommandError("evaluation set is empty")
    prompts = [list(map(int, row[: args.prompt_len])) for row in seqs]
    t0 = time.perf_counter()
    metrics = evaluate_tau(target, drafter, prompts, args.max_new, args.temperature, args.seed, gamma=gamma)
    wall = time.perf_counter() - t0
    out = Path(args.out) if args.out else default_out_root() / f"bench-{metrics.method}-t{args.temperature}-s{args.seed}"
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(json.dumps(metrics.to_dict(), indent=2, sort_keys=True) + "\n")
    profile = measure_profile(target, drafter, prompts[0], gamma)
    report = costmodel.method_report(metrics.method, metrics.tau_mean, gamma, profile)
    timing = {"wall_clock_s": wall, "profile": json.loads(profile.to_json()), "speedup": report.to_dict()}
    (out / "timing.json").write_text(json.dumps(timing, indent=2, sort_keys=True) + "\n")
    print(metrics.to_json())
    print(f"predicted speedup {report.eta:.3f} (tau {report.tau:.3f}) -> {out}")
    return 0


def _lossless_cell(seed: int, drafter_kind: str, vocab: int, order: int, gamma: int, horizon: int) -> dict:
    target = random_tabular(vocab, order, np.random.default_rng(seed))
    if drafter_kind == "random":
        drafter = random_tabular(vocab, order, np.random.default_rng(10_000 + seed))
    elif drafter_kind == "uniform":
        drafter = uniform_tabular(vocab, order)
    elif drafter_kind == "adversarial":
        drafter = adversarial_drafter(target)
    else:
        drafter = target
    tv = enumerate_losslessness(target, drafter, gamma, horizon)
    return {"seed": seed, "drafter": drafter_kind, "vocab": vocab, "gamma": gamma, "horizon": horizon, "tv": tv}


def cmd_losslessness(args) -> int:
    kinds = args.drafters.split(",")
    bad = [k for k in kinds if k not in LOSSLESS_DRAFTERS]
    if bad:
        raise CommandError(f"unknown drafter kinds {bad}; choose from {LOSSLESS_DRAFTERS}")
    grid = [(s, k, args.vocab, args.order, args.gamma, args.horizon) for s in range(args.seeds) for k in kinds]
    if grid:
        # validate caps once up front so the error is reported before any work
        _lossless_cell(*grid[0])
    if args.workers > 1:
        with ProcessPoolExecutor(args.workers) as pool:
            rows = list(pool.map(_lossless_cell, *zip(*grid)))
    else:
        rows = [_lossless_cell(*g) for g in grid]
    out = Path(args.out) if args.out else default_out_root() / "losslessness.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    cols = ["seed", "drafter", "vocab", "gamma", "horizon", "tv"]
    with open(out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        w.writerows({**r, "tv": repr(float(r["tv"]))} for r in rows)
    max_tv = max((r["tv"] for r in rows), default=0.0)
    print(f"rows={len(rows)} max_tv={max_tv:.3e} -> {out}")
    return 0


class _Measured:
    def __init__(self, d: dict):
        self.method = d["method"]
        self.gamma = int(d["gamma"])
        self.tau_mean = float(d["tau_mean"])


def cmd_costmodel(args) -> int:
    profile = costmodel.LatencyProfile()
    if args.profile:
        data = json.loads(Path(args.profile).read_text())
        profile = costmodel.LatencyProfile(**data.get("profile", data))
    measured = [_Measured(json.loads(Path(p).read_text())) for p in args.metrics]
    rows = costmodel.calibration_report(measured, profile)
    out = Path(args.out) if args.out else default_out_root() / "costmodel.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    costmodel.write_report(out, rows)
    sys.stdout.write(costmodel.rows_to_csv(rows))
    predicted = costmodel.speedup_ratio(1 + costmodel.REPORTED_TAU_GAIN, 1 + costmodel.REPORTED_LATENCY_GAIN)
    print(f"speedup ratio from tau and latency gains: {predicted:.4f} (reported {1 + costmodel.REPORTED_SPEEDUP_GAIN:.3f})")
    return 0


def cmd_report(args) -> int:
    root = Path(args.runs)
    if not root.is_dir():
        raise CommandError(f"runs directory not found: {root}")
    cols = ["run", "method", "gamma", "temperature", "seed", "tau_mean", "cycles", "tokens", "net_calls", "head_calls"]
    rows = []
    for p in sorted(root.rglob("metrics.json")):
        m = json.loads(p.read_text())
        rows.append({"run": str(p.parent.relative_to(root)), **{k: m.get(k) for k in cols[1:]}})
    out = Path(args.out) if args.out else root / "report.csv"
    with open(out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    for r in rows:
        print(f"{r['run']}\t{r['method']}\ttau={r['tau_mean']:.3f}")
    return 0


# ------------------------------------------------------------------ parser


def _config_from_args(args) -> RunConfig:
    base = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    mode = args.mode if getattr(args, "mode", None) in RUN_MODES else None
    return base.with_updates(
        seed=args.seed,
        block_size=getattr(args, "block_size", None),
        mode=mode,
        temperature=getattr(args, "temperature", None),
        steps=getattr(args, "steps", None),
        out=getattr(args, "out", None),
    )


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="blockspec", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-corpus", help="sample sequences from a target at temperature 1")
    g.add_argument("--target", required=True)
    g.add_argument("--n", type=int, default=256)
    g.add_argument("--length", type=int, default=64)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_corpus)

    t = sub.add_parser("train", help="train a drafter (or the toy target with --mode target)")
    t.add_argument("--mode", default="tf+curr", choices=RUN_MODES + ("grid", "target"))
    t.add_argument("--target")
    t.add_argument("--corpus")
    t.add_argument("--source", help="tabular language for --mode target")
    t.add_argument("--config")
    t.add_argument("--seed", type=int)
    t.add_argument("--block-size", type=int)
    t.add_argument("--steps", type=int)
    t.add_argument("--out")
    t.add_argument("--workers", type=int, default=1)
    t.set_defaults(func=cmd_train)

    b = sub.add_parser("bench", help="decode an evaluation set and report tau and speedup")
    b.add_argument("--target", required=True)
    src = b.add_mutually_exclusive_group(required=True)
    src.add_argument("--bundle")
    src.add_argument("--drafter", help="oracle or constant:TOKEN")
    b.add_argument("--eval", required=True)
    b.add_argument("--block-size", type=int, default=8)
    b.add_argument("--temperature", type=int, default=1, choices=(0, 1))
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--prompt-len", type=int, default=8)
    b.add_argument("--max-new", type=int, default=48)
    b.add_argument("--out")
    b.set_defaults(func=cmd_bench)

    lo = sub.add_parser("losslessness", help="exact TV distance over a grid of tabular targets and drafters")
    lo.add_argument("--seeds", type=int, default=20)
    lo.add_argument("--drafters", default=",".join(LOSSLESS_DRAFTERS))
    lo.add_argument("--vocab", type=int, default=4)
    lo.add_argument("--order", type=int, default=1)
    lo.add_argument("--gamma", type=int, default=3)
    lo.add_argument("--horizon", type=int, default=3)
    lo.add_argument("--workers", type=int, default=1)
    lo.add_argument("--out")
    lo.set_defaults(func=cmd_losslessness)

    c = sub.add_parser("costmodel", help="predicted speedups next to published figures")
    c.add_argument("--profile", help="LatencyProfile JSON (or a bench timing.json)")
    c.add_argument("--metrics", nargs="*", default=[], help="bench metrics.json files")
    c.add_argument("--out")
    c.set_defaults(func=cmd_costmodel)

    r = sub.add_parser("report", help="collect metrics.json files under a directory into one table")
    r.add_argument("--runs", required=True)
    r.add_argument("--out")
    r.set_defaults(func=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as exc:  # one-line, machine-parsable failure
        msg = str(exc).replace("\n", " ")
        print(f"blockspec: error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 2
