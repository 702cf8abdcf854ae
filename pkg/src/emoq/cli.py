"""Command-line entry point: ``emoq <subcommand> ...``.

Exit codes: 0 success, 2 validation error, 3 data error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .data import DEFAULT_TAXONOMY, EmbeddingSet, Level, infer_level, pool_utterance, read_manifest
from .errors import DataError, ValidationError
from .formats import (
    read_codebook,
    read_embeddings,
    write_codebook,
    write_codes,
    write_embeddings,
    write_json,
)
from .pipeline import (
    DEFAULT_FRAME_RATE,
    DEFAULT_PAIRS,
    Context,
    SweepConfig,
    evaluate,
    run_rq1,
    run_rq2,
    run_rq3,
    run_rq4,
    StackCache,
    sweep,
)
from .probe import ProbeConfig, probe_train, read_probe, write_probe
from .router import load_bank, route_batch
from .rvq import encode, reconstruct
from .synth import SynthSpec, generate
from .trainer import KMeansConfig, TrainingRegime, train_rvq

log = logging.getLogger("emoq")

EXIT_VALIDATION = 2
EXIT_DATA = 3


def _pairs(text):
    pairs = []
    for item in str(text).replace(" ", "").split(","):
        if not item:
            continue
        try:
            l, k = item.lower().split("x")
            pairs.append((int(l), int(k)))
        except ValueError:
            raise ValidationError(f"bad (L, K) pair {item!r}; expected e.g. 8x32") from None
    return pairs


def _ints(text):
    return [int(v) for v in str(text).split(",") if v.strip()]


def _need(args, *names):
    missing = [n for n in names if getattr(args, n, None) is None]
    if missing:
        raise ValidationError("missing required option(s): " + ", ".join("--" + m.replace("_", "-") for m in missing))


def _load(args) -> EmbeddingSet:
    _need(args, "embeddings")
    return read_embeddings(args.embeddings, args.manifest)


def _write_report(report, out_dir, stem):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{stem}.csv").write_text(report.to_csv(), encoding="utf-8")
    (out / f"{stem}.json").write_text(report.to_json(), encoding="utf-8")
    log.info("wrote %s/%s.{csv,json}", out, stem)


def _target_id(name):
    if name is None:
        return None
    if str(name).isdigit():
        return int(name)
    return DEFAULT_TAXONOMY.id_of(name)


# ---------------------------------------------------------------- commands


def cmd_synth(args):
    spec = SynthSpec(
        n_classes=args.classes,
        dim=args.dim,
        per_class=args.per_class,
        separation=args.sep,
        ambiguity=args.ambiguity,
        frames=tuple(args.frames),
        seed=args.seed,
    )
    _need(args, "out")
    eset = generate(spec)
    write_embeddings(eset, args.out, args.manifest)
    print(f"wrote {eset.n_rows} x {eset.dim} frames for {len(eset)} utterances to {args.out}")


def cmd_import(args):
    _need(args, "vectors", "manifest", "out")
    src = Path(args.vectors)
    if src.suffix == ".npy":
        vectors = np.load(src)
    else:
        vectors = np.loadtxt(src, delimiter=",", ndmin=2)
    utts = read_manifest(args.manifest)
    level = Level(args.level) if args.level else infer_level(utts, len(vectors))
    eset = EmbeddingSet(vectors, tuple(utts), level)
    write_embeddings(eset, args.out, args.manifest_out)
    print(f"imported {eset.n_rows} x {eset.dim} ({level.value}-level, {len(eset)} utterances) to {args.out}")


def _maybe_normalize(eset, normalize):
    if not normalize:
        return eset
    v = eset.vectors.astype(np.float64)
    norms = np.sqrt((v * v).sum(axis=1))
    if np.any(norms == 0):
        raise DataError(f"row {int(np.flatnonzero(norms == 0)[0])} has zero norm; cannot normalize")
    return eset.with_vectors((v / norms[:, None]).astype(np.float32))


def cmd_train_codebook(args):
    _need(args, "regime", "stages", "entries", "budget")
    eset = _load(args)
    if args.level == "utterance":
        eset = pool_utterance(eset) if eset.level is Level.FRAME else eset
    eset = _maybe_normalize(eset, args.normalize)
    kmeans = KMeansConfig(args.entries, args.max_iters, args.tol)
    if args.regime == "balanced":
        regimes = [TrainingRegime.balanced(args.budget, seed=args.seed)]
    else:
        bias = 100 if args.regime == "specific" else args.bias
        if args.regime == "biased" and bias is None:
            raise ValidationError("--bias is required for the biased regime")
        targets = [_target_id(args.target)] if args.target is not None else list(range(len(eset.taxonomy)))
        if args.target is None and args.bank_dir is None:
            raise ValidationError("--target is required unless --bank-dir trains one stack per emotion")
        regimes = [
            TrainingRegime.specific(t, args.budget, seed=args.seed)
            if bias == 100
            else TrainingRegime.biased(t, bias, args.budget, seed=args.seed)
            for t in targets
        ]
    if args.bank_dir is None:
        _need(args, "out")
        if len(regimes) != 1:
            raise ValidationError("--out takes a single stack")
    # train everything before writing so a failed quota leaves no partial bank
    stacks = [(regime, train_rvq(eset, regime, args.stages, args.entries, kmeans)) for regime in regimes]
    for regime, stack in stacks:
        if args.bank_dir is not None:
            name = "balanced" if regime.target is None else eset.taxonomy.name_of(regime.target)
            Path(args.bank_dir).mkdir(parents=True, exist_ok=True)
            path = Path(args.bank_dir) / f"{name}.rvqc"
        else:
            path = Path(args.out)
        size = write_codebook(stack, path)
        print(f"wrote {stack.n_stages}x{stack.entries} {regime.tag} stack ({size} bytes) to {path}")


def cmd_quantize(args):
    _need(args, "codebook", "out")
    eset = _load(args)
    stack = read_codebook(args.codebook, len(eset.taxonomy))
    depth = args.depth or stack.n_stages
    codes = encode(eset, stack, depth)
    write_codes(codes, args.out)
    if args.recon:
        recon = reconstruct(codes, stack, depth)
        write_embeddings(recon, args.recon)
    print(f"encoded {codes.n_rows} rows through {depth} stages to {args.out}")


def cmd_probe_train(args):
    _need(args, "out")
    eset = _load(args)
    if eset.level is Level.FRAME:
        eset = pool_utterance(eset)
    probe = probe_train(eset, ProbeConfig(args.epochs, args.lr, args.l2, args.seed))
    write_probe(probe, args.out)
    print(f"trained probe: final loss {probe.meta['final_loss']:.6f}; wrote {args.out}")


def cmd_evaluate(args):
    _need(args, "codebook", "probe", "out_dir")
    eset = _load(args)
    stack = read_codebook(args.codebook, len(eset.taxonomy))
    probe = read_probe(args.probe, eset.taxonomy)
    depths = _ints(args.depths) if args.depths else None
    report = evaluate(eset, stack, probe, depths, args.frame_rate)
    _write_report(report, args.out_dir, "evaluate")


def cmd_route(args):
    _need(args, "bank", "depth", "out")
    eset = _load(args)
    bank = load_bank(args.bank, args.depth, args.normalize, eset.taxonomy)
    pred, report = route_batch(eset, bank, args.baseline_f1, frame_vote=args.frame_vote)
    payload = report.to_dict()
    payload["predictions"] = [{"uid": u.uid, "label": eset.taxonomy.name_of(int(p))} for u, p in zip(eset.utterances, pred)]
    write_json(payload, args.out)
    print(f"routed {len(pred)} utterances: Macro-F1 {report.get(bank.depth, 'ALL', 'macro_f1'):.4f}")


def cmd_sweep(args):
    _need(args, "out_dir")
    eset = _load(args)
    cfg = SweepConfig(
        pairs=tuple(_pairs(args.pairs)) if args.pairs else DEFAULT_PAIRS,
        regimes=tuple(r.strip() for r in args.regimes.split(",")),
        depths=_ints(args.depths) if args.depths else None,
        seed=args.seed,
        out_dir=args.out_dir,
        jobs=args.jobs,
        budget=args.budget,
        frame_rate=args.frame_rate,
        normalize=args.normalize,
    )
    summary = sweep(eset, cfg)
    print(f"sweep over {len(cfg.pairs)} configurations written to {args.out_dir} (baseline Macro-F1 {summary['delta_table']['baseline_macro_f1']:.4f})")


def _ctx(args, eset):
    cache = StackCache(Path(args.out_dir) / "cache")
    return Context.build(eset, seed=args.seed, budget=args.budget, cache=cache, frame_rate=args.frame_rate)


def _rq_input(args):
    _need(args, "out_dir")
    eset = _load(args)
    level = args.level
    if level == "utterance" and eset.level is Level.FRAME:
        eset = pool_utterance(eset)
    return eset


def cmd_rq1(args):
    _need(args, "stages", "entries")
    eset = _rq_input(args)
    _write_report(run_rq1(eset, args.stages, args.entries, ctx=_ctx(args, eset)), args.out_dir, "rq1")


def cmd_rq2(args):
    _need(args, "stages", "entries")
    eset = _rq_input(args)
    _write_report(run_rq2(eset, args.stages, args.entries, ctx=_ctx(args, eset)), args.out_dir, "rq2")


def cmd_rq3(args):
    _need(args, "stages", "entries")
    eset = _rq_input(args)
    regimes = tuple(r.strip() for r in args.regimes.split(","))
    _write_report(run_rq3(eset, args.stages, args.entries, regimes, ctx=_ctx(args, eset)), args.out_dir, "rq3")


def cmd_rq4(args):
    _need(args, "out_dir")
    eset = _load(args)
    pairs = _pairs(args.pairs) if args.pairs else DEFAULT_PAIRS
    table = run_rq4(eset, pairs, args.baseline_f1, args.normalize, ctx=_ctx(args, eset))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "delta_table.csv").write_text(table.to_csv(), encoding="utf-8")
    write_json(table.to_dict(), out / "rq4.json")
    print(table.to_csv(), end="")


# ------------------------------------------------------------------ parser


def _data_opts(p):
    p.add_argument("--embeddings", help="EMBV embedding file")
    p.add_argument("--manifest", help="JSON-lines manifest (default: embeddings path with .jsonl)")


def _run_opts(p, stages=True):
    _data_opts(p)
    if stages:
        p.add_argument("--stages", "-L", type=int)
        p.add_argument("--entries", "-K", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--budget", type=int, help="training utterances per stack (default: largest value every regime can meet)")
    p.add_argument("--frame-rate", type=float, default=DEFAULT_FRAME_RATE)
    p.add_argument("--out-dir")


def build_parser():
    parser = argparse.ArgumentParser(prog="emoq", description="Emotion-aware residual vector quantization of speech embeddings.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="TOML file of option defaults (command-line flags win)")
        p.set_defaults(func=func)
        return p

    p = add("synth", cmd_synth, "generate a synthetic emotion-clustered corpus")
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--per-class", type=int, default=500)
    p.add_argument("--sep", type=float, default=4.0)
    p.add_argument("--ambiguity", type=float, default=0.3)
    p.add_argument("--frames", type=int, nargs=2, default=(4, 8), metavar=("MIN", "MAX"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.add_argument("--manifest")

    p = add("import", cmd_import, "convert a .npy/.csv matrix plus manifest into EMBV")
    p.add_argument("--vectors")
    p.add_argument("--manifest")
    p.add_argument("--level", choices=["frame", "utterance"])
    p.add_argument("--out")
    p.add_argument("--manifest-out")

    p = add("train-codebook", cmd_train_codebook, "train an RVQ stack under a data regime")
    _data_opts(p)
    p.add_argument("--regime", choices=["balanced", "specific", "biased"])
    p.add_argument("--target", help="target emotion name or id")
    p.add_argument("--bias", type=int, help="target share A in percent (biased regime)")
    p.add_argument("--stages", "-L", type=int)
    p.add_argument("--entries", "-K", type=int)
    p.add_argument("--budget", type=int, help="total training utterances T (required)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-iters", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--level", choices=["frame", "utterance"], default="frame")
    p.add_argument("--normalize", action="store_true", help="L2-normalize rows before training (for routing banks)")
    p.add_argument("--out")
    p.add_argument("--bank-dir", help="train one stack per emotion into DIR/<emotion>.rvqc")

    p = add("quantize", cmd_quantize, "encode embeddings into stage indices")
    _data_opts(p)
    p.add_argument("--codebook")
    p.add_argument("--depth", type=int)
    p.add_argument("--out")
    p.add_argument("--recon", help="also write the reconstruction as EMBV")

    p = add("probe-train", cmd_probe_train, "train a linear emotion probe")
    _data_opts(p)
    p.add_argument("--epochs", type=int, default=500)
    p.add_argument("--lr", type=float, default=1.0)
    p.add_argument("--l2", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")

    p = add("evaluate", cmd_evaluate, "per-depth metrics for a stack and probe")
    _data_opts(p)
    p.add_argument("--codebook")
    p.add_argument("--probe")
    p.add_argument("--depths", help="comma-separated depths (default: all)")
    p.add_argument("--frame-rate", type=float, default=DEFAULT_FRAME_RATE)
    p.add_argument("--out-dir")

    p = add("route", cmd_route, "classify by Emo-Q routing through per-emotion stacks")
    _data_opts(p)
    p.add_argument("--bank", help="directory holding <emotion>.rvqc for every emotion")
    p.add_argument("--depth", type=int)
    p.add_argument("--normalize", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--frame-vote", action="store_true", help="route frames and take a majority vote per utterance")
    p.add_argument("--baseline-f1", type=float)
    p.add_argument("--out")

    p = add("sweep", cmd_sweep, "run every (L, K) configuration and write CSV/JSON results")
    _run_opts(p, stages=False)
    p.add_argument("--pairs", help="comma-separated LxK pairs (default: the seven standard configurations)")
    p.add_argument("--regimes", default="balanced,100+0,99+1")
    p.add_argument("--depths")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--normalize", action=argparse.BooleanOptionalAction, default=True)

    for name, func, help_ in (
        ("rq1", cmd_rq1, "layer-wise degradation with a balanced stack"),
        ("rq2", cmd_rq2, "emotion-specific stacks, matched vs unmatched"),
        ("rq3", cmd_rq3, "soft-label fidelity per regime and ambiguity stratum"),
    ):
        p = add(name, func, help_)
        _run_opts(p)
        p.add_argument("--level", choices=["frame", "utterance"], default="utterance" if name == "rq3" else "frame")
        if name == "rq3":
            p.add_argument("--regimes", default="balanced,100+0,99+1,95+5")

    p = add("rq4", cmd_rq4, "Macro-F1 delta table for Bal and Emo-Q routing")
    _run_opts(p, stages=False)
    p.add_argument("--pairs")
    p.add_argument("--baseline-f1", type=float)
    p.add_argument("--normalize", action=argparse.BooleanOptionalAction, default=True)
    return parser, sub


def _apply_config(parser, sub, argv, args):
    import tomli

    with open(args.config, "rb") as fh:
        cfg = tomli.load(fh)
    subparser = sub.choices[args.command]
    known = {a.dest for a in subparser._actions}
    defaults = {}
    for key, value in cfg.items():
        dest = key.replace("-", "_")
        if dest not in known or dest in ("func", "config"):
            raise ValidationError(f"unknown key {key!r} in config file {args.config}")
        if isinstance(value, list) and dest in ("pairs", "regimes", "depths"):
            value = ",".join(str(v) for v in value)
        defaults[dest] = value
    subparser.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    parser, sub = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.config:
            args = _apply_config(parser, sub, argv, args)
        args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return 0


if __name__ == "__main__":
    sys.exit(main())
