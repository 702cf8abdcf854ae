"""Experiment pipelines: layer-wise degradation, matched/unmatched stacks, soft-label fidelity, routed SER, sweeps."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import multiprocessing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .data import EmbeddingSet, Level, pool_utterance, pooled_rows, stratify
from .errors import PreconditionError, ValidationError
from .formats import read_codebook, write_codebook, write_json
from .metrics import (
    ALL,
    EvalReport,
    cosine_rows,
    js_divergence,
    macro_f1,
    normalized_entropy,
    primary_recall,
    top2_scores,
)
from .probe import LinearProbe, ProbeConfig, probe_predict, probe_train
from .router import build_bank, route_depth_scores
from .rvq import RvqStack, continuous_bitrate, encode_array, nominal_bitrate
from .seeds import derive_seed
from .trainer import KMeansConfig, TrainingRegime, train_rvq

log = logging.getLogger(__name__)

DEFAULT_PAIRS = ((8, 32), (8, 64), (8, 128), (32, 2), (32, 4), (64, 2), (128, 2))
DEFAULT_FRAME_RATE = 50.0
SPLIT_FRACTIONS = (0.5, 0.1, 0.4)


# ------------------------------------------------------------------ caching


def data_fingerprint(eset: EmbeddingSet) -> str:
    h = hashlib.sha256()
    h.update(eset.vectors.tobytes())
    h.update(str(eset.vectors.shape).encode())
    h.update(eset.labels().tobytes())
    for u in eset.utterances:
        h.update(f"{u.uid}:{u.frames[0]}:{u.frames[1]};".encode())
    return h.hexdigest()


class StackCache:
    """Trains stacks on demand, reusing ``<hash>.rvqc`` files under ``directory`` when the inputs match."""

    def __init__(self, directory=None):
        self.directory = None if directory is None else Path(directory)
        if self.directory is not None:
            self.directory.mkdir(parents=True, exist_ok=True)
        self._fingerprints = {}
        self.hits = 0
        self.misses = 0

    def _fingerprint(self, eset):
        key = id(eset)
        if key not in self._fingerprints:
            self._fingerprints[key] = (eset, data_fingerprint(eset))
        return self._fingerprints[key][1]

    def __call__(self, eset, regime: TrainingRegime, n_stages, entries, kmeans=None):
        kmeans = kmeans or KMeansConfig(k=entries)
        if self.directory is None:
            return train_rvq(eset, regime, n_stages, entries, kmeans)
        spec = {
            "data": self._fingerprint(eset),
            "regime": [int(regime.kind), regime.target, regime.bias_percent, regime.total_budget, regime.seed],
            "shape": [n_stages, entries],
            "kmeans": [kmeans.max_iters, kmeans.tol, kmeans.seed],
            "version": __version__,
        }
        digest = hashlib.sha256(json.dumps(spec, sort_keys=True).encode()).hexdigest()[:24]
        path = self.directory / f"{digest}.rvqc"
        if path.exists():
            self.hits += 1
            return read_codebook(path)
        self.misses += 1
        stack = train_rvq(eset, regime, n_stages, entries, kmeans)
        tmp = path.with_suffix(".tmp")
        write_codebook(stack, tmp)
        tmp.replace(path)
        return stack


# ------------------------------------------------------------------- splits


@dataclass
class Splits:
    train: EmbeddingSet
    val: EmbeddingSet
    test: EmbeddingSet


def split_dataset(eset: EmbeddingSet, seed: int = 0, fractions=SPLIT_FRACTIONS) -> Splits:
    """Per-class shuffled train/val/test split of utterances."""
    if len(fractions) != 3 or abs(sum(fractions) - 1) > 1e-9:
        raise ValidationError(f"split fractions must be three numbers summing to 1, got {fractions}")
    rng = np.random.default_rng(derive_seed(seed, "split"))
    labels = eset.labels()
    parts = ([], [], [])
    for c in range(len(eset.taxonomy)):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(idx.size)]
        n_train = int(round(fractions[0] * idx.size))
        n_val = int(round(fractions[1] * idx.size))
        parts[0].extend(idx[:n_train])
        parts[1].extend(idx[n_train : n_train + n_val])
        parts[2].extend(idx[n_train + n_val :])
    return Splits(*(eset.subset(sorted(int(i) for i in p)) for p in parts))


def default_budget(train: EmbeddingSet) -> int:
    """Largest utterance budget every regime can meet: a multiple of C no larger than the rarest class."""
    n_classes = len(train.taxonomy)
    counts = np.bincount(train.labels(), minlength=n_classes)
    budget = int(counts.min()) // n_classes * n_classes
    if budget < n_classes:
        raise ValidationError(f"training split too small for balanced quotas (class counts {counts.tolist()})")
    return budget


def _as_utterances(eset: EmbeddingSet) -> EmbeddingSet:
    return pool_utterance(eset) if eset.level is Level.FRAME else eset


def _at_level(eset: EmbeddingSet, level) -> EmbeddingSet:
    """Quantize frames as given (``"frame"``) or pool to one vector per utterance first (``"utterance"``)."""
    level = Level(level)
    return _as_utterances(eset) if level is Level.UTTERANCE else eset


def parse_regime(tag) -> int | None:
    """``"balanced"`` -> None, ``"99+1"``, ``"99"`` or ``99`` -> 99."""
    if isinstance(tag, int):
        return tag
    tag = str(tag).strip().lower()
    if tag == "balanced":
        return None
    if tag in ("specific", "100+0"):
        return 100
    try:
        return int(tag.split("+")[0])
    except ValueError:
        raise ValidationError(f"unknown regime {tag!r}") from None


def regime_tag(bias) -> str:
    return "balanced" if bias is None else f"{bias}+{100 - bias}"


def _regime(bias, budget, seed, target=None):
    if bias is None:
        return TrainingRegime.balanced(budget, seed=derive_seed(seed, "stack", "balanced"))
    stack_seed = derive_seed(seed, "stack", regime_tag(bias))
    if bias == 100:
        return TrainingRegime.specific(target, budget, seed=stack_seed)
    return TrainingRegime.biased(target, bias, budget, seed=stack_seed)


@dataclass
class Context:
    """Everything the research-question runs share: splits, budget, continuous-feature probe."""

    splits: Splits
    budget: int
    probe: LinearProbe
    seed: int
    kmeans: KMeansConfig | None
    cache: StackCache
    frame_rate: float

    @classmethod
    def build(cls, eset, seed=0, budget=None, probe_cfg=None, kmeans=None, cache=None, frame_rate=DEFAULT_FRAME_RATE):
        splits = split_dataset(eset, seed)
        budget = budget or default_budget(splits.train)
        probe = probe_train(_as_utterances(splits.train), probe_cfg or ProbeConfig(seed=derive_seed(seed, "probe")))
        return cls(splits, budget, probe, seed, kmeans, cache or StackCache(), frame_rate)

    def stack(self, train, bias, n_stages, entries, target=None):
        regime = _regime(bias, self.budget, self.seed, target)
        return self.cache(train, regime, n_stages, entries, self.kmeans)

    @property
    def n_classes(self):
        return len(self.splits.train.taxonomy)

    @property
    def names(self):
        return self.splits.train.taxonomy.names


def _depth_recons(eset, stack, depths):
    """Yield (depth, pooled float64 reconstruction, codes) from a single full-depth encode."""
    codes, _ = encode_array(eset.vectors, stack, max(depths))
    acc = np.zeros((eset.n_rows, stack.dim))
    for d in range(1, max(depths) + 1):
        acc += stack.codebooks[d - 1][codes[:, d - 1]].astype(np.float64)
        if d in depths:
            yield d, pooled_rows(eset, acc), codes


def _config(ctx, n_stages, entries, **extra):
    cfg = {
        "L": n_stages,
        "K": entries,
        "budget": ctx.budget,
        "seed": ctx.seed,
        "frame_rate_hz": ctx.frame_rate,
        "split": list(SPLIT_FRACTIONS),
    }
    cfg.update(extra)
    return cfg


# ---------------------------------------------------------------------- RQ1


def run_rq1(eset, n_stages, entries, ctx: Context | None = None, level="frame", **ctx_kwargs) -> EvalReport:
    """Per-depth, per-emotion cosine fidelity and probe recall of a balanced stack on held-out data."""
    ctx = ctx or Context.build(_at_level(eset, level), **ctx_kwargs)
    test = ctx.splits.test
    stack = ctx.stack(ctx.splits.train, None, n_stages, entries)
    report = EvalReport(config=_config(ctx, n_stages, entries, regime="balanced", level=test.level.value))
    orig = pooled_rows(test)
    truth = test.labels()
    depths = list(range(1, n_stages + 1))
    for d, recon, codes in _depth_recons(test, stack, depths):
        cos = cosine_rows(orig, recon)
        pred, _ = probe_predict(ctx.probe, recon)
        recall = primary_recall(pred, truth, ctx.n_classes)
        report.add(d, ALL, "cosine", cos.mean())
        report.add(d, ALL, "recall", recall.macro)
        for c, name in enumerate(ctx.names):
            mask = truth == c
            if mask.any():
                report.add(d, name, "cosine", cos[mask].mean())
            if recall.defined[c]:
                report.add(d, name, "recall", recall.per_class[c])
            else:
                report.flag(d, name, "recall", "class absent from test split")
        report.add(d, ALL, "entropy", normalized_entropy(np.bincount(codes[:, d - 1], minlength=entries), entries))
        report.add(d, ALL, "bitrate_bps", nominal_bitrate(stack, d, ctx.frame_rate))
    return report


# ---------------------------------------------------------------------- RQ2


def run_rq2(eset, n_stages, entries, ctx: Context | None = None, level="frame", **ctx_kwargs) -> EvalReport:
    """Emotion-specific stacks on their own emotion (matched), on the others (unmatched), and the balanced baseline."""
    ctx = ctx or Context.build(_at_level(eset, level), **ctx_kwargs)
    train, test = ctx.splits.train, ctx.splits.test
    balanced = ctx.stack(train, None, n_stages, entries)
    specific = [ctx.stack(train, 100, n_stages, entries, target=c) for c in range(ctx.n_classes)]
    depths = list(range(1, n_stages + 1))
    report = EvalReport(config=_config(ctx, n_stages, entries, regime="specific", baseline="balanced", level=test.level.value))

    # (stack id, input emotion) -> {depth: (cosine mean, recall, entropy)}
    results = {}
    stacks = {"balanced": balanced, **{c: s for c, s in enumerate(specific)}}
    for e in range(ctx.n_classes):
        test_e = test.by_label(e)
        if len(test_e) == 0:
            continue
        orig = pooled_rows(test_e)
        for sid, stack in stacks.items():
            per_depth = {}
            for d, recon, codes in _depth_recons(test_e, stack, depths):
                pred, _ = probe_predict(ctx.probe, recon)
                per_depth[d] = (
                    float(cosine_rows(orig, recon).mean()),
                    float(np.mean(pred == e)),
                    normalized_entropy(np.bincount(codes[:, d - 1], minlength=entries), entries),
                )
            results[sid, e] = per_depth

    present = [e for e in range(ctx.n_classes) if (e, e) in results]
    for d in depths:
        summary = {}
        for e in present:
            name = ctx.names[e]
            matched = results[e, e][d]
            others = [results[s, e][d] for s in range(ctx.n_classes) if s != e]
            bal = results["balanced", e][d]
            vals = {
                "cosine_matched": matched[0],
                "recall_matched": matched[1],
                "entropy_matched": matched[2],
                "cosine_unmatched": float(np.mean([o[0] for o in others])),
                "recall_unmatched": float(np.mean([o[1] for o in others])),
                "cosine_balanced": bal[0],
                "recall_balanced": bal[1],
                "entropy_balanced": bal[2],
            }
            for metric, value in vals.items():
                report.add(d, name, metric, value)
                summary.setdefault(metric, []).append(value)
        for metric, values in summary.items():
            report.add(d, ALL, metric, float(np.mean(values)))
    return report


# ---------------------------------------------------------------------- RQ3


def run_rq3(
    eset,
    n_stages,
    entries,
    regimes=("balanced", "100+0", "99+1", "95+5"),
    ctx: Context | None = None,
    level="utterance",
    **ctx_kwargs,
) -> EvalReport:
    """JS divergence and Top-2 set accuracy of probe softmax vs soft labels, per regime and ambiguity stratum.

    Specialized regimes quantize each utterance with the stack trained for its
    own (hard-label) emotion. Quantization defaults to pooled utterance
    vectors: a single-emotion codebook cannot place the other emotion's frames
    of a mixed utterance, so frame-level coding erases the secondary emotion.
    """
    ctx = ctx or Context.build(_at_level(eset, level), **ctx_kwargs)
    train, test = ctx.splits.train, ctx.splits.test
    if any(u.soft is None for u in test.utterances):
        raise PreconditionError("RQ3 needs soft labels on every test utterance")
    low, high = stratify(test)
    strata = {"low": low, "high": high}
    depths = list(range(1, n_stages + 1))
    biases = [parse_regime(r) for r in regimes]
    report = EvalReport(config=_config(ctx, n_stages, entries, regimes=[regime_tag(b) for b in biases], level=test.level.value))

    def score(subset, recon_pooled):
        _, soft_pred = probe_predict(ctx.probe, recon_pooled)
        truth = subset.soft_matrix()
        return js_divergence(soft_pred, truth), top2_scores(soft_pred, truth)

    for sname, subset in strata.items():
        if len(subset) == 0:
            report.flag(0, sname, "jsd", "empty stratum")
            continue
        jsd, top2 = score(subset, pooled_rows(subset))
        report.add(0, sname, "jsd_continuous", jsd.mean())
        report.add(0, sname, "top2_continuous", top2.mean())

    for bias in biases:
        tag = regime_tag(bias)
        if bias is None:
            stacks_by_label = [ctx.stack(train, None, n_stages, entries)] * ctx.n_classes
        else:
            stacks_by_label = [ctx.stack(train, bias, n_stages, entries, target=c) for c in range(ctx.n_classes)]
        for sname, subset in strata.items():
            if len(subset) == 0:
                continue
            labels = subset.labels()
            pooled = {d: np.zeros((len(subset), subset.dim)) for d in depths}
            for c in np.unique(labels):
                idx = np.flatnonzero(labels == c)
                part = subset.subset(idx.tolist())
                for d, recon, _ in _depth_recons(part, stacks_by_label[c], depths):
                    pooled[d][idx] = recon
            for d in depths:
                jsd, top2 = score(subset, pooled[d])
                report.add(d, sname, f"jsd_{tag}", jsd.mean())
                report.add(d, sname, f"top2_{tag}", top2.mean())
    return report


# ---------------------------------------------------------------------- RQ4


CONDITIONS = ("Bal", "Emo-Q(100)", "Emo-Q(99)")


@dataclass
class DeltaTable:
    """Macro-F1 change versus the continuous baseline per (L, K) configuration."""

    pairs: list
    baseline_f1: float
    f1: dict = field(default_factory=dict)  # (condition, "LxK") -> test Macro-F1
    depth: dict = field(default_factory=dict)  # (condition, "LxK") -> selected depth
    bitrate: dict = field(default_factory=dict)  # (condition, "LxK") -> bps at selected depth

    @property
    def columns(self):
        return [f"{l}x{k}" for l, k in self.pairs]

    def delta(self, condition, column) -> float:
        return self.f1[condition, column] - self.baseline_f1

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["condition", *self.columns])
        w.writerow(["Baseline", *[repr(0.0)] * len(self.columns)])
        for cond in CONDITIONS:
            w.writerow([cond, *[repr(float(self.delta(cond, col))) for col in self.columns]])
        return out.getvalue()

    def to_dict(self) -> dict:
        return {
            "baseline_macro_f1": self.baseline_f1,
            "columns": self.columns,
            "rows": {
                cond: {
                    col: {
                        "delta": self.delta(cond, col),
                        "macro_f1": self.f1[cond, col],
                        "depth": self.depth[cond, col],
                        "bitrate_bps": self.bitrate[cond, col],
                    }
                    for col in self.columns
                }
                for cond in CONDITIONS
            },
        }


def _best_depth(f1_by_depth):
    # highest validation F1, shallowest depth on ties
    best = max(f1_by_depth.values())
    return min(d for d, v in f1_by_depth.items() if v == best)


def _rq4_pair(ctx: Context, n_stages, entries, normalize=True):
    """Test Macro-F1 and selected depth for each condition at one (L, K)."""
    train = _as_utterances(ctx.splits.train)
    val = _as_utterances(ctx.splits.val)
    test = _as_utterances(ctx.splits.test)
    depths = list(range(1, n_stages + 1))
    out = {}

    bal = ctx.stack(train, None, n_stages, entries)
    val_f1 = {}
    for d, recon, _ in _depth_recons(val, bal, depths):
        val_f1[d] = macro_f1(probe_predict(ctx.probe, recon)[0], val.labels(), ctx.n_classes).macro
    d_star = _best_depth(val_f1)
    recon = next(r for d, r, _ in _depth_recons(test, bal, [d_star]))
    out["Bal"] = (macro_f1(probe_predict(ctx.probe, recon)[0], test.labels(), ctx.n_classes).macro, d_star)

    for cond, bias in (("Emo-Q(100)", 100), ("Emo-Q(99)", 99)):
        bank = build_bank(
            train,
            n_stages,
            entries,
            ctx.budget,
            bias_percent=bias,
            normalize=normalize,
            seed=derive_seed(ctx.seed, "stack", regime_tag(bias)),
            kmeans=ctx.kmeans,
            stack_fn=ctx.cache,
        )
        scores = route_depth_scores(pooled_rows(val), bank, depths)
        val_f1 = {d: macro_f1(np.argmax(scores[i], axis=1), val.labels(), ctx.n_classes).macro for i, d in enumerate(depths)}
        d_star = _best_depth(val_f1)
        test_scores = route_depth_scores(pooled_rows(test), bank, [d_star])[0]
        out[cond] = (macro_f1(np.argmax(test_scores, axis=1), test.labels(), ctx.n_classes).macro, d_star)
    return out


def run_rq4(eset, pairs=DEFAULT_PAIRS, baseline_f1=None, normalize=True, ctx: Context | None = None, **ctx_kwargs) -> DeltaTable:
    """Macro-F1 deltas for the balanced-quantized probe and routed Emo-Q banks."""
    ctx = ctx or Context.build(eset, **ctx_kwargs)
    if baseline_f1 is None:
        test = _as_utterances(ctx.splits.test)
        baseline_f1 = macro_f1(probe_predict(ctx.probe, test)[0], test.labels(), ctx.n_classes).macro
    table = DeltaTable(list(pairs), float(baseline_f1))
    for n_stages, entries in pairs:
        col = f"{n_stages}x{entries}"
        for cond, (f1, depth) in _rq4_pair(ctx, n_stages, entries, normalize).items():
            table.f1[cond, col] = f1
            table.depth[cond, col] = depth
            table.bitrate[cond, col] = nominal_bitrate(entries, depth, ctx.frame_rate)
    return table


# -------------------------------------------------------------------- sweep


@dataclass
class SweepConfig:
    pairs: tuple = DEFAULT_PAIRS
    regimes: tuple = ("balanced", "100+0", "99+1")
    depths: tuple | None = None
    seed: int = 0
    out_dir: str = "sweep_out"
    jobs: int = 1
    budget: int | None = None
    frame_rate: float = DEFAULT_FRAME_RATE
    normalize: bool = True

    def __post_init__(self):
        self.pairs = tuple(tuple(int(v) for v in p) for p in self.pairs)
        if not self.pairs:
            raise ValidationError("sweep needs at least one (L, K) pair")
        for l, k in self.pairs:
            if l < 1 or k < 1:
                raise ValidationError(f"invalid (L, K) pair {(l, k)}")
        self.regimes = tuple(self.regimes)
        for r in self.regimes:
            parse_regime(r)
        if self.depths is not None:
            self.depths = tuple(sorted({int(d) for d in self.depths}))


def _layer_curves(ctx: Context, n_stages, entries, regimes, depths):
    """Whole-test-set cosine/recall (and entropy for balanced) per depth for each regime."""
    test = ctx.splits.test
    orig = pooled_rows(test)
    truth = test.labels()
    prefix = f"{n_stages}x{entries}"
    rows = []
    depths = [d for d in (depths or range(1, n_stages + 1)) if d <= n_stages]
    for regime in regimes:
        bias = parse_regime(regime)
        tag = regime_tag(bias)
        recon = {d: np.zeros_like(orig) for d in depths}
        entropy = {}
        if bias is None:
            stack = ctx.stack(ctx.splits.train, None, n_stages, entries)
            for d, r, codes in _depth_recons(test, stack, depths):
                recon[d] = r
                entropy[d] = normalized_entropy(np.bincount(codes[:, d - 1], minlength=entries), entries)
        else:
            for c in range(ctx.n_classes):
                idx = np.flatnonzero(truth == c)
                if idx.size == 0:
                    continue
                stack = ctx.stack(ctx.splits.train, bias, n_stages, entries, target=c)
                for d, r, _ in _depth_recons(test.subset(idx.tolist()), stack, depths):
                    recon[d][idx] = r
        for d in depths:
            pred, _ = probe_predict(ctx.probe, recon[d])
            rows.append((d, ALL, f"{prefix}/{tag}/cosine", float(cosine_rows(orig, recon[d]).mean())))
            rows.append((d, ALL, f"{prefix}/{tag}/recall", primary_recall(pred, truth, ctx.n_classes).macro))
            if d in entropy:
                rows.append((d, ALL, f"{prefix}/{tag}/entropy", entropy[d]))
            rows.append((d, ALL, f"{prefix}/{tag}/bitrate_bps", nominal_bitrate(entries, d, ctx.frame_rate)))
    return rows


def _sweep_job(args):
    eset, pair, cfg, cache_dir = args
    n_stages, entries = pair
    ctx = Context.build(eset, seed=cfg.seed, budget=cfg.budget, cache=StackCache(cache_dir), frame_rate=cfg.frame_rate)
    rows = _layer_curves(ctx, n_stages, entries, cfg.regimes, cfg.depths)
    return rows, _rq4_pair(ctx, n_stages, entries, cfg.normalize), ctx.cache.hits, ctx.cache.misses


def sweep(eset: EmbeddingSet, cfg: SweepConfig) -> dict:
    """Run every (L, K) pair, write ``sweep.csv``, ``delta_table.csv`` and ``summary.json`` to ``cfg.out_dir``.

    Pairs may run in a process pool; outputs are assembled in configuration
    order so the files do not depend on scheduling.
    """
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cache_dir = out / "cache"
    jobs = [(eset, pair, cfg, cache_dir) for pair in cfg.pairs]
    if cfg.jobs > 1 and len(jobs) > 1:
        # spawn, not fork: the numba runtime may already hold OpenMP threads
        with ProcessPoolExecutor(max_workers=cfg.jobs, mp_context=multiprocessing.get_context("spawn")) as pool:
            results = list(pool.map(_sweep_job, jobs))
    else:
        results = [_sweep_job(j) for j in jobs]

    report = EvalReport()
    ctx = Context.build(eset, seed=cfg.seed, budget=cfg.budget, cache=StackCache(cache_dir), frame_rate=cfg.frame_rate)
    test = _as_utterances(ctx.splits.test)
    baseline = macro_f1(probe_predict(ctx.probe, test)[0], test.labels(), ctx.n_classes).macro
    table = DeltaTable(list(cfg.pairs), float(baseline))
    hits = misses = 0
    for (rows, conds, h, m), (n_stages, entries) in zip(results, cfg.pairs):
        report.rows.extend(rows)
        col = f"{n_stages}x{entries}"
        for cond, (f1, depth) in conds.items():
            table.f1[cond, col] = f1
            table.depth[cond, col] = depth
            table.bitrate[cond, col] = nominal_bitrate(entries, depth, cfg.frame_rate)
        hits += h
        misses += m
    (out / "sweep.csv").write_text(report.to_csv(), encoding="utf-8")
    (out / "delta_table.csv").write_text(table.to_csv(), encoding="utf-8")
    cfg_echo = asdict(cfg)
    cfg_echo.pop("jobs")
    cfg_echo.pop("out_dir")
    summary = {
        "config": cfg_echo,
        "budget": ctx.budget,
        "data_fingerprint": data_fingerprint(eset),
        "delta_table": table.to_dict(),
        "continuous_bitrate_bps": continuous_bitrate(eset.dim, cfg.frame_rate),
    }
    write_json(summary, out / "summary.json")
    log.info("sweep done: %d pairs, stack cache %d hits / %d misses", len(cfg.pairs), hits, misses)
    return summary


# ----------------------------------------------------------------- evaluate


def evaluate(eset: EmbeddingSet, stack: RvqStack, probe: LinearProbe, depths=None, frame_rate=DEFAULT_FRAME_RATE) -> EvalReport:
    """Metrics for one stack and probe on ``eset`` at each depth."""
    depths = sorted(set(depths or range(1, stack.n_stages + 1)))
    n_classes = len(eset.taxonomy)
    report = EvalReport(config={"L": stack.n_stages, "K": stack.entries, "regime": stack.regime.name.lower(),
                                "target": stack.target, "bias_percent": stack.bias_percent, "frame_rate_hz": frame_rate})
    orig = pooled_rows(eset)
    truth = eset.labels()
    has_soft = all(u.soft is not None for u in eset.utterances)
    if has_soft:
        soft_truth = eset.soft_matrix()
        strata = np.array([u.soft.max_share > 0.5 for u in eset.utterances])
    for d, recon, codes in _depth_recons(eset, stack, depths):
        cos = cosine_rows(orig, recon)
        pred, soft = probe_predict(probe, recon)
        recall = primary_recall(pred, truth, n_classes)
        report.add(d, ALL, "cosine", cos.mean())
        report.add(d, ALL, "recall", recall.macro)
        report.add(d, ALL, "macro_f1", macro_f1(pred, truth, n_classes).macro)
        report.add(d, ALL, "entropy", normalized_entropy(np.bincount(codes[:, d - 1], minlength=stack.entries), stack.entries))
        report.add(d, ALL, "bitrate_bps", nominal_bitrate(stack, d, frame_rate))
        for c, name in enumerate(eset.taxonomy.names):
            if recall.defined[c]:
                report.add(d, name, "cosine", cos[truth == c].mean())
                report.add(d, name, "recall", recall.per_class[c])
            else:
                report.flag(d, name, "recall", "class absent")
        if has_soft:
            jsd = js_divergence(soft, soft_truth)
            top2 = top2_scores(soft, soft_truth)
            for sname, mask in (("low", strata), ("high", ~strata)):
                if mask.any():
                    report.add(d, sname, "jsd", jsd[mask].mean())
                    report.add(d, sname, "top2", top2[mask].mean())
    return report
