"""Stage-by-stage RVQ codebook training with k-means under controlled data regimes."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _accel
from .data import EmbeddingSet
from .errors import DataError, InsufficientDataError, QuotaError, ValidationError
from .rvq import Regime, RvqStack
from .seeds import derive_rng, derive_seed


@dataclass(frozen=True)
class TrainingRegime:
    """How many utterances of each class go into codebook training.

    ``specific`` is the ``biased`` regime with ``bias_percent=100``; both
    produce the same training set under the same seed.
    """

    kind: Regime
    total_budget: int
    target: int | None = None
    bias_percent: int | None = None
    seed: int = 0

    def __post_init__(self):
        kind = Regime(self.kind) if not isinstance(self.kind, str) else Regime[self.kind.upper()]
        object.__setattr__(self, "kind", kind)
        if self.total_budget < 1:
            raise ValidationError(f"training budget must be positive, got {self.total_budget}")
        if kind is Regime.BALANCED:
            if self.target is not None or self.bias_percent is not None:
                raise ValidationError("balanced regime takes no target or bias")
            return
        if self.target is None:
            raise ValidationError(f"{kind.name.lower()} regime needs a target emotion")
        if kind is Regime.SPECIFIC:
            if self.bias_percent not in (None, 100):
                raise ValidationError("specific regime is fixed at 100% target data")
            object.__setattr__(self, "bias_percent", 100)
        elif self.bias_percent is None or not 50 <= self.bias_percent <= 100:
            raise ValidationError(f"bias percent must be an integer in [50, 100], got {self.bias_percent}")

    @classmethod
    def balanced(cls, total_budget, seed=0):
        return cls(Regime.BALANCED, total_budget, seed=seed)

    @classmethod
    def specific(cls, target, total_budget, seed=0):
        return cls(Regime.SPECIFIC, total_budget, target=target, seed=seed)

    @classmethod
    def biased(cls, target, bias_percent, total_budget, seed=0):
        return cls(Regime.BIASED, total_budget, target=target, bias_percent=bias_percent, seed=seed)

    @property
    def tag(self) -> str:
        if self.kind is Regime.BALANCED:
            return "balanced"
        return f"{self.bias_percent}+{100 - self.bias_percent}"

    def quotas(self, n_classes: int) -> np.ndarray:
        """Utterances drawn per class; always sums to ``total_budget``."""
        t = self.total_budget
        q = np.zeros(n_classes, dtype=np.int64)
        if self.kind is Regime.BALANCED:
            if t % n_classes:
                raise ValidationError(f"balanced budget {t} is not divisible by {n_classes} classes")
            q[:] = t // n_classes
            return q
        if not 0 <= self.target < n_classes:
            raise ValidationError(f"target {self.target} outside [0, {n_classes})")
        n_target = self.bias_percent * t // 100
        q[self.target] = n_target
        others = [c for c in range(n_classes) if c != self.target]
        rest = t - n_target
        if rest and not others:
            raise ValidationError("biased regime needs at least two classes")
        if others:
            base, extra = divmod(rest, len(others))
            for i, c in enumerate(others):
                # leftover goes round-robin in label-id order
                q[c] = base + (1 if i < extra else 0)
        return q


def assemble_training_set(eset: EmbeddingSet, regime: TrainingRegime) -> EmbeddingSet:
    """Sample utterances without replacement to match the regime's per-class quotas."""
    quotas = regime.quotas(len(eset.taxonomy))
    labels = eset.labels()
    chosen = []
    for c, q in enumerate(quotas):
        if q == 0:
            continue
        pool = np.flatnonzero(labels == c)
        if pool.size < q:
            raise QuotaError(
                f"class {eset.taxonomy.name_of(c)!r} has {pool.size} utterances, "
                f"needs {q} (short by {q - pool.size})"
            )
        perm = derive_rng(regime.seed, "quota", c).permutation(pool.size)
        chosen.append(pool[perm[:q]])
    idx = np.sort(np.concatenate(chosen)) if chosen else np.zeros(0, dtype=np.int64)
    return eset.subset(idx.tolist())


@dataclass(frozen=True)
class KMeansConfig:
    k: int
    max_iters: int = 100
    tol: float = 1e-5
    seed: int | None = None

    def __post_init__(self):
        if self.k < 1:
            raise ValidationError(f"k must be >= 1, got {self.k}")
        if not self.tol > 0:
            raise ValidationError(f"tol must be > 0, got {self.tol}")
        if self.max_iters < 0:
            raise ValidationError("max_iters must be >= 0")


@dataclass
class KMeansResult:
    centroids: np.ndarray
    labels: np.ndarray
    distortions: list[float] = field(default_factory=list)

    @property
    def distortion(self) -> float:
        return self.distortions[-1]


def _kmeans_pp(x, k, rng):
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]), dtype=np.float64)
    used = np.zeros(n, dtype=bool)
    first = int(rng.integers(n))
    centers[0] = x[first]
    used[first] = True
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for c in range(1, k):
        total = d2.sum()
        if total > 0:
            cum = np.cumsum(d2)
            pick = int(np.searchsorted(cum, rng.random() * total, side="right"))
            pick = min(pick, n - 1)
        else:
            # every point already coincides with a center
            free = np.flatnonzero(~used)
            pick = int(free[rng.integers(free.size)]) if free.size else int(rng.integers(n))
        centers[c] = x[pick]
        used[pick] = True
        d2 = np.minimum(d2, ((x - centers[c]) ** 2).sum(axis=1))
    return centers


def kmeans_fit(data, cfg: KMeansConfig) -> KMeansResult:
    """Lloyd's k-means with k-means++ seeding.

    The distortion sequence (mean squared distance) never increases: an
    iteration that would raise it is rejected and training stops. Empty
    clusters are moved onto the points farthest from their centroids.
    """
    x = np.ascontiguousarray(data, dtype=np.float64)
    if x.ndim != 2:
        raise ValidationError(f"k-means data must be 2-D, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise DataError("k-means data contains non-finite values")
    n = x.shape[0]
    k = cfg.k
    if n < k:
        raise InsufficientDataError(f"k-means needs at least k={k} rows, got {n}")
    rng = np.random.default_rng(cfg.seed)
    centers = _kmeans_pp(x, k, rng)
    labels, dist = _accel.nearest_codeword(x, centers)
    j = dist.sum() / n
    history = [float(j)]
    for _ in range(cfg.max_iters):
        sums, counts = _accel.cluster_sums(x, labels, k)
        new = centers.copy()
        full = counts > 0
        new[full] = sums[full] / counts[full, None]
        empty = np.flatnonzero(~full)
        if empty.size:
            far = np.argsort(-dist, kind="stable")
            for c, p in zip(empty, far):
                new[c] = x[p]
        new_labels, new_dist = _accel.nearest_codeword(x, new)
        new_j = new_dist.sum() / n
        if new_j > j:
            break
        centers, labels, dist = new, new_labels, new_dist
        history.append(float(new_j))
        if j == 0 or (j - new_j) <= cfg.tol * j:
            break
        j = new_j
    return KMeansResult(centers, labels, history)


def train_rvq(
    eset: EmbeddingSet,
    regime: TrainingRegime,
    n_stages: int,
    entries: int,
    cfg: KMeansConfig | None = None,
) -> RvqStack:
    """Fit each stage's codebook by k-means on the residuals the earlier stages leave."""
    if n_stages < 1:
        raise ValidationError(f"need at least one stage, got {n_stages}")
    cfg = cfg or KMeansConfig(k=entries)
    training = assemble_training_set(eset, regime)
    residual = training.vectors.astype(np.float64)
    books = np.empty((n_stages, entries, eset.dim), dtype=np.float32)
    for s in range(n_stages):
        stage_seed = derive_seed(regime.seed if cfg.seed is None else cfg.seed, "kmeans", s)
        fit = kmeans_fit(residual, KMeansConfig(entries, cfg.max_iters, cfg.tol, stage_seed))
        books[s] = fit.centroids.astype(np.float32)
        idx, _ = _accel.nearest_codeword(residual, books[s])
        residual -= books[s][idx].astype(np.float64)
    return RvqStack(books, regime.kind, regime.target, regime.bias_percent, regime.seed)
