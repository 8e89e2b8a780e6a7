"""Synthetic subgroup datasets, CSV ingestion, splits, and resampled views.

Samples carry a class label ``y``, a spurious attribute ``a``, and the
derived subgroup id ``g = y * num_attributes + a``. The generator draws
Gaussian blobs on two disjoint coordinate blocks: a core block whose mean
depends only on ``y`` and a spurious block whose mean depends only on
``a``, so "the spurious axes" are known ground truth. A configurable
fraction of each class is drawn with its core mean shrunk toward the
origin: those samples are hard to classify for reasons unrelated to the
spurious attribute.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from biaslab.rng import derive_rng

# Core-mean multiplier for hard samples; small enough that core evidence
# alone leaves them ambiguous at the default noise level.
HARD_CORE_SHRINK = 0.25


@dataclass
class SubgroupSpec:
    """Counts and geometry for the synthetic generator.

    ``counts[y][a]`` is the exact number of samples for subgroup (y, a).
    ``core_separation`` is the distance between adjacent class means on the
    core block; ``spurious_strength`` the same for attribute means on the
    spurious block; ``hard_fraction`` of each class is drawn with the core
    mean scaled by ``HARD_CORE_SHRINK``.
    """

    counts: np.ndarray
    core_separation: float = 2.0
    spurious_strength: float = 6.0
    noise_sigma: float = 1.0
    hard_fraction: float = 0.0

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=int)
        if self.counts.ndim != 2:
            raise ValueError("counts must be a (classes x attributes) matrix")
        if (self.counts < 0).any():
            raise ValueError("counts must be nonnegative")
        if (self.counts > 0).sum() < 2:
            raise ValueError("at least two subgroups must be nonzero")
        if self.noise_sigma <= 0:
            raise ValueError("noise_sigma must be positive")
        if not 0.0 <= self.hard_fraction <= 1.0:
            raise ValueError("hard_fraction must be in [0, 1]")

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def num_attributes(self) -> int:
        return self.counts.shape[1]


@dataclass
class Dataset:
    """Immutable feature matrix with labels, attributes, and subgroup ids."""

    X: np.ndarray
    y: np.ndarray
    a: np.ndarray
    num_classes: int
    num_attributes: int
    hard: np.ndarray | None = None
    g: np.ndarray = field(init=False)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=int)
        self.a = np.asarray(self.a, dtype=int)
        if not np.all(np.isfinite(self.X)):
            raise ValueError("features must be finite")
        if not (len(self.X) == len(self.y) == len(self.a)):
            raise ValueError("X, y, a must have equal length")
        if self.y.size and (self.y.min() < 0 or self.y.max() >= self.num_classes):
            raise ValueError("class label out of range")
        if self.a.size and (self.a.min() < 0 or self.a.max() >= self.num_attributes):
            raise ValueError("attribute out of range")
        self.g = self.y * self.num_attributes + self.a

    def __len__(self) -> int:
        return len(self.y)

    @property
    def num_groups(self) -> int:
        return self.num_classes * self.num_attributes

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def group_of(self, y: int, a: int) -> int:
        return y * self.num_attributes + a

    def group_label(self, g: int) -> str:
        return f"y{g // self.num_attributes}a{g % self.num_attributes}"

    def group_counts(self, indices: np.ndarray | None = None) -> np.ndarray:
        g = self.g if indices is None else self.g[indices]
        return np.bincount(g, minlength=self.num_groups)


@dataclass
class SplitSet:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray


def _class_means(num: int, separation: float, dim: int) -> np.ndarray:
    """Means equally spaced on the first axis, adjacent pairs `separation` apart."""
    means = np.zeros((num, dim))
    means[:, 0] = (np.arange(num) - (num - 1) / 2.0) * separation
    return means


def generate(spec: SubgroupSpec, dim_core: int, dim_spurious: int, seed: int) -> Dataset:
    """Draw a dataset whose subgroup sizes match ``spec.counts`` exactly."""
    if dim_core < 1 or dim_spurious < 1:
        raise ValueError("dim_core and dim_spurious must be >= 1")
    total = int(spec.counts.sum())
    if total == 0:
        raise ValueError("zero total count")
    rng = derive_rng(seed, "generate")

    core_means = _class_means(spec.num_classes, spec.core_separation, dim_core)
    spur_means = _class_means(spec.num_attributes, spec.spurious_strength, dim_spurious)

    ys = np.empty(total, dtype=int)
    as_ = np.empty(total, dtype=int)
    pos = 0
    for y in range(spec.num_classes):
        for a in range(spec.num_attributes):
            n = int(spec.counts[y, a])
            ys[pos:pos + n] = y
            as_[pos:pos + n] = a
            pos += n

    hard = np.zeros(total, dtype=bool)
    for y in range(spec.num_classes):
        rows = np.flatnonzero(ys == y)
        k = int(round(spec.hard_fraction * len(rows)))
        if k:
            hard[rng.choice(rows, size=k, replace=False)] = True

    core_mu = core_means[ys]
    core_mu = np.where(hard[:, None], HARD_CORE_SHRINK * core_mu, core_mu)
    x_core = core_mu + spec.noise_sigma * rng.standard_normal((total, dim_core))
    x_spur = spur_means[as_] + spec.noise_sigma * rng.standard_normal((total, dim_spurious))

    return Dataset(
        X=np.hstack([x_core, x_spur]),
        y=ys,
        a=as_,
        num_classes=spec.num_classes,
        num_attributes=spec.num_attributes,
        hard=hard,
    )


@dataclass(frozen=True)
class CsvSchema:
    label: str = "label"
    attribute: str = "attribute"


def load_csv(path, schema: CsvSchema = CsvSchema()) -> Dataset:
    """Load a delimited dataset: numeric feature columns plus label/attribute.

    Row order is preserved; subgroup ids are derived. Errors name the missing
    column or the offending row number (1-based, header is row 1).
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        for col in (schema.label, schema.attribute):
            if col not in header:
                raise ValueError(f"{path}: missing required column '{col}'")
        label_i = header.index(schema.label)
        attr_i = header.index(schema.attribute)
        feat_i = [i for i in range(len(header)) if i not in (label_i, attr_i)]
        if not feat_i:
            raise ValueError(f"{path}: no feature columns")

        xs, ys, as_ = [], [], []
        for rownum, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ValueError(f"{path}: row {rownum}: expected {len(header)} fields")
            try:
                xs.append([float(row[i]) for i in feat_i])
            except ValueError:
                raise ValueError(f"{path}: row {rownum}: non-numeric feature value") from None
            try:
                y = int(row[label_i])
                a = int(row[attr_i])
            except ValueError:
                raise ValueError(f"{path}: row {rownum}: non-integer label/attribute") from None
            if y < 0 or a < 0:
                raise ValueError(f"{path}: row {rownum}: negative label/attribute")
            ys.append(y)
            as_.append(a)

    if not ys:
        raise ValueError(f"{path}: no data rows")
    return Dataset(
        X=np.array(xs, dtype=float),
        y=np.array(ys, dtype=int),
        a=np.array(as_, dtype=int),
        num_classes=max(ys) + 1,
        num_attributes=max(as_) + 1,
    )


def _apportion(n: int, fractions: np.ndarray, min_one: bool) -> np.ndarray:
    """Largest-remainder apportionment of n items over fractions.

    Keeps every allocation within one sample of n * fraction; with
    ``min_one`` a nonzero fraction is additionally guaranteed at least one
    item (taking from the largest allocation when necessary).
    """
    target = fractions * n
    alloc = np.floor(target).astype(int)
    leftover = n - alloc.sum()
    # ties resolved by split position (train before val before test)
    order = np.argsort(-(target - alloc), kind="stable")
    for i in range(leftover):
        alloc[order[i]] += 1
    if min_one:
        for i in np.flatnonzero((fractions > 0) & (alloc == 0)):
            donor = int(alloc.argmax())
            alloc[donor] -= 1
            alloc[i] += 1
    return alloc


def split(ds: Dataset, fractions, seed: int, stratify_by_subgroup: bool = True) -> SplitSet:
    """Train/val/test index split; the stratified form preserves per-subgroup
    proportions within rounding and guarantees every subgroup lands in every
    nonzero split."""
    fractions = np.asarray(fractions, dtype=float)
    if fractions.shape != (3,):
        raise ValueError("fractions must be (train, val, test)")
    if (fractions < 0).any() or abs(fractions.sum() - 1.0) > 1e-9:
        raise ValueError("fractions must be nonnegative and sum to 1")
    rng = derive_rng(seed, "split")
    n_nonzero = int((fractions > 0).sum())

    parts: list[list[np.ndarray]] = [[], [], []]
    if stratify_by_subgroup:
        for g in range(ds.num_groups):  # ascending id: deterministic tie order
            rows = np.flatnonzero(ds.g == g)
            if len(rows) == 0:
                continue
            if len(rows) < n_nonzero:
                raise ValueError(
                    f"subgroup {ds.group_label(g)} has {len(rows)} samples, "
                    f"fewer than the {n_nonzero} nonzero splits"
                )
            rows = rng.permutation(rows)
            alloc = _apportion(len(rows), fractions, min_one=True)
            stops = np.cumsum(alloc)
            parts[0].append(rows[:stops[0]])
            parts[1].append(rows[stops[0]:stops[1]])
            parts[2].append(rows[stops[1]:stops[2]])
    else:
        rows = rng.permutation(len(ds))
        alloc = _apportion(len(rows), fractions, min_one=False)
        stops = np.cumsum(alloc)
        parts[0].append(rows[:stops[0]])
        parts[1].append(rows[stops[0]:stops[1]])
        parts[2].append(rows[stops[1]:stops[2]])

    out = [np.sort(np.concatenate(p)) if p else np.array([], dtype=int) for p in parts]
    result = SplitSet(train=out[0], val=out[1], test=out[2])
    if fractions[2] > 0:
        present = set(np.unique(ds.g[result.test]))
        missing = [g for g in np.unique(ds.g) if g not in present]
        if missing:
            raise ValueError(f"subgroups missing from test split: {missing}")
    return result


def balanced_subset(ds: Dataset, indices: np.ndarray, per_group: int,
                    seed: int) -> tuple[np.ndarray, bool]:
    """Exactly ``per_group`` indices per subgroup sampled from ``indices``.

    Sampling is without replacement when the pool allows, with replacement
    otherwise; the second return value flags whether replacement was used.
    """
    if per_group < 1:
        raise ValueError("per_group must be >= 1")
    indices = np.asarray(indices)
    rng = derive_rng(seed, "balanced-subset")
    groups = np.unique(ds.g)
    chosen = []
    replaced = False
    for g in groups:
        pool = indices[ds.g[indices] == g]
        if len(pool) == 0:
            raise ValueError(f"subgroup {ds.group_label(int(g))} absent from indices")
        if len(pool) >= per_group:
            chosen.append(rng.choice(pool, size=per_group, replace=False))
        else:
            replaced = True
            chosen.append(rng.choice(pool, size=per_group, replace=True))
    return np.concatenate(chosen), replaced


def upsample_to_max(ds: Dataset, indices: np.ndarray, seed: int) -> np.ndarray:
    """Replicate every subgroup (with replacement) to the largest subgroup size."""
    indices = np.asarray(indices)
    if len(indices) == 0:
        raise ValueError("no samples to upsample")
    rng = derive_rng(seed, "upsample")
    counts = ds.group_counts(indices)
    target = int(counts.max())
    out = []
    for g in range(ds.num_groups):
        pool = indices[ds.g[indices] == g]
        if len(pool) == 0:
            continue
        out.append(pool)
        deficit = target - len(pool)
        if deficit > 0:
            out.append(rng.choice(pool, size=deficit, replace=True))
    return np.concatenate(out)
