"""Training strategies for subgroup-robust classification.

Every strategy trains the same stack (dense encoder, linear task head,
optional adversarial domain head behind a gradient-reversal junction) and
differs only in how per-sample loss weights are formed, what stream it
trains on, and what happens afterwards:

  erm       mean cross-entropy over the train split
  iw        fixed importance weights proportional to 1 / subgroup size
  gdro      per-batch exponentiated-ascent adversary over subgroup losses
  gdro_adj  gdro with C / sqrt(N_g) added to the adversary's losses
  jtt       two stages: short ERM, then retrain upweighting its error set
  dann      task loss + attribute loss routed through gradient reversal,
            trained on an attribute-balanced (upsampled) stream
  dfr       ERM, then retrain only the task head on a balanced val subset
  proposed  dann architecture with the gdro objective as the task loss,
            followed by the same head retraining as dfr

All randomness is drawn from streams derived from the config seed alone
(not the method id), so strategies that are formally equivalent on a given
dataset (e.g. iw on balanced data vs erm) produce bit-identical parameter
trajectories.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field, asdict

import numpy as np

from biaslab import metrics as M
from biaslab import nn
from biaslab.data import Dataset, SplitSet, balanced_subset, upsample_to_max
from biaslab.rng import derive_rng

METHOD_IDS = ("erm", "iw", "gdro", "gdro_adj", "jtt", "dann", "dfr", "proposed")

_SELECT_MODES = ("average", "worst_group", "final")
_JTT_RULES = ("misclassified", "top_loss")


@dataclass
class MethodConfig:
    method: str = "erm"
    epochs: int = 40
    batch_size: int = 128
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-4
    hidden_dim: int = 32
    repr_dim: int = 8
    domain_hidden_dim: int = 32
    eta_q: float = 0.05
    adj_C: float = 1.0
    jtt_T: int = 5
    jtt_lambda: float = 20.0
    jtt_rule: str = "misclassified"
    jtt_top_fraction: float = 0.1
    dann_lambda: float = 0.1
    domain_momentum: float | None = None  # None: use `momentum`
    per_group_finetune: int = 20
    finetune_epochs: int = 300
    finetune_lr: float = 0.02
    finetune_warm_start: bool = False
    proposed_adjustment: bool = True
    select: str | None = None  # None: per-method default
    seed: int = 0

    def validate(self) -> None:
        if self.method not in METHOD_IDS:
            raise ValueError(f"unknown method id '{self.method}'")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.lr <= 0 or not 0 <= self.momentum < 1 or self.weight_decay < 0:
            raise ValueError("bad optimizer settings")
        if min(self.hidden_dim, self.repr_dim, self.domain_hidden_dim) < 1:
            raise ValueError("layer widths must be >= 1")
        if self.eta_q < 0 or self.adj_C < 0:
            raise ValueError("eta_q and adj_C must be nonnegative")
        if self.jtt_T < 1 or self.jtt_lambda < 0 or self.jtt_rule not in _JTT_RULES:
            raise ValueError("bad jtt settings")
        if not 0 < self.jtt_top_fraction <= 1:
            raise ValueError("jtt_top_fraction must be in (0, 1]")
        if self.dann_lambda < 0:
            raise ValueError("dann_lambda must be nonnegative")
        if self.domain_momentum is not None and not 0 <= self.domain_momentum < 1:
            raise ValueError("domain_momentum must be in [0, 1)")
        if self.per_group_finetune < 1 or self.finetune_epochs < 0 or self.finetune_lr <= 0:
            raise ValueError("bad fine-tune settings")
        if self.select is not None and self.select not in _SELECT_MODES:
            raise ValueError(f"unknown selection criterion '{self.select}'")


@dataclass
class Trajectory:
    """Per-epoch diagnostics plus run-level metadata."""

    epochs: list[dict] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(e, sort_keys=True) + "\n" for e in self.epochs)


@dataclass
class ModelStack:
    encoder: nn.Network
    task_head: nn.Network
    domain_head: nn.Network | None = None

    def params(self) -> dict[str, np.ndarray]:
        out = {f"encoder.{k}": v for k, v in self.encoder.params().items()}
        out.update({f"task_head.{k}": v for k, v in self.task_head.params().items()})
        if self.domain_head is not None:
            out.update({f"domain_head.{k}": v for k, v in self.domain_head.params().items()})
        return out

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params().items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for k, v in self.params().items():
            v[...] = snap[k]

    def logits(self, X: np.ndarray) -> np.ndarray:
        return self.task_head.forward(self.encoder.forward(X))

    def representation(self, X: np.ndarray) -> np.ndarray:
        return self.encoder.forward(X)


def build_stack(cfg: MethodConfig, input_dim: int, num_classes: int,
                num_attributes: int, rng: np.random.Generator,
                with_domain: bool) -> ModelStack:
    """He-initialized stack; parameter draw order is fixed for determinism."""
    encoder = nn.Network([
        nn.Dense(input_dim, cfg.hidden_dim, rng),
        nn.Relu(),
        nn.Dense(cfg.hidden_dim, cfg.repr_dim, rng),
    ])
    task_head = nn.Network([nn.Dense(cfg.repr_dim, num_classes, rng)])
    domain_head = None
    if with_domain:
        domain_head = nn.Network([
            nn.GradReversal(cfg.dann_lambda),
            nn.Dense(cfg.repr_dim, cfg.domain_hidden_dim, rng),
            nn.Relu(),
            nn.Dense(cfg.domain_hidden_dim, num_attributes, rng),
        ])
    return ModelStack(encoder=encoder, task_head=task_head, domain_head=domain_head)


# ---------------------------------------------------------------------------
# group-DRO adversary

def gdro_weight_update(q, losses, eta_q: float) -> np.ndarray:
    """Exponentiated ascent on the simplex: q'_g ∝ q_g * exp(eta_q * L_g)."""
    q = np.asarray(q, dtype=float)
    losses = np.asarray(losses, dtype=float)
    if q.shape != losses.shape:
        raise ValueError("q and losses must have the same length")
    if (q < 0).any() or abs(q.sum() - 1.0) > 1e-9:
        raise ValueError("q must lie on the probability simplex")
    if not np.all(np.isfinite(losses)):
        raise ValueError("non-finite group losses")
    with np.errstate(divide="ignore"):
        logw = np.log(q) + eta_q * losses
    logw -= logw.max()
    w = np.exp(logw)
    out = w / w.sum()
    assert abs(out.sum() - 1.0) <= 1e-9 and (out >= 0).all()
    return out


def adjusted_group_loss(L_g, N_g, C: float):
    """Group loss plus the size adjustment C / sqrt(N_g).

    Feeds only the adversary's weight update, never the descent loss.
    """
    N = np.asarray(N_g, dtype=float)
    if (N < 1).any():
        raise ValueError("subgroup sizes must be >= 1")
    return np.asarray(L_g, dtype=float) + C / np.sqrt(N)


def _group_mean_losses(losses: np.ndarray, groups: np.ndarray,
                       num_groups: int) -> tuple[np.ndarray, np.ndarray]:
    """Mean per-group loss and a presence mask; absent groups hold 0.0."""
    sums = np.bincount(groups, weights=losses, minlength=num_groups)
    counts = np.bincount(groups, minlength=num_groups)
    present = counts > 0
    means = np.zeros(num_groups)
    means[present] = sums[present] / counts[present]
    return means, present


def group_losses(model: ModelStack, X: np.ndarray, y: np.ndarray,
                 groups: np.ndarray, num_groups: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-subgroup mean cross-entropy on a batch.

    Returns (L, present); entries of L where present is False carry no
    information (absent subgroups are flagged, not zero-filled).
    """
    losses = nn.per_sample_xent(model.logits(X), y)
    return _group_mean_losses(losses, np.asarray(groups), num_groups)


class _Adversary:
    """Per-batch GDRO state: simplex weights over the subgroups present in
    training and their last-seen losses. Absent subgroups carry weight 0."""

    def __init__(self, train_counts: np.ndarray, num_classes: int, eta_q: float,
                 adjustment: np.ndarray | None):
        active = train_counts > 0
        self.q = np.where(active, 1.0 / active.sum(), 0.0)
        # groups not yet seen carry the uniform-prediction loss as a neutral value
        self.last = np.full(len(train_counts), math.log(num_classes))
        self.eta_q = eta_q
        self.adjustment = adjustment

    def update(self, batch_L: np.ndarray, present: np.ndarray) -> np.ndarray:
        self.last = np.where(present, batch_L, self.last)
        L = self.last if self.adjustment is None else self.last + self.adjustment
        self.q = gdro_weight_update(self.q, L, self.eta_q)
        return self.q


def _adversary_for(cfg: MethodConfig, ds: Dataset, counts: np.ndarray,
                   with_adjustment: bool) -> _Adversary:
    adjustment = None
    if with_adjustment:
        adjustment = np.zeros(ds.num_groups)
        nz = counts > 0
        adjustment[nz] = adjusted_group_loss(0.0, counts[nz], cfg.adj_C)
    return _Adversary(counts, ds.num_classes, cfg.eta_q, adjustment)


def _gdro_weight_fn(adversary: _Adversary, num_groups: int):
    def weight_fn(rows, losses, group_L, present, gb):
        batch_counts = np.bincount(gb, minlength=num_groups)
        per_group_w = np.zeros(num_groups)
        nz = batch_counts > 0
        per_group_w[nz] = adversary.q[nz] / batch_counts[nz]
        return per_group_w[gb]
    return weight_fn


# ---------------------------------------------------------------------------
# shared training engine

def _evaluate(stack: ModelStack, ds: Dataset, idx: np.ndarray) -> M.SubgroupMetrics:
    preds = stack.logits(ds.X[idx]).argmax(axis=1)
    return M.subgroup_accuracy(preds, ds.y[idx], ds.g[idx], ds.num_groups)


def _erm_weight_fn(rows, losses, group_L, present, gb):
    return np.full(len(rows), 1.0 / len(rows))


def _train_engine(ds: Dataset, cfg: MethodConfig, stack: ModelStack,
                  stream: np.ndarray, val_idx: np.ndarray, *,
                  weight_fn, select: str, adversary: _Adversary | None = None,
                  use_domain: bool = False,
                  shuffle_tags: tuple[str, ...] = ()) -> Trajectory:
    """The one SGD loop every strategy shares.

    ``weight_fn(batch_rows, losses, group_L, present, batch_groups)`` returns
    the loss weights for the step (scaled so ERM corresponds to 1/B). When an
    adversary is given it is updated per batch before weights are formed.
    """
    G = ds.num_groups
    shuffle_rng = derive_rng(cfg.seed, "shuffle", *shuffle_tags)
    params = stack.params()
    if use_domain and cfg.domain_momentum is not None:
        # the adversarial game is damped separately: momentum spins min-max
        # dynamics, so the domain head may use its own coefficient
        task_params = {k: v for k, v in params.items() if not k.startswith("domain_head.")}
        dom_params = {k: v for k, v in params.items() if k.startswith("domain_head.")}
        opts = [nn.SGD(task_params, cfg.lr, cfg.momentum, cfg.weight_decay),
                nn.SGD(dom_params, cfg.lr, cfg.domain_momentum, cfg.weight_decay)]
    else:
        opts = [nn.SGD(params, cfg.lr, cfg.momentum, cfg.weight_decay)]
    traj = Trajectory()
    best_score, best_snap, best_epoch = -np.inf, None, None

    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(len(stream))
        loss_sums = np.zeros(G)
        loss_counts = np.zeros(G, dtype=int)
        q_steps: list[list[float]] = []
        total_loss, total_n = 0.0, 0

        for start in range(0, len(stream), cfg.batch_size):
            rows = stream[order[start:start + cfg.batch_size]]
            xb, yb, gb = ds.X[rows], ds.y[rows], ds.g[rows]

            z = stack.encoder.forward(xb)
            stack.task_head.forward(z)
            losses = stack.task_head.per_sample_loss(yb)
            group_L, present = _group_mean_losses(losses, gb, G)
            if adversary is not None:
                adversary.update(group_L, present)
                q_steps.append([float(v) for v in adversary.q])

            w = weight_fn(rows, losses, group_L, present, gb)
            grads_task, dz = stack.task_head.backward(w)
            merged = {f"task_head.{k}": v for k, v in grads_task.items()}

            if use_domain:
                stack.domain_head.forward(z)
                stack.domain_head.per_sample_loss(ds.a[rows])
                grads_dom, dz_dom = stack.domain_head.backward(
                    np.full(len(rows), 1.0 / len(rows)))
                merged.update({f"domain_head.{k}": v for k, v in grads_dom.items()})
                dz = dz + dz_dom

            grads_enc, _ = stack.encoder.backward_from(dz)
            merged.update({f"encoder.{k}": v for k, v in grads_enc.items()})
            for opt in opts:
                opt.step({k: g for k, g in merged.items() if k in opt.params})

            loss_sums += np.bincount(gb, weights=losses, minlength=G)
            loss_counts += np.bincount(gb, minlength=G)
            total_loss += float(losses.sum())
            total_n += len(rows)

        entry: dict = {"epoch": epoch, "train_loss": total_loss / max(total_n, 1)}
        seen = loss_counts > 0
        entry["train_group_loss"] = {
            str(g): float(loss_sums[g] / loss_counts[g]) for g in np.flatnonzero(seen)
        }
        if adversary is not None:
            entry["q"] = [float(v) for v in adversary.q]
            entry["q_mean"] = [float(v) for v in np.mean(q_steps, axis=0)]
            entry["q_steps"] = q_steps
        if len(val_idx):
            vm = _evaluate(stack, ds, val_idx)
            entry["val_acc_avg"] = vm.average
            entry["val_acc_worst"] = vm.worst
            entry["val_acc_group"] = {str(k): v for k, v in vm.per_group.items()}
            if use_domain:
                dm = M.domain_probe_accuracy(stack, ds, val_idx)
                entry["domain_val_acc_group"] = {str(k): v for k, v in dm.per_group.items()}
            if select != "final":
                score = vm.worst if select == "worst_group" else vm.average
                if score > best_score:
                    best_score, best_snap, best_epoch = score, stack.snapshot(), epoch
        traj.epochs.append(entry)

    if best_snap is not None:
        stack.restore(best_snap)
    traj.meta["selection"] = select
    if best_epoch is not None:
        traj.meta["best_epoch"] = best_epoch
    return traj


# ---------------------------------------------------------------------------
# the strategies

def train_erm(ds: Dataset, splits: SplitSet, cfg: MethodConfig) -> tuple[ModelStack, Trajectory]:
    """Plain empirical risk minimization: per-sample weight 1/B."""
    cfg.validate()
    rng = derive_rng(cfg.seed, "init")
    stack = build_stack(cfg, ds.dim, ds.num_classes, ds.num_attributes, rng, with_domain=False)
    traj = _train_engine(ds, cfg, stack, splits.train, splits.val,
                         weight_fn=_erm_weight_fn,
                         select=cfg.select if cfg.select is not None else "average")
    traj.meta["method"] = "erm"
    return stack, traj


def train_iw(ds: Dataset, splits: SplitSet, cfg: MethodConfig) -> tuple[ModelStack, Trajectory]:
    """Importance weighting with fixed weights ∝ 1/N_g, averaging 1 per batch.

    Weights are carried as the ratio N_min/N_g so they collapse to exactly
    1.0 on balanced data, making the run bit-identical to ERM there.
    """
    cfg.validate()
    rng = derive_rng(cfg.seed, "init")
    stack = build_stack(cfg, ds.dim, ds.num_classes, ds.num_attributes, rng, with_domain=False)
    counts = ds.group_counts(splits.train)
    nz = counts > 0
    rel = np.zeros(ds.num_groups)
    rel[nz] = counts[nz].min() / counts[nz]

    def weight_fn(rows, losses, group_L, present, gb):
        w = rel[gb]
        return w / w.sum()

    traj = _train_engine(ds, cfg, stack, splits.train, splits.val, weight_fn=weight_fn,
                         select=cfg.select if cfg.select is not None else "worst_group")
    traj.meta["method"] = "iw"
    traj.meta["group_weights"] = {str(g): float(v) for g, v in enumerate(rel) if v > 0}
    return stack, traj


def train_gdro(ds: Dataset, splits: SplitSet, cfg: MethodConfig,
               with_adjustment: bool = False) -> tuple[ModelStack, Trajectory]:
    """Group DRO: descend on sum_g q_g * L_g with q updated per batch by
    exponentiated ascent; optionally add C/sqrt(N_g) inside the ascent."""
    cfg.validate()
    rng = derive_rng(cfg.seed, "init")
    stack = build_stack(cfg, ds.dim, ds.num_classes, ds.num_attributes, rng, with_domain=False)
    counts = ds.group_counts(splits.train)
    adversary = _adversary_for(cfg, ds, counts, with_adjustment)

    traj = _train_engine(ds, cfg, stack, splits.train, splits.val,
                         weight_fn=_gdro_weight_fn(adversary, ds.num_groups),
                         adversary=adversary,
                         select=cfg.select if cfg.select is not None else "worst_group")
    traj.meta["method"] = "gdro_adj" if with_adjustment else "gdro"
    traj.meta["group_sizes"] = {str(g): int(c) for g, c in enumerate(counts) if c}
    return stack, traj


def train_jtt(ds: Dataset, splits: SplitSet, cfg: MethodConfig
              ) -> tuple[ModelStack, Trajectory, np.ndarray]:
    """Just-train-twice: short ERM pass, then retrain from scratch with the
    first pass's under-performing train samples upweighted by jtt_lambda."""
    cfg.validate()
    stage1_cfg = MethodConfig(**{**asdict(cfg), "epochs": cfg.jtt_T, "select": "final"})
    rng1 = derive_rng(cfg.seed, "init", "jtt-stage1")
    stage1 = build_stack(cfg, ds.dim, ds.num_classes, ds.num_attributes, rng1, with_domain=False)
    _train_engine(ds, stage1_cfg, stage1, splits.train, splits.val,
                  weight_fn=_erm_weight_fn, select="final",
                  shuffle_tags=("jtt-stage1",))

    logits = stage1.logits(ds.X[splits.train])
    if cfg.jtt_rule == "misclassified":
        bad = logits.argmax(axis=1) != ds.y[splits.train]
    else:
        losses = nn.per_sample_xent(logits, ds.y[splits.train])
        k = max(1, int(round(cfg.jtt_top_fraction * len(losses))))
        thresh = np.partition(losses, -k)[-k]
        bad = losses >= thresh
    error_set = splits.train[bad]

    weights = np.ones(len(ds))
    if len(error_set) == 0:
        warnings.warn("JTT: empty error set after stage 1; stage 2 degenerates to ERM")
    weights[error_set] = cfg.jtt_lambda

    # stage 2 is a from-scratch retrain; it re-uses the plain init/shuffle
    # streams, so jtt_lambda == 1 is exactly an ERM run
    rng2 = derive_rng(cfg.seed, "init")
    stack = build_stack(cfg, ds.dim, ds.num_classes, ds.num_attributes, rng2, with_domain=False)

    def weight_fn(rows, losses, group_L, present, gb):
        return weights[rows] / len(rows)

    traj = _train_engine(ds, cfg, stack, splits.train, splits.val, weight_fn=weight_fn,
                         select=cfg.select if cfg.select is not None else "worst_group")
    traj.meta["method"] = "jtt"
    traj.meta["error_set_size"] = int(len(error_set))
    if len(error_set):
        traj.meta["error_set_composition"] = M.error_set_composition(
            error_set, ds.g, bias_conflicting_ids=[])["per_group"]
    return stack, traj, error_set


def train_dann(ds: Dataset, splits: SplitSet, cfg: MethodConfig) -> tuple[ModelStack, Trajectory]:
    """Domain-adversarial training: attribute head behind gradient reversal,
    trained jointly with the task on an upsampled (subgroup-balanced) stream."""
    cfg.validate()
    rng = derive_rng(cfg.seed, "init")
    stack = build_stack(cfg, ds.dim, ds.num_classes, ds.num_attributes, rng, with_domain=True)
    stream = upsample_to_max(ds, splits.train, cfg.seed)
    traj = _train_engine(ds, cfg, stack, stream, splits.val,
                         weight_fn=_erm_weight_fn, use_domain=True,
                         select=cfg.select if cfg.select is not None else "worst_group")
    traj.meta["method"] = "dann"
    traj.meta["stream_size"] = int(len(stream))
    return stack, traj


def _finetune_head(stack: ModelStack, ds: Dataset, subset: np.ndarray,
                   cfg: MethodConfig) -> dict:
    """Freeze the encoder and retrain the task head on the given subset."""
    if not cfg.finetune_warm_start:
        rng = derive_rng(cfg.seed, "init", "head-finetune")
        fresh = nn.Network([nn.Dense(cfg.repr_dim, ds.num_classes, rng)])
        stack.task_head.set_params(fresh.params())
    Z = stack.encoder.forward(ds.X[subset])  # encoder frozen: representations fixed
    y = ds.y[subset]
    head = stack.task_head
    opt = nn.SGD(head.params(), cfg.finetune_lr, cfg.momentum, cfg.weight_decay)
    shuffle_rng = derive_rng(cfg.seed, "shuffle", "head-finetune")
    batch = min(cfg.batch_size, len(subset))
    for _ in range(cfg.finetune_epochs):
        order = shuffle_rng.permutation(len(subset))
        for start in range(0, len(subset), batch):
            rows = order[start:start + batch]
            head.forward(Z[rows])
            head.per_sample_loss(y[rows])
            grads, _ = head.backward(np.full(len(rows), 1.0 / len(rows)))
            opt.step(grads)
    return {"subset_size": int(len(subset)), "epochs": cfg.finetune_epochs,
            "warm_start": cfg.finetune_warm_start}


def train_dfr(ds: Dataset, splits: SplitSet, cfg: MethodConfig) -> tuple[ModelStack, Trajectory]:
    """Deep-feature-reweighting style pipeline: biased ERM representation,
    then a task head retrained on a subgroup-balanced validation subset."""
    cfg.validate()
    stack, traj = train_erm(ds, splits, cfg)
    subset, replaced = balanced_subset(ds, splits.val, cfg.per_group_finetune, cfg.seed)
    info = _finetune_head(stack, ds, subset, cfg)
    info["per_group"] = cfg.per_group_finetune
    info["replacement"] = replaced
    traj.meta["method"] = "dfr"
    traj.meta["finetune"] = info
    return stack, traj


def train_proposed(ds: Dataset, splits: SplitSet, cfg: MethodConfig) -> tuple[ModelStack, Trajectory]:
    """Adversarial invariance with a robust task objective: the dann stack
    trained with gdro's weighted group loss as the task term (adjustment per
    config), then the dfr-style balanced head retraining."""
    cfg.validate()
    rng = derive_rng(cfg.seed, "init")
    stack = build_stack(cfg, ds.dim, ds.num_classes, ds.num_attributes, rng, with_domain=True)
    stream = upsample_to_max(ds, splits.train, cfg.seed)
    counts = ds.group_counts(splits.train)
    adversary = _adversary_for(cfg, ds, counts, cfg.proposed_adjustment)

    traj = _train_engine(ds, cfg, stack, stream, splits.val,
                         weight_fn=_gdro_weight_fn(adversary, ds.num_groups),
                         adversary=adversary, use_domain=True,
                         select=cfg.select if cfg.select is not None else "worst_group")
    subset, replaced = balanced_subset(ds, splits.val, cfg.per_group_finetune, cfg.seed)
    info = _finetune_head(stack, ds, subset, cfg)
    info["per_group"] = cfg.per_group_finetune
    info["replacement"] = replaced
    traj.meta["method"] = "proposed"
    traj.meta["finetune"] = info
    traj.meta["group_sizes"] = {str(g): int(c) for g, c in enumerate(counts) if c}
    return stack, traj


def extract_representations(model: ModelStack, ds: Dataset, indices) -> np.ndarray:
    """Row i is the encoder output for sample indices[i]; deterministic."""
    indices = np.asarray(indices)
    return model.representation(ds.X[indices])


def train_method(method: str, ds: Dataset, splits: SplitSet,
                 cfg: MethodConfig) -> tuple[ModelStack, Trajectory, dict]:
    """Dispatch on a method id; extras carries method-specific outputs."""
    if method not in METHOD_IDS:
        raise ValueError(f"unknown method id '{method}'")
    cfg = MethodConfig(**{**asdict(cfg), "method": method})
    if method == "erm":
        stack, traj = train_erm(ds, splits, cfg)
    elif method == "iw":
        stack, traj = train_iw(ds, splits, cfg)
    elif method == "gdro":
        stack, traj = train_gdro(ds, splits, cfg, with_adjustment=False)
    elif method == "gdro_adj":
        stack, traj = train_gdro(ds, splits, cfg, with_adjustment=True)
    elif method == "jtt":
        stack, traj, error_set = train_jtt(ds, splits, cfg)
        return stack, traj, {"error_set": error_set}
    elif method == "dann":
        stack, traj = train_dann(ds, splits, cfg)
    elif method == "dfr":
        stack, traj = train_dfr(ds, splits, cfg)
    else:
        stack, traj = train_proposed(ds, splits, cfg)
    return stack, traj, {}
