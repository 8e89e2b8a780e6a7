"""Exploration harness for picking default hyperparameters on the
ISIC-analog spec. Not part of the package; run ad hoc."""

import sys
import time

import numpy as np

from biaslab.data import SubgroupSpec, generate, split
from biaslab.methods import MethodConfig, train_method, extract_representations
from biaslab import metrics as M
from biaslab.som import som_fit, som_assign, purity

COUNTS = [[4843, 4890], [5205, 100]]
CONFLICT_Y, CONFLICT_A = 1, 1  # malignant-with-attribute
ALIGN_POS_Y, ALIGN_POS_A = 0, 1  # benign-with-attribute (bias aligning, attribute present)


def isic_ds(seed, hard=0.1, spur=6.0, core=2.0, sigma=1.0):
    spec = SubgroupSpec(counts=COUNTS, core_separation=core, spurious_strength=spur,
                        noise_sigma=sigma, hard_fraction=hard)
    ds = generate(spec, 4, 4, seed)
    return ds, split(ds, (0.6, 0.2, 0.2), seed)


def eval_cell(stack, ds, splits, seed, with_som=False):
    test = splits.test
    preds = M.predict_scores(stack, ds.X[test]).argmax(axis=1)
    m = M.subgroup_accuracy(preds, ds.y[test], ds.g[test], ds.num_groups)
    out = {
        "avg": m.average, "worst": m.worst,
        "conflict": m.per_group[ds.group_of(CONFLICT_Y, CONFLICT_A)],
        "delta_aw": m.average - m.worst,
    }
    if stack.domain_head is not None:
        dp = M.domain_probe_accuracy(stack, ds, test)
        out["probe"] = dp.per_group
        out["probe_n"] = dp.counts
    if with_som:
        Z = extract_representations(stack, ds, test)
        grid = som_fit(Z, 8, 8, 5, 0.5, 2.0, seed)
        occ = som_assign(grid, Z, ds.g[test], ds.num_groups)
        out["purity"] = purity(occ).overall_purity
    return out


def mean_q(traj):
    qs = []
    for e in traj.epochs:
        qs.extend(e.get("q_steps", []))
    return np.mean(qs, axis=0)


def main(methods, seeds, **overrides):
    base = dict(epochs=20, batch_size=128, lr=0.05, momentum=0.9, weight_decay=1e-4,
                hidden_dim=64, repr_dim=16, domain_hidden_dim=32,
                eta_q=0.05, adj_C=1.0, dann_lambda=1.0,
                per_group_finetune=16, finetune_epochs=200, finetune_lr=0.05)
    base.update(overrides)
    print("config:", base)
    for method in methods:
        t0 = time.time()
        rows = []
        for seed in seeds:
            ds, splits = isic_ds(seed)
            cfg = MethodConfig(seed=seed, **base)
            stack, traj, extras = train_method(method, ds, splits, cfg)
            cell = eval_cell(stack, ds, splits, seed, with_som=True)
            if method in ("gdro", "gdro_adj", "proposed"):
                cell["mean_q"] = mean_q(traj)
            if method == "jtt" and len(extras.get("error_set", [])):
                comp = M.error_set_composition(extras["error_set"], ds.g,
                                               [ds.group_of(CONFLICT_Y, CONFLICT_A)])
                cell["err_conflict_share"] = comp["bias_conflicting"]
                cell["err_size"] = len(extras["error_set"])
            rows.append(cell)
        dt = time.time() - t0
        print(f"== {method}  ({dt:.1f}s for {len(seeds)} seeds)")
        for seed, c in zip(seeds, rows):
            extra = ""
            if "mean_q" in c:
                extra += " mean_q=" + np.array2string(c["mean_q"], precision=3)
            if "probe" in c:
                extra += " probe=" + str({k: round(v, 2) for k, v in c["probe"].items()})
            if "err_conflict_share" in c:
                extra += f" err_share={c['err_conflict_share']:.3f} err_n={c['err_size']}"
            print(f"  seed {seed}: avg={c['avg']:.3f} worst={c['worst']:.3f} "
                  f"conflict={c['conflict']:.3f} d_aw={c['delta_aw']:.3f} "
                  f"purity={c.get('purity', float('nan')):.3f}{extra}")


if __name__ == "__main__":
    methods = sys.argv[1].split(",") if len(sys.argv) > 1 else ["erm"]
    seeds = [int(s) for s in sys.argv[2].split(",")] if len(sys.argv) > 2 else [0, 1, 2]
    over = {}
    for kv in sys.argv[3:]:
        k, v = kv.split("=")
        over[k] = float(v) if "." in v or "e" in v else int(v)
    main(methods, seeds, **over)
