"""Self-organizing-map clustering of representations and subgroup purity.

A rectangular Kohonen lattice is fit by the classic online rule: find the
best-matching unit (BMU) by Euclidean distance, then pull every prototype
toward the sample with a Gaussian neighborhood around the BMU while the
learning rate and neighborhood radius decay linearly over the schedule.
Purity scores how subgroup-separable the mapped representations are: a
node's purity is its majority-subgroup share, and the overall score is the
occupancy-weighted average (an unweighted variant is available).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from biaslab.rng import derive_rng

_SIGMA_FLOOR = 1e-3  # keeps the Gaussian neighborhood defined as sigma decays to 0


@dataclass
class SomGrid:
    height: int
    width: int
    prototypes: np.ndarray  # (height*width, dim)

    @property
    def num_nodes(self) -> int:
        return self.height * self.width

    def node_coords(self) -> np.ndarray:
        rows, cols = np.divmod(np.arange(self.num_nodes), self.width)
        return np.stack([rows, cols], axis=1).astype(float)


def som_fit(Z: np.ndarray, height: int, width: int, epochs: int,
            alpha0: float, sigma0: float, seed: int) -> SomGrid:
    """Fit a height x width lattice to the rows of Z.

    Prototypes are initialized from a random sample of Z rows; with
    epochs == 0 they are returned untouched. Updates are strictly
    sequential (sample order matters), so fitting is single-threaded.
    """
    Z = np.asarray(Z, dtype=float)
    if Z.ndim != 2 or len(Z) == 0:
        raise ValueError("Z must be a nonempty 2-D matrix")
    if height < 1 or width < 1:
        raise ValueError("grid dimensions must be >= 1")
    if alpha0 <= 0 or sigma0 <= 0:
        raise ValueError("alpha0 and sigma0 must be positive")

    rng = derive_rng(seed, "som")
    num_nodes = height * width
    init_rows = rng.choice(len(Z), size=num_nodes, replace=len(Z) < num_nodes)
    prototypes = Z[init_rows].copy()
    grid = SomGrid(height=height, width=width, prototypes=prototypes)

    coords = grid.node_coords()
    # pairwise squared lattice distances between nodes, (nodes, nodes)
    lattice_d2 = ((coords[:, None, :] - coords[None, :, :]) ** 2).sum(axis=2)

    total_steps = epochs * len(Z)
    step = 0
    for _ in range(epochs):
        for i in rng.permutation(len(Z)):
            z = Z[i]
            frac = step / total_steps
            alpha = alpha0 * (1.0 - frac)
            sigma = max(sigma0 * (1.0 - frac), _SIGMA_FLOOR)
            d2 = ((prototypes - z) ** 2).sum(axis=1)
            bmu = int(d2.argmin())
            h = np.exp(-lattice_d2[bmu] / (2.0 * sigma * sigma))
            prototypes += (alpha * h)[:, None] * (z - prototypes)
            step += 1
    return grid


def som_assign(grid: SomGrid, Z: np.ndarray, groups: np.ndarray,
               num_groups: int | None = None) -> np.ndarray:
    """Map each row of Z to its BMU; returns (nodes, groups) occupancy counts.

    Ties in BMU distance resolve to the lowest node index.
    """
    Z = np.asarray(Z, dtype=float)
    groups = np.asarray(groups)
    if len(Z) != len(groups):
        raise ValueError("Z and groups must have equal length")
    if len(Z) == 0:
        raise ValueError("nothing to assign")
    if num_groups is None:
        num_groups = int(groups.max()) + 1

    bmu = np.empty(len(Z), dtype=int)
    chunk = max(1, 2_000_000 // max(grid.num_nodes * Z.shape[1], 1))
    for start in range(0, len(Z), chunk):
        block = Z[start:start + chunk]
        d2 = ((block[:, None, :] - grid.prototypes[None, :, :]) ** 2).sum(axis=2)
        bmu[start:start + chunk] = d2.argmin(axis=1)

    occupancy = np.zeros((grid.num_nodes, num_groups), dtype=int)
    np.add.at(occupancy, (bmu, groups), 1)
    return occupancy


@dataclass
class PurityReport:
    per_node_purity: dict[int, float]
    overall_purity: float
    occupancy: np.ndarray
    weighted: bool = True

    def to_json_dict(self) -> dict:
        return {
            "overall_purity": self.overall_purity,
            "weighted": self.weighted,
            "per_node_purity": {str(k): v for k, v in self.per_node_purity.items()},
            "occupancy": self.occupancy.tolist(),
        }


def purity(occupancy: np.ndarray, weighted: bool = True) -> PurityReport:
    """Majority-subgroup share per occupied node and its average.

    The default average weights nodes by occupancy (sum of majority counts
    over total count); ``weighted=False`` averages the per-node purities
    uniformly over occupied nodes. Empty nodes carry no samples and are
    excluded either way.
    """
    occupancy = np.asarray(occupancy)
    if occupancy.ndim != 2:
        raise ValueError("occupancy must be (nodes, groups)")
    node_totals = occupancy.sum(axis=1)
    total = int(node_totals.sum())
    if total < 1:
        raise ValueError("empty occupancy")

    occupied = np.flatnonzero(node_totals > 0)
    majority = occupancy[occupied].max(axis=1)
    per_node = {int(n): float(m) / int(t)
                for n, m, t in zip(occupied, majority, node_totals[occupied])}
    if weighted:
        overall = float(majority.sum()) / total
    else:
        overall = float(np.mean(list(per_node.values())))
    return PurityReport(per_node_purity=per_node, overall_purity=overall,
                        occupancy=occupancy, weighted=weighted)
