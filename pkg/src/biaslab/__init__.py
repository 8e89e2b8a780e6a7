"""biaslab: training strategies and diagnostics for subgroup-robust classification.

The package trains small dense classifiers on datasets with controllable
subgroup underrepresentation and compares debiasing strategies (ERM,
importance weighting, group DRO with and without group adjustment, JTT,
domain-adversarial training, last-layer retraining, and a combined
adversarial + group-DRO pipeline) using worst-group / disparity metrics
and self-organizing-map cluster purity.
"""

__version__ = "0.1.0"

from biaslab.rng import derive_rng

__all__ = ["derive_rng", "__version__"]
