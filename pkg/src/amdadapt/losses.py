"""Adaptation objective: Align, Minimize, Diversify.

Align pulls the target batch's BN statistics toward the source model's
stored running statistics (a per-feature KL divergence between diagonal
Gaussians, averaged over features, summed over the selected layers).
Minimize sharpens per-frame predictions (mean clamped entropy).  Diversify
pushes the batch-averaged per-frame distribution toward uniform, blocking
the collapse where every frame predicts the same class.

All entropy terms use p·log(max(p, eps_p)): exact zeros contribute nothing
through the multiplicative factor, and the log gradient stays bounded.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ContractError
from .model import FrameDistributions, Recognizer


@dataclass(frozen=True)
class AMDWeights:
    w_a: float
    w_m: float
    w_d: float
    eps_p: float = 1e-4

    def __post_init__(self):
        if min(self.w_a, self.w_m, self.w_d) < 0:
            raise ConfigError("loss weights must be non-negative")
        if not 0.0 < self.eps_p < 1.0:
            raise ConfigError("eps_p must lie in (0, 1)")


class SourceStats:
    """Immutable per-layer Gaussian moments lifted from a source checkpoint."""

    def __init__(self, stats: dict):
        self._stats = {}
        for layer_id, (mu, var) in stats.items():
            mu = np.array(mu, dtype=np.float64)
            var = np.array(var, dtype=np.float64)
            if np.any(var <= 0):
                raise ContractError(f"layer {layer_id}: non-positive source variance")
            mu.setflags(write=False)
            var.setflags(write=False)
            self._stats[int(layer_id)] = (mu, var)

    @classmethod
    def from_model(cls, model: Recognizer, layer_ids) -> "SourceStats":
        out = {}
        for lid in layer_ids:
            layer = model.bn_layers[lid]
            if layer.batches_seen == 0:
                raise ContractError(f"BN layer {lid}: statistics never populated")
            out[lid] = (layer.running_mean.copy(), layer.running_var.copy())
        return cls(out)

    @property
    def layer_ids(self):
        return sorted(self._stats)

    def __getitem__(self, layer_id: int):
        return self._stats[layer_id]

    def __contains__(self, layer_id: int):
        return layer_id in self._stats


def align_loss(batch_stats: dict, source_stats: SourceStats):
    """Sum over layers of the feature-averaged KL to the source Gaussian.

    batch_stats maps layer id to (mu, var) tensors from an adaptation
    forward pass.  Returns (total, per-layer floats).
    """
    if set(batch_stats) != set(source_stats.layer_ids):
        raise ContractError(
            f"align layer mismatch: batch {sorted(batch_stats)} vs source {source_stats.layer_ids}"
        )
    total = None
    per_layer = {}
    for lid in sorted(batch_stats):
        mu_t, var_t = batch_stats[lid]
        mu_s, var_s = source_stats[lid]
        if mu_t.shape != mu_s.shape:
            raise ContractError(f"align layer {lid}: feature count mismatch")
        # (1/F) sum_i [ log(sd_s/sd_t) + (var_t + (mu_t-mu_s)^2) / (2 var_s) - 1/2 ]
        log_ratio = 0.5 * (Tensor(np.log(var_s)) - ad.log(var_t))
        quad = (var_t + (mu_t - Tensor(mu_s)) ** 2) / Tensor(2.0 * var_s)
        layer = (log_ratio + quad - 0.5).mean()
        per_layer[lid] = layer.item()
        total = layer if total is None else total + layer
    if total is None:
        total = Tensor(0.0)
    return total, per_layer


def _clamped_plogp(y: Tensor, eps_p: float) -> Tensor:
    return y * ad.log(ad.clamp_min(y, eps_p))


def minimize_loss(dist: FrameDistributions, eps_p: float = 1e-4) -> Tensor:
    """Mean clamped entropy of the per-frame distributions, >= 0.

    Normalized by (valid frames x classes); padded frames are excluded.
    """
    y = dist.probs()
    B, K, C = y.shape
    mask = dist.mask()
    per_frame = _clamped_plogp(y, eps_p).sum(axis=2)
    total = (per_frame * Tensor(mask)).sum()
    return -total / (mask.sum() * C)


def diversify_loss(dist: FrameDistributions, eps_p: float = 1e-4, mode: str = "probability_mean") -> Tensor:
    """Negative entropy of the batch-averaged per-frame distribution.

    In [-ln C / C, 0]; minimal when every averaged frame is uniform.  The
    average at frame k runs over the samples that actually have a frame k.
    mode "logit_mean" averages pre-softmax outputs instead (then
    renormalizes), mirroring a published pseudocode variant.
    """
    if mode not in ("probability_mean", "logit_mean"):
        raise ConfigError(f"unknown diversify mode {mode!r}")
    B, K, C = dist.log_probs.shape
    mask = dist.mask()
    counts = mask.sum(axis=0)  # samples contributing to each frame
    valid = counts > 0
    safe_counts = np.where(valid, counts, 1.0)

    m3 = Tensor(mask[:, :, None])
    if mode == "probability_mean":
        ybar = (dist.probs() * m3).sum(axis=0) / Tensor(safe_counts[:, None])
    else:
        # shift-invariance of softmax makes log-prob averaging equivalent
        zbar = (dist.log_probs * m3).sum(axis=0) / Tensor(safe_counts[:, None])
        ybar = ad.softmax(zbar, axis=-1)
        ybar = ybar * Tensor(valid.astype(np.float64)[:, None])
    total = (_clamped_plogp(ybar, eps_p) * Tensor(valid.astype(np.float64)[:, None])).sum()
    return total / (float(valid.sum()) * C)


def diversify_loss_printed(dist: FrameDistributions, eps_p: float = 1e-4) -> Tensor:
    """The formula as printed in the source derivation: batch-averaged
    p·log p rather than entropy of the batch-averaged distribution.

    Algebraically the exact negation of minimize_loss; kept as an
    independent route for the regression test that documents why the
    toolkit does not use it.
    """
    y = dist.probs()
    B, K, C = y.shape
    mask = dist.mask()
    total = (_clamped_plogp(y, eps_p) * Tensor(mask[:, :, None])).sum()
    return total / (mask.sum() * C)


@dataclass
class AMDLossReport:
    align: float
    minimize: float
    diversify: float
    total: float
    align_per_layer: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "align": self.align,
            "minimize": self.minimize,
            "diversify": self.diversify,
            "total": self.total,
            "align_per_layer": {str(k): v for k, v in self.align_per_layer.items()},
        }


def amd_loss(
    dist: FrameDistributions,
    batch_stats: dict,
    source_stats: SourceStats,
    weights: AMDWeights,
    diversify_mode: str = "probability_mean",
):
    """Weighted total L = w_a·L_a + w_m·L_m + w_d·L_d.

    Returns (total Tensor, AMDLossReport).  Zero-weight components are
    still evaluated for the report but stay off the gradient path.
    """
    la, per_layer = align_loss(batch_stats, source_stats)
    lm = minimize_loss(dist, weights.eps_p)
    ld = diversify_loss(dist, weights.eps_p, diversify_mode)

    total = Tensor(0.0)
    for w, term in ((weights.w_a, la), (weights.w_m, lm), (weights.w_d, ld)):
        if w != 0.0:
            total = total + w * term
    report = AMDLossReport(
        align=la.item(),
        minimize=lm.item(),
        diversify=ld.item(),
        total=weights.w_a * la.item() + weights.w_m * lm.item() + weights.w_d * ld.item(),
        align_per_layer=per_layer,
    )
    return total, report
