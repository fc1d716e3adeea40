"""Convolutional-recurrent text recognizer with adaptation-aware BN.

Architecture: a stack of conv3x3 + BN + leaky-ReLU blocks with optional 2x2
pooling, columns of the final feature map taken as frames, one bidirectional
gated recurrent layer, and a linear head with log-softmax over the extended
alphabet.

BN layers carry three behaviours:

* train: normalize with batch statistics, update the running averages;
* eval:  normalize with the stored running statistics;
* adapt: normalize with the stored (source) statistics so downstream
  frozen layers keep seeing source-calibrated activations, while batch
  statistics of the layers selected for alignment are computed on the side
  as differentiable tensors.

The recurrence is masked per sample so that a sample's frame distributions
do not depend on how much right-padding its batch happened to have.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .alphabet import Alphabet
from .autodiff import Tensor
from .errors import ConfigError, ContractError
from .rng import Rng, derive

PAD_MARGIN = 16  # right padding per image, px; keeps edge frames' receptive fields on own pixels


@dataclass(frozen=True)
class ConvBlock:
    out_channels: int
    bn: bool = True
    pool: bool = False


@dataclass(frozen=True)
class ModelConfig:
    alphabet: str
    conv_blocks: tuple = (
        ConvBlock(8, bn=True, pool=True),
        ConvBlock(16, bn=True, pool=True),
        ConvBlock(32, bn=True, pool=False),
    )
    hidden_size: int = 64
    bidirectional: bool = True
    input_height: int = 32
    leaky_slope: float = 0.01
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1
    # normalize with batch statistics during adaptation instead of the
    # stored source statistics (off by default; kept testable)
    adapt_batch_norm: bool = False

    def __post_init__(self):
        if not any(b.bn for b in self.conv_blocks):
            raise ConfigError("model needs at least one BN layer")
        if self.input_height % self.downsample():
            raise ConfigError("input height must be divisible by the pooling factor")

    def downsample(self) -> int:
        return 2 ** sum(1 for b in self.conv_blocks if b.pool)

    def frame_count(self, width: int) -> int:
        """Frames produced for an image of the given true width."""
        d = self.downsample()
        return -(-width // d)

    def bn_layer_ids(self) -> list:
        """Identifiers of BN layers in depth order, 0-based."""
        return list(range(sum(1 for b in self.conv_blocks if b.bn)))

    def to_dict(self) -> dict:
        return {
            "alphabet": self.alphabet,
            "conv_blocks": [[b.out_channels, b.bn, b.pool] for b in self.conv_blocks],
            "hidden_size": self.hidden_size,
            "bidirectional": self.bidirectional,
            "input_height": self.input_height,
            "leaky_slope": self.leaky_slope,
            "bn_eps": self.bn_eps,
            "bn_momentum": self.bn_momentum,
            "adapt_batch_norm": self.adapt_batch_norm,
        }

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        blocks = tuple(ConvBlock(int(c), bool(bn), bool(pool)) for c, bn, pool in d["conv_blocks"])
        return ModelConfig(
            alphabet=d["alphabet"],
            conv_blocks=blocks,
            hidden_size=int(d["hidden_size"]),
            bidirectional=bool(d["bidirectional"]),
            input_height=int(d["input_height"]),
            leaky_slope=float(d["leaky_slope"]),
            bn_eps=float(d["bn_eps"]),
            bn_momentum=float(d["bn_momentum"]),
            adapt_batch_norm=bool(d.get("adapt_batch_norm", False)),
        )


@dataclass
class FrameDistributions:
    """Per-frame class distributions for a batch.

    log_probs has shape (B, K, C); frame_counts gives each sample's true
    frame count K_i, and frames at k >= K_i are padding that every consumer
    must skip.
    """

    log_probs: Tensor
    frame_counts: list

    def probs(self) -> Tensor:
        return ad.exp(self.log_probs)

    def mask(self) -> np.ndarray:
        """(B, K) float mask, 1 on valid frames."""
        B, K, _ = self.log_probs.shape
        m = np.zeros((B, K))
        for i, k in enumerate(self.frame_counts):
            m[i, :k] = 1.0
        return m


class BatchNormLayer:
    """Per-channel BN with running statistics and an adaptation path."""

    def __init__(self, layer_id: int, channels: int, eps: float, momentum: float):
        self.layer_id = layer_id
        self.channels = channels
        self.eps = eps
        self.momentum = momentum
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.batches_seen = 0
        self.last_batch_mean = None
        self.last_batch_var = None

    def _affine(self, normalized: Tensor) -> Tensor:
        g = ad.reshape(self.gamma, (1, self.channels, 1, 1))
        b = ad.reshape(self.beta, (1, self.channels, 1, 1))
        return g * normalized + b

    def _batch_stats(self, x: Tensor):
        mu = x.mean(axis=(0, 2, 3), keepdims=True)
        var = ((x - mu) ** 2).mean(axis=(0, 2, 3), keepdims=True)
        return mu, var

    def forward_train(self, x: Tensor) -> Tensor:
        B, C, H, W = x.shape
        if B * H * W < 2:
            raise ContractError("BN training needs at least 2 values per channel")
        mu, var = self._batch_stats(x)
        out = self._affine((x - mu) / ad.sqrt(var + self.eps))
        mu_b = mu.data.reshape(C)
        var_b = var.data.reshape(C)
        rho = self.momentum
        self.running_mean = (1.0 - rho) * self.running_mean + rho * mu_b
        self.running_var = (1.0 - rho) * self.running_var + rho * var_b
        self.batches_seen += 1
        self.last_batch_mean = mu_b
        self.last_batch_var = var_b
        return out

    def forward_eval(self, x: Tensor) -> Tensor:
        if self.batches_seen == 0:
            raise ContractError(f"BN layer {self.layer_id}: statistics never populated")
        mu = self.running_mean.reshape(1, self.channels, 1, 1)
        sd = np.sqrt(self.running_var + self.eps).reshape(1, self.channels, 1, 1)
        return self._affine((x - Tensor(mu)) / Tensor(sd))

    def forward_adapt(self, x: Tensor, collect: bool, use_batch_stats: bool):
        """Stored-statistic normalization; optionally returns batch stats.

        The returned (mu, var) tensors stay attached to the graph so the
        alignment loss can differentiate through them.
        """
        if self.batches_seen == 0:
            raise ContractError(f"BN layer {self.layer_id}: statistics never populated")
        stats = None
        if collect or use_batch_stats:
            mu, var = self._batch_stats(x)
            stats = (ad.reshape(mu, (self.channels,)), ad.reshape(var, (self.channels,)))
        if use_batch_stats:
            out = self._affine((x - stats[0].reshape(1, -1, 1, 1)) / ad.sqrt(stats[1].reshape(1, -1, 1, 1) + self.eps))
        else:
            out = self.forward_eval(x)
        return out, stats


class Recognizer:
    """The complete model: conv trunk, bidirectional recurrence, linear head."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.alphabet = Alphabet(config.alphabet)
        self.params = {}  # name -> Tensor, construction order
        self.bn_layers = []
        self._build(seed)

    # -- construction ------------------------------------------------------

    def _uniform(self, rng: Rng, shape, fan_in: int) -> Tensor:
        bound = (1.0 / fan_in) ** 0.5
        data = rng.random_array(shape) * (2.0 * bound) - bound
        return Tensor(data, requires_grad=True)

    def _build(self, seed: int):
        cfg = self.config
        rng = Rng(derive(seed, 101))
        in_ch = 1
        for bi, block in enumerate(cfg.conv_blocks):
            fan = in_ch * 9
            self.params[f"conv{bi}.weight"] = self._uniform(rng, (block.out_channels, in_ch, 3, 3), fan)
            self.params[f"conv{bi}.bias"] = self._uniform(rng, (block.out_channels,), fan)
            if block.bn:
                layer = BatchNormLayer(len(self.bn_layers), block.out_channels, cfg.bn_eps, cfg.bn_momentum)
                self.bn_layers.append(layer)
                self.params[f"bn{layer.layer_id}.gamma"] = layer.gamma
                self.params[f"bn{layer.layer_id}.beta"] = layer.beta
            in_ch = block.out_channels

        feat = in_ch * (cfg.input_height // cfg.downsample())
        H = cfg.hidden_size
        directions = ["fw", "bw"] if cfg.bidirectional else ["fw"]
        for d in directions:
            self.params[f"gru.{d}.wx"] = self._uniform(rng, (feat, 3 * H), feat)
            self.params[f"gru.{d}.wh"] = self._uniform(rng, (H, 3 * H), H)
            self.params[f"gru.{d}.bx"] = self._uniform(rng, (3 * H,), feat)
            self.params[f"gru.{d}.bh"] = self._uniform(rng, (3 * H,), H)
        head_in = H * len(directions)
        self.params["head.weight"] = self._uniform(rng, (head_in, self.alphabet.num_classes), head_in)
        self.params["head.bias"] = self._uniform(rng, (self.alphabet.num_classes,), head_in)

    # -- persistence hooks (checkpoint module drives these) -----------------

    def state_arrays(self) -> dict:
        """All persistent arrays: parameters plus BN running statistics."""
        out = {name: t.data for name, t in self.params.items()}
        for layer in self.bn_layers:
            out[f"bn{layer.layer_id}.running_mean"] = layer.running_mean
            out[f"bn{layer.layer_id}.running_var"] = layer.running_var
        return out

    def load_state_arrays(self, arrays: dict, bn_batches: dict):
        for name, t in self.params.items():
            src = arrays[name]
            if src.shape != t.data.shape:
                raise ContractError(f"shape mismatch for {name}")
            t.data = np.ascontiguousarray(src)
        for layer in self.bn_layers:
            layer.running_mean = np.ascontiguousarray(arrays[f"bn{layer.layer_id}.running_mean"])
            layer.running_var = np.ascontiguousarray(arrays[f"bn{layer.layer_id}.running_var"])
            layer.batches_seen = int(bn_batches[str(layer.layer_id)])

    # -- trainable scope -----------------------------------------------------

    def set_trainable_scope(self, selected_ids) -> dict:
        """Restrict training to layers strictly before the deepest selected BN.

        gamma/beta of every selected BN layer are excluded; everything at or
        after the deepest selected layer (recurrence and head included) is
        frozen.  Returns {"trainable": [names], "frozen": [names]}.
        """
        selected = set(int(i) for i in selected_ids)
        known = set(l.layer_id for l in self.bn_layers)
        if not selected <= known:
            raise ConfigError(f"unknown BN layer ids {sorted(selected - known)}")
        trainable = set()
        if selected:
            deepest = max(selected)
            bn_seen = 0
            for bi, block in enumerate(self.config.conv_blocks):
                if block.bn and bn_seen == deepest:
                    # conv of this block sits before its BN layer
                    trainable.update({f"conv{bi}.weight", f"conv{bi}.bias"})
                    break
                trainable.update({f"conv{bi}.weight", f"conv{bi}.bias"})
                if block.bn:
                    if bn_seen not in selected:
                        trainable.update({f"bn{bn_seen}.gamma", f"bn{bn_seen}.beta"})
                    bn_seen += 1
        for name, t in self.params.items():
            t.requires_grad = name in trainable
        frozen = [n for n in self.params if n not in trainable]
        return {"trainable": sorted(trainable), "frozen": sorted(frozen)}

    def set_all_trainable(self):
        for t in self.params.values():
            t.requires_grad = True

    def trainable_params(self) -> dict:
        return {n: t for n, t in self.params.items() if t.requires_grad}

    # -- forward -------------------------------------------------------------

    def _check_batch(self, images: np.ndarray, widths):
        if images.ndim != 4 or images.shape[0] == 0:
            raise ContractError("expected a non-empty (B,1,H,W) batch")
        if images.shape[2] != self.config.input_height:
            raise ContractError(
                f"image height {images.shape[2]} != configured {self.config.input_height}"
            )
        if len(widths) != images.shape[0]:
            raise ContractError("widths do not match batch size")

    def _trunk(self, x: Tensor, mode: str, collect_ids):
        """Conv stack; returns (features, {layer_id: (mu_b, var_b)})."""
        cfg = self.config
        stats = {}
        bn_i = 0
        for bi, block in enumerate(cfg.conv_blocks):
            x = ad.conv2d(x, self.params[f"conv{bi}.weight"], self.params[f"conv{bi}.bias"], padding=1)
            if block.bn:
                layer = self.bn_layers[bn_i]
                if mode == "train":
                    x = layer.forward_train(x)
                elif mode == "eval":
                    x = layer.forward_eval(x)
                else:
                    x, s = layer.forward_adapt(
                        x,
                        collect=bn_i in collect_ids,
                        use_batch_stats=cfg.adapt_batch_norm,
                    )
                    if bn_i in collect_ids:
                        stats[bn_i] = s
                bn_i += 1
            x = ad.leaky_relu(x, cfg.leaky_slope)
            if block.pool:
                x = ad.maxpool2(x)
        return x, stats

    def _gru_direction(self, xg: Tensor, d: str, mask: np.ndarray, reverse: bool):
        """One GRU direction over precomputed input projections.

        xg: (K, B, 3H) = frames @ wx + bx.  mask: (B, K) validity.  The
        hidden state only advances on valid frames, which pins each sample's
        outputs to its own true frames regardless of batch padding; the
        reverse direction therefore starts at each sample's last real frame.
        """
        K, B, threeH = xg.shape
        H = threeH // 3
        wh = self.params[f"gru.{d}.wh"]
        bh = self.params[f"gru.{d}.bh"]
        h = Tensor(np.zeros((B, H)))
        steps = range(K - 1, -1, -1) if reverse else range(K)
        outs = [None] * K
        for t in steps:
            hg = ad.matmul(h, wh) + bh
            xt = xg[t]
            z = ad.sigmoid(xt[:, :H] + hg[:, :H])
            r = ad.sigmoid(xt[:, H : 2 * H] + hg[:, H : 2 * H])
            n = ad.tanh(xt[:, 2 * H :] + r * hg[:, 2 * H :])
            cand = (1.0 - z) * n + z * h
            m = Tensor(mask[:, t : t + 1])
            h = m * cand + (1.0 - m) * h
            outs[t] = h
        return outs

    def forward(self, images: np.ndarray, widths, mode: str = "eval"):
        """Run the recognizer; mode is train, eval, or adapt.

        In adapt mode use forward_adapt, which also returns BN batch
        statistics for the alignment loss.
        """
        if mode == "adapt":
            raise ContractError("use forward_adapt for adaptation batches")
        if mode not in ("train", "eval"):
            raise ContractError(f"unknown mode {mode!r}")
        return self._forward(images, widths, mode, ())[0]

    def forward_adapt(self, images: np.ndarray, widths, collect_ids):
        """Adaptation forward pass.

        Returns (FrameDistributions, {layer_id: (mu_b, var_b)}) where the
        statistics are per-channel tensors attached to the graph.
        """
        return self._forward(images, widths, "adapt", tuple(collect_ids))

    def _forward(self, images: np.ndarray, widths, mode: str, collect_ids):
        self._check_batch(images, widths)
        cfg = self.config
        x = Tensor(images)
        feat, stats = self._trunk(x, mode, collect_ids)

        B, C, Hf, K = feat.shape
        frames = ad.reshape(ad.transpose(feat, (3, 0, 1, 2)), (K, B, C * Hf))
        frame_counts = [cfg.frame_count(w) for w in widths]
        if max(frame_counts) > K:
            raise ContractError("batch array too narrow for its widths")
        mask = np.zeros((B, K))
        for i, k in enumerate(frame_counts):
            mask[i, :k] = 1.0

        flat = ad.reshape(frames, (K * B, C * Hf))
        directions = ["fw", "bw"] if cfg.bidirectional else ["fw"]
        streams = []
        for d in directions:
            xg = ad.reshape(
                ad.matmul(flat, self.params[f"gru.{d}.wx"]) + self.params[f"gru.{d}.bx"],
                (K, B, 3 * cfg.hidden_size),
            )
            streams.append(self._gru_direction(xg, d, mask, reverse=(d == "bw")))

        per_frame = []
        for t in range(K):
            pieces = [s[t] for s in streams]
            per_frame.append(pieces[0] if len(pieces) == 1 else ad.concatenate(pieces, axis=1))
        hidden = ad.stack(per_frame, axis=0)  # (K, B, D*H)

        D = len(directions) * cfg.hidden_size
        logits = ad.matmul(ad.reshape(hidden, (K * B, D)), self.params["head.weight"]) + self.params["head.bias"]
        log_probs = ad.log_softmax(ad.reshape(logits, (K, B, self.alphabet.num_classes)), axis=-1)
        dist = FrameDistributions(ad.transpose(log_probs, (1, 0, 2)), frame_counts)
        return dist, stats


def pad_batch(images: list, pad_values: list) -> np.ndarray:
    """Right-pad grayscale images to a common width plus a safety margin.

    Each image is padded with its own constant (callers pass the median of
    the image's border pixels) so edge-frame receptive fields never depend
    on batch composition; the final width is rounded up to a multiple of 4.
    """
    if not images:
        raise ContractError("empty batch")
    H = images[0].shape[0]
    widths = [im.shape[1] for im in images]
    target = max(widths) + PAD_MARGIN
    target += (-target) % 4
    out = np.empty((len(images), 1, H, target))
    for i, im in enumerate(images):
        if im.shape[0] != H:
            raise ContractError("mixed image heights in one batch")
        out[i, 0, :, : widths[i]] = im
        out[i, 0, :, widths[i] :] = pad_values[i]
    return out
