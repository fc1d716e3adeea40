"""Training, adaptation, and experiment drivers.

Everything here returns plain dicts (run records, search results, ablation
rows) so the CLI can serialize them as-is.  Wall-clock figures live under a
single "wall" key that callers are expected to strip before comparing or
persisting records; with that key removed, records for the same seed are
byte-stable.
"""

import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
import multiprocessing

import numpy as np

from .checkpoint import load_checkpoint
from .ctc import ctc_loss, decode_batch
from .errors import ConfigError, ContractError, DivergenceError
from .losses import AMDWeights, SourceStats, amd_loss
from .metrics import evaluate_pairs
from .model import ModelConfig, Recognizer
from .optim import Adam
from .rng import Rng, derive
from .synthdata import DomainShiftConfig, ImageOnlyLoader, LabeledLoader, read_manifest

# search space for the adaptation hyperparameters
WEIGHT_GRID = (0.0, 1.0, 5.0, 10.0, 25.0, 50.0)
LR_RANGE = (1e-5, 3e-4)

# shift families for the small-scale experiment; strengths are tuned so a
# source-only model degrades clearly but stays recoverable (thinning rather
# than thickening: heavy dilation merges strokes and destroys glyph
# topology, which no amount of feature alignment can undo)
DESK_SHIFTS = {
    "slant": DomainShiftConfig(slant_deg=17.0),
    "thickness": DomainShiftConfig(thickness=-0.6),
    "inversion": DomainShiftConfig(invert=True),
    "noise": DomainShiftConfig(noise_sigma=0.22),
}


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 3e-4
    batch_size: int = 16
    max_epochs: int = 200
    patience: int = 20
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    # optional early stop once validation CER reaches this level; spares
    # compute when a run only needs to clear a known bar
    stop_val_cer: float | None = None

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ConfigError("training config values must be positive")

    def to_dict(self) -> dict:
        return {
            "lr": self.lr,
            "batch_size": self.batch_size,
            "max_epochs": self.max_epochs,
            "patience": self.patience,
            "seed": self.seed,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "adam_eps": self.adam_eps,
            "stop_val_cer": self.stop_val_cer,
        }

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        return TrainConfig(**d)


@dataclass(frozen=True)
class AdaptConfig:
    weights: AMDWeights = field(default_factory=lambda: AMDWeights(1.0, 1.0, 1.0))
    bn_layers: tuple = (0,)
    lr: float = 1e-4
    batch_size: int = 16
    max_epochs: int = 100
    patience: int = 20
    seed: int = 0
    diversify_mode: str = "probability_mean"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ConfigError("adaptation config values must be positive")
        if self.weights.w_a > 0 and not self.bn_layers:
            raise ConfigError("alignment weight is positive but no BN layers are selected")

    def to_dict(self) -> dict:
        return {
            "weights": {"w_a": self.weights.w_a, "w_m": self.weights.w_m, "w_d": self.weights.w_d},
            "bn_layers": list(self.bn_layers),
            "lr": self.lr,
            "batch_size": self.batch_size,
            "max_epochs": self.max_epochs,
            "patience": self.patience,
            "seed": self.seed,
            "diversify_mode": self.diversify_mode,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "adam_eps": self.adam_eps,
        }

    @staticmethod
    def from_dict(d: dict) -> "AdaptConfig":
        d = dict(d)
        w = d.pop("weights")
        return AdaptConfig(weights=AMDWeights(w["w_a"], w["w_m"], w["w_d"]), bn_layers=tuple(d.pop("bn_layers")), **d)


def _snapshot(model: Recognizer):
    arrays = {name: arr.copy() for name, arr in model.state_arrays().items()}
    batches = {str(l.layer_id): l.batches_seen for l in model.bn_layers}
    return arrays, batches


def _evaluate_loader(model: Recognizer, loader: LabeledLoader):
    """Corpus metrics plus (path, reference, hypothesis) rows, manifest order."""
    refs, hyps, paths = [], [], []
    for store in loader.stores:
        paths.extend(store.paths)
    for images, widths, texts in loader.eval_batches():
        dist = model.forward(images, widths, mode="eval")
        probs = np.exp(dist.log_probs.data)
        hyps.extend(decode_batch(probs, dist.frame_counts, model.alphabet))
        refs.extend(texts)
    report = evaluate_pairs(refs, hyps)
    return report, list(zip(paths, refs, hyps))


def evaluate_checkpoint(model: Recognizer, manifest_path: str, split: str = "test",
                        batch_size: int = 16):
    """Decode one manifest split with a trained model.

    Returns (EvalReport, rows) where rows are (path, reference, hypothesis).
    Batches follow manifest order, so results are independent of any seed.
    """
    # alphabet check first: a config mismatch should surface before any
    # image I/O happens
    if read_manifest(manifest_path).alphabet != model.alphabet.chars:
        raise ConfigError("manifest alphabet differs from the model alphabet")
    loader = LabeledLoader([manifest_path], split, batch_size, height=model.config.input_height)
    return _evaluate_loader(model, loader)


def pretrain(model_config: ModelConfig, cfg: TrainConfig, train_manifests,
             val_manifest: str, test_manifest: str | None = None):
    """Supervised training from scratch; returns (model, run record).

    Selection is by validation CER with strict improvement; on a tie the
    earlier epoch wins.  The returned model carries the best epoch's
    parameters and BN running statistics.
    """
    if isinstance(train_manifests, (str, os.PathLike)):
        train_manifests = [train_manifests]
    train = LabeledLoader(train_manifests, "train", cfg.batch_size,
                          height=model_config.input_height,
                          balanced=len(train_manifests) > 1, seed=derive(cfg.seed, 11))
    val = LabeledLoader([val_manifest], "val", cfg.batch_size, height=model_config.input_height)
    for loader in (train, val):
        if loader.alphabet.chars != model_config.alphabet:
            raise ConfigError("manifest alphabet differs from the model alphabet")

    model = Recognizer(model_config, seed=cfg.seed)
    model.set_all_trainable()
    opt = Adam(model.trainable_params(), cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)

    epochs = []
    epoch_seconds = []
    best = None  # (val_cer, epoch, snapshot)
    t_start = time.perf_counter()
    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.perf_counter()
        batch_losses = []
        for images, widths, texts in train.epoch_batches(epoch):
            targets = [model.alphabet.encode(t) for t in texts]
            try:
                dist = model.forward(images, widths, mode="train")
                loss = ctc_loss(dist.log_probs, targets, dist.frame_counts)
                opt.zero_grad()
                loss.backward()
                opt.step()
            except DivergenceError as err:
                raise DivergenceError(f"pretraining epoch {epoch}: {err}") from None
            batch_losses.append(loss.item())
        val_report, _ = _evaluate_loader(model, val)
        epoch_seconds.append(time.perf_counter() - t0)
        epochs.append({
            "epoch": epoch,
            "train_loss": float(np.mean(batch_losses)),
            "val_cer": val_report.cer,
            "val_wer": val_report.wer,
        })
        if best is None or val_report.cer < best[0]:
            best = (val_report.cer, epoch, _snapshot(model))
        if cfg.stop_val_cer is not None and best[0] <= cfg.stop_val_cer:
            break
        if epoch - best[1] >= cfg.patience:
            break

    model.load_state_arrays(*best[2])
    record = {
        "kind": "pretrain",
        "model_config": model_config.to_dict(),
        "train_config": cfg.to_dict(),
        "train_manifests": [str(p) for p in train_manifests],
        "val_manifest": str(val_manifest),
        "epochs": epochs,
        "best_epoch": best[1],
        "best_val_cer": best[0],
        "test": None,
        "wall": {"epoch_seconds": epoch_seconds, "total_seconds": time.perf_counter() - t_start},
    }
    if test_manifest is not None:
        test_report, _ = evaluate_checkpoint(model, test_manifest, "test", cfg.batch_size)
        record["test"] = test_report.as_dict()
        record["test_manifest"] = str(test_manifest)
    return model, record


def adapt(model: Recognizer, cfg: AdaptConfig, train_manifest: str, val_manifest: str):
    """Source-free adaptation of a pretrained model; returns (model, record).

    Target training images are loaded without their transcripts.  The
    labeled validation split is read only to pick the best epoch, never to
    compute gradients.  Selection considers epochs >= 1 only, so a run that
    never improves still returns a post-update state, reported honestly.
    """
    scope = model.set_trainable_scope(cfg.bn_layers)
    source_stats = SourceStats.from_model(model, cfg.bn_layers)
    frozen_before = {name: model.params[name].data.copy() for name in scope["frozen"]}
    stats_before = _snapshot(model)

    train = ImageOnlyLoader(train_manifest, "train", cfg.batch_size,
                            height=model.config.input_height, seed=derive(cfg.seed, 12))
    val = LabeledLoader([val_manifest], "val", cfg.batch_size, height=model.config.input_height)
    if val.alphabet != model.alphabet:
        raise ConfigError("validation manifest alphabet differs from the model alphabet")

    record = {
        "kind": "adapt",
        "adapt_config": cfg.to_dict(),
        "train_manifest": str(train_manifest),
        "val_manifest": str(val_manifest),
        "scope": scope,
        "epochs": [],
        "best_epoch": 0,
        "best_val_cer": None,
        "no_op": False,
    }

    if cfg.weights.w_a == 0 and cfg.weights.w_m == 0 and cfg.weights.w_d == 0:
        # nothing on the gradient path; keep the model bit-identical
        val_report, _ = _evaluate_loader(model, val)
        record["no_op"] = True
        record["best_val_cer"] = val_report.cer
        record["wall"] = {"epoch_seconds": [], "total_seconds": 0.0}
        return model, record

    opt = Adam(model.trainable_params(), cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
    epoch_seconds = []
    best = None
    t_start = time.perf_counter()
    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.perf_counter()
        sums = {"align": 0.0, "minimize": 0.0, "diversify": 0.0, "total": 0.0}
        batches = 0
        for images, widths in train.epoch_batches(epoch):
            try:
                dist, batch_stats = model.forward_adapt(images, widths, cfg.bn_layers)
                total, report = amd_loss(dist, batch_stats, source_stats, cfg.weights,
                                         cfg.diversify_mode)
                if total.requires_grad:
                    opt.zero_grad()
                    total.backward()
                    opt.step()
            except DivergenceError as err:
                raise DivergenceError(f"adaptation epoch {epoch}: {err}") from None
            sums["align"] += report.align
            sums["minimize"] += report.minimize
            sums["diversify"] += report.diversify
            sums["total"] += report.total
            batches += 1
        val_report, _ = _evaluate_loader(model, val)
        epoch_seconds.append(time.perf_counter() - t0)
        record["epochs"].append({
            "epoch": epoch,
            "align": sums["align"] / batches,
            "minimize": sums["minimize"] / batches,
            "diversify": sums["diversify"] / batches,
            "total": sums["total"] / batches,
            "val_cer": val_report.cer,
            "val_wer": val_report.wer,
        })
        if best is None or val_report.cer < best[0]:
            best = (val_report.cer, epoch, _snapshot(model))
        if epoch - best[1] >= cfg.patience:
            break

    model.load_state_arrays(*best[2])
    record["best_epoch"] = best[1]
    record["best_val_cer"] = best[0]
    record["wall"] = {"epoch_seconds": epoch_seconds, "total_seconds": time.perf_counter() - t_start}

    for name in scope["frozen"]:
        if not np.array_equal(model.params[name].data, frozen_before[name]):
            raise ContractError(f"frozen parameter {name} changed during adaptation")
    arrays_before, _ = stats_before
    for layer in model.bn_layers:
        for stat in ("running_mean", "running_var"):
            if not np.array_equal(getattr(layer, stat), arrays_before[f"bn{layer.layer_id}.{stat}"]):
                raise ContractError(f"bn{layer.layer_id}.{stat} changed during adaptation")
    return model, record


def strip_wall(record: dict) -> dict:
    """Copy of a run record without its wall-clock section."""
    return {k: v for k, v in record.items() if k != "wall"}


def relative_decrease(baseline_cer: float, adapted_cer: float) -> float:
    """Improvement as a percentage of the baseline error; negative when worse."""
    if baseline_cer <= 0:
        raise ContractError("baseline CER must be positive to express a relative change")
    return 100.0 * (baseline_cer - adapted_cer) / baseline_cer


# -- hyperparameter search ----------------------------------------------------


def sample_adapt_config(rng: Rng, n_bn_layers: int, base: AdaptConfig,
                        run_seed: int, require_weights: str = "") -> AdaptConfig:
    """Draw one search point: weights off the grid, lr log-uniform, a
    non-empty BN subset.  require_weights names terms ("a", "m", "d") that
    must draw a nonzero weight; absent terms are forced to zero.
    """
    if n_bn_layers < 1:
        raise ConfigError("model has no BN layers to select")
    picked = {}
    for term in ("a", "m", "d"):
        if require_weights:
            if term in require_weights:
                picked[term] = rng.choice(tuple(w for w in WEIGHT_GRID if w > 0))
            else:
                picked[term] = 0.0
        else:
            picked[term] = rng.choice(WEIGHT_GRID)
    lo, hi = np.log(LR_RANGE[0]), np.log(LR_RANGE[1])
    lr = float(np.exp(rng.uniform(lo, hi)))
    mask = 1 + rng.randint(2**n_bn_layers - 1)
    layers = tuple(i for i in range(n_bn_layers) if (mask >> i) & 1)
    if picked["a"] > 0 and not layers:
        raise ContractError("sampled an empty BN subset")  # unreachable, mask >= 1
    return replace(base,
                   weights=AMDWeights(picked["a"], picked["m"], picked["d"]),
                   bn_layers=layers, lr=lr, seed=run_seed)


def _adapt_trial(args):
    """One search trial in a worker process: fresh model, adapt, score."""
    (ckpt_path, train_manifest, val_manifest, cfg_dict, test_manifest) = args
    model, _ = load_checkpoint(ckpt_path)
    cfg = AdaptConfig.from_dict(cfg_dict)
    model, record = adapt(model, cfg, train_manifest, val_manifest)
    out = {
        "config": cfg.to_dict(),
        "best_val_cer": record["best_val_cer"],
        "best_epoch": record["best_epoch"],
    }
    if test_manifest is not None:
        report, _ = evaluate_checkpoint(model, test_manifest, "test", cfg.batch_size)
        out["test_cer"] = report.cer
    return out


def _run_trials(tasks, jobs: int):
    if jobs <= 1:
        return [_adapt_trial(t) for t in tasks]
    ctx = multiprocessing.get_context("spawn")
    with ProcessPoolExecutor(max_workers=jobs, mp_context=ctx) as pool:
        return list(pool.map(_adapt_trial, tasks))


def random_search(ckpt_path: str, train_manifest: str, val_manifest: str,
                  trials: int, seed: int, base: AdaptConfig | None = None,
                  jobs: int = 1, require_weights: str = ""):
    """Random search over adaptation hyperparameters.

    Each trial draws from Rng(derive(seed, trial)) and runs with seed
    derive(seed, trial, 1).  Returns trial results ranked by validation
    CER (ties keep the lower trial index).
    """
    if trials < 1:
        raise ConfigError("search needs at least one trial")
    model, _ = load_checkpoint(ckpt_path)
    n_bn = len(model.bn_layers)
    base = base if base is not None else AdaptConfig()
    tasks = []
    for trial in range(trials):
        rng = Rng(derive(seed, trial))
        cfg = sample_adapt_config(rng, n_bn, base, run_seed=derive(seed, trial, 1),
                                  require_weights=require_weights)
        tasks.append((ckpt_path, train_manifest, val_manifest, cfg.to_dict(), None))
    results = _run_trials(tasks, jobs)
    for i, r in enumerate(results):
        r["trial"] = i
    results.sort(key=lambda r: (r["best_val_cer"], r["trial"]))
    return results


# -- ablations -----------------------------------------------------------------

# presentation order: single terms, pairs, all three
LOSS_COMBOS = ("a", "m", "d", "am", "ad", "md", "amd")


def _scenario_baselines(model: Recognizer, scenarios, batch_size: int):
    out = []
    for sc in scenarios:
        report, _ = evaluate_checkpoint(model, sc["test_manifest"], "test", batch_size)
        out.append(report.cer)
    return out


def ablate_loss_terms(ckpt_path: str, scenarios, trials_per_combo: int, seed: int,
                      base: AdaptConfig | None = None, jobs: int = 1):
    """Median CER decrease for every non-empty combination of loss terms.

    scenarios: [{"name", "train_manifest", "val_manifest", "test_manifest"}].
    Per combination and scenario, trials_per_combo search points are drawn
    with the excluded weights pinned to zero; the best point by validation
    CER contributes that scenario's decrease, and the row reports the
    median over scenarios.
    """
    if trials_per_combo < 1:
        raise ConfigError("ablation needs at least one trial per combination")
    if len(scenarios) < 2:
        raise ConfigError("ablation needs at least two scenarios for a meaningful median")
    model, _ = load_checkpoint(ckpt_path)
    n_bn = len(model.bn_layers)
    base = base if base is not None else AdaptConfig()
    baselines = _scenario_baselines(model, scenarios, base.batch_size)

    tasks, keys = [], []
    for ci, combo in enumerate(LOSS_COMBOS):
        for si, sc in enumerate(scenarios):
            for trial in range(trials_per_combo):
                rng = Rng(derive(seed, ci, si, trial))
                cfg = sample_adapt_config(rng, n_bn, base,
                                          run_seed=derive(seed, ci, si, trial, 1),
                                          require_weights=combo)
                tasks.append((ckpt_path, sc["train_manifest"], sc["val_manifest"],
                              cfg.to_dict(), sc["test_manifest"]))
                keys.append((ci, si))
    results = _run_trials(tasks, jobs)

    rows = []
    for ci, combo in enumerate(LOSS_COMBOS):
        decreases = []
        for si, sc in enumerate(scenarios):
            group = [r for k, r in zip(keys, results) if k == (ci, si)]
            best = min(group, key=lambda r: r["best_val_cer"])
            decreases.append(relative_decrease(baselines[si], best["test_cer"]))
        rows.append({
            "align": "a" in combo,
            "minimize": "m" in combo,
            "diversify": "d" in combo,
            "median_decrease": float(np.median(decreases)),
            "decreases": decreases,
        })
    return rows


def ablate_bn_layers(ckpt_path: str, scenarios, seed: int,
                     base: AdaptConfig | None = None, jobs: int = 1,
                     subsets=None):
    """Median and maximum CER decrease per BN layer subset.

    Adaptation weights and learning rate come from base and stay fixed, so
    the rows isolate the effect of the alignment selection.  By default
    every non-empty subset is swept; that count grows as 2^n - 1, so models
    with more than four BN layers must pass an explicit subset list.
    """
    if len(scenarios) < 2:
        raise ConfigError("ablation needs at least two scenarios for a meaningful median")
    model, _ = load_checkpoint(ckpt_path)
    n_bn = len(model.bn_layers)
    if subsets is None:
        if n_bn > 4:
            raise ConfigError("full BN sweep needs at most four BN layers; pass explicit subsets")
        subsets = [tuple(i for i in range(n_bn) if (mask >> i) & 1) for mask in range(1, 2**n_bn)]
    else:
        subsets = [tuple(sorted(set(int(i) for i in s))) for s in subsets]
        if not subsets or any(not s for s in subsets):
            raise ConfigError("explicit BN subsets must be non-empty")
    base = base if base is not None else AdaptConfig()
    baselines = _scenario_baselines(model, scenarios, base.batch_size)

    tasks, keys = [], []
    for pi, layers in enumerate(subsets):
        for si, sc in enumerate(scenarios):
            cfg = replace(base, bn_layers=layers, seed=derive(seed, pi, si))
            tasks.append((ckpt_path, sc["train_manifest"], sc["val_manifest"],
                          cfg.to_dict(), sc["test_manifest"]))
            keys.append((pi, si))
    results = _run_trials(tasks, jobs)

    rows = []
    for pi, layers in enumerate(subsets):
        decreases = []
        for si, sc in enumerate(scenarios):
            group = [r for k, r in zip(keys, results) if k == (pi, si)]
            decreases.append(relative_decrease(baselines[si], group[0]["test_cer"]))
        rows.append({
            "layers": layers,
            "median_decrease": float(np.median(decreases)),
            "max_decrease": float(max(decreases)),
        })
    return rows
