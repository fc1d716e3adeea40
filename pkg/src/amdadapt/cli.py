"""Command-line surface: batch experiments driven by JSON spec files.

Every command validates its spec section before touching data, writes
byte-reproducible result files (JSON records, TSV tables), and keeps
timestamps and host details in a .log sidecar so reruns with the same
inputs produce identical result bytes.  Exit codes: 2 configuration,
3 file I/O, 4 numerical divergence, 5 contract violation.
"""

import argparse
import datetime
import json
import os
import platform
import sys
import time

from . import __version__
from .augment import AugmentationPipeline
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import AmdError, ConfigError, IOFormatError
from .glyphs import GlyphFont
from .harness import (
    AdaptConfig,
    TrainConfig,
    ablate_bn_layers,
    ablate_loss_terms,
    adapt,
    evaluate_checkpoint,
    pretrain,
    random_search,
    strip_wall,
)
from .losses import AMDWeights
from .metrics import alphabet_overlap
from .model import ConvBlock, ModelConfig
from .alphabet import Alphabet
from .synthdata import DomainShiftConfig, generate_dataset, random_lexicon, read_manifest


# -- spec validation -----------------------------------------------------------
#
# A schema is {key: (required, checker)}; checkers raise ConfigError with the
# dotted path of the offending field.  Unknown keys are rejected everywhere.


def _fail(path, msg):
    raise ConfigError(f"{path}: {msg}")


def _typed(*types, name=None):
    label = name or "/".join(t.__name__ for t in types)

    def check(value, path):
        if isinstance(value, bool) and bool not in types:
            _fail(path, f"expected {label}")
        if not isinstance(value, types):
            _fail(path, f"expected {label}")

    return check


_string = _typed(str)
_integer = _typed(int)
_number = _typed(int, float, name="number")
_boolean = _typed(bool)


def _nullable(check):
    return lambda v, p: None if v is None else check(v, p)


def _array(item_check):
    def check(value, path):
        if not isinstance(value, list):
            _fail(path, "expected an array")
        for i, item in enumerate(value):
            item_check(item, f"{path}[{i}]")

    return check


def _object(schema):
    def check(value, path):
        if not isinstance(value, dict):
            _fail(path, "expected an object")
        for key in value:
            if key not in schema:
                _fail(f"{path}.{key}", "unknown key")
        for key, (required, item_check) in schema.items():
            if key in value:
                item_check(value[key], f"{path}.{key}")
            elif required:
                _fail(f"{path}.{key}", "missing required field")

    return check


def _choice(*options):
    def check(value, path):
        if value not in options:
            _fail(path, f"expected one of {options}")

    return check


_FONT = _object({
    "slant_deg": (False, _number),
    "thickness": (False, _number),
    "jitter": (False, _number),
})

_SHIFT = _object({
    "slant_deg": (False, _number),
    "thickness": (False, _number),
    "invert": (False, _boolean),
    "background": (False, _number),
    "noise_sigma": (False, _number),
})

_CONV_BLOCK = _object({
    "out_channels": (True, _integer),
    "bn": (False, _boolean),
    "pool": (False, _boolean),
})

_MODEL = _object({
    "alphabet": (True, _string),
    "conv_blocks": (False, _array(_CONV_BLOCK)),
    "hidden_size": (False, _integer),
    "bidirectional": (False, _boolean),
    "input_height": (False, _integer),
    "leaky_slope": (False, _number),
    "bn_eps": (False, _number),
    "bn_momentum": (False, _number),
    "adapt_batch_norm": (False, _boolean),
})

_DATA = _object({
    "alphabet": (True, _string),
    "lexicon": (False, _array(_string)),
    "lexicon_words": (False, _integer),
    "count": (True, _integer),
    "height": (False, _integer),
    "splits": (False, _array(_number)),
    "pipeline": (False, _nullable(_choice("pretraining", "synthetic"))),
    "font": (False, _FONT),
    "shift": (False, _SHIFT),
    "manifest_name": (False, _string),
})

_TRAIN = _object({
    "manifests": (True, _array(_string)),
    "val_manifest": (True, _string),
    "test_manifest": (False, _string),
    "lr": (False, _number),
    "batch_size": (False, _integer),
    "max_epochs": (False, _integer),
    "patience": (False, _integer),
    "beta1": (False, _number),
    "beta2": (False, _number),
    "adam_eps": (False, _number),
    "stop_val_cer": (False, _nullable(_number)),
})

_WEIGHTS = _object({
    "w_a": (True, _number),
    "w_m": (True, _number),
    "w_d": (True, _number),
})

_ADAPT_BASE_FIELDS = {
    "lr": (False, _number),
    "batch_size": (False, _integer),
    "max_epochs": (False, _integer),
    "patience": (False, _integer),
    "diversify_mode": (False, _choice("probability_mean", "logit_mean")),
    "beta1": (False, _number),
    "beta2": (False, _number),
    "adam_eps": (False, _number),
}

_ADAPT = _object({
    "train_manifest": (True, _string),
    "val_manifest": (True, _string),
    "test_manifest": (False, _string),
    "weights": (True, _WEIGHTS),
    "bn_layers": (True, _array(_integer)),
    **_ADAPT_BASE_FIELDS,
})

_SEARCH = _object({
    "train_manifest": (True, _string),
    "val_manifest": (True, _string),
    "test_manifest": (False, _string),
    "trials": (False, _integer),
    "base": (False, _object(_ADAPT_BASE_FIELDS)),
})

_SCENARIO = _object({
    "name": (True, _string),
    "train_manifest": (True, _string),
    "val_manifest": (True, _string),
    "test_manifest": (True, _string),
})

_ABLATE = _object({
    "scenarios": (True, _array(_SCENARIO)),
    "trials_per_combo": (False, _integer),
    "weights": (False, _WEIGHTS),
    "bn_subsets": (False, _array(_array(_integer))),
    "base": (False, _object(_ADAPT_BASE_FIELDS)),
})

_SPEC = _object({
    "seed": (True, _integer),
    "out_dir": (False, _string),
    "model": (False, _MODEL),
    "data": (False, _DATA),
    "train": (False, _TRAIN),
    "adapt": (False, _ADAPT),
    "search": (False, _SEARCH),
    "ablate": (False, _ABLATE),
})


def load_spec(path: str) -> dict:
    """Read, parse, and schema-check a spec file; apply AMD_SEED if set."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = f.read()
    except OSError as e:
        raise IOFormatError(f"cannot read spec: {e}") from None
    try:
        spec = json.loads(raw)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from None
    _SPEC(spec, "spec")
    env_seed = os.environ.get("AMD_SEED")
    if env_seed is not None:
        try:
            spec["seed"] = int(env_seed)
        except ValueError:
            raise ConfigError(f"AMD_SEED must be an integer, got {env_seed!r}") from None
    return spec


def _section(spec: dict, name: str) -> dict:
    if name not in spec:
        raise ConfigError(f"spec.{name}: missing required field")
    return spec[name]


def _out_dir(spec: dict) -> str:
    if "out_dir" not in spec:
        raise ConfigError("spec.out_dir: missing required field")
    path = spec["out_dir"]
    os.makedirs(path, exist_ok=True)
    return path


def _write_json(path: str, obj) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps(obj, indent=2, sort_keys=True))
        f.write("\n")


def _sidecar(out_dir: str, command: str, started: float, record: dict | None = None):
    """Timestamps, host, and wall figures go here, never into result files."""
    lines = [
        f"command: {command}",
        f"argv: {' '.join(sys.argv)}",
        f"version: {__version__}",
        f"host: {platform.node()}",
        f"python: {platform.python_version()}",
        f"started: {datetime.datetime.fromtimestamp(started).isoformat()}",
        f"finished: {datetime.datetime.now().isoformat()}",
        f"wall_seconds: {time.time() - started:.3f}",
    ]
    if record is not None and "wall" in record:
        wall = record["wall"]
        lines.append(f"run_total_seconds: {wall['total_seconds']:.3f}")
        epoch_s = " ".join(f"{s:.3f}" for s in wall["epoch_seconds"])
        lines.append(f"run_epoch_seconds: {epoch_s}")
    with open(os.path.join(out_dir, f"{command}.log"), "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def _build_model_config(spec: dict) -> ModelConfig:
    section = dict(_section(spec, "model"))
    if "conv_blocks" in section:
        section["conv_blocks"] = tuple(
            ConvBlock(b["out_channels"], b.get("bn", True), b.get("pool", False))
            for b in section["conv_blocks"]
        )
    return ModelConfig(**section)


def _build_train_config(section: dict, seed: int) -> TrainConfig:
    keys = ("lr", "batch_size", "max_epochs", "patience", "beta1", "beta2",
            "adam_eps", "stop_val_cer")
    kwargs = {k: section[k] for k in keys if k in section}
    return TrainConfig(seed=seed, **kwargs)


def _build_adapt_config(section: dict, seed: int) -> AdaptConfig:
    w = section["weights"]
    keys = ("lr", "batch_size", "max_epochs", "patience", "diversify_mode",
            "beta1", "beta2", "adam_eps")
    kwargs = {k: section[k] for k in keys if k in section}
    return AdaptConfig(weights=AMDWeights(w["w_a"], w["w_m"], w["w_d"]),
                       bn_layers=tuple(section["bn_layers"]), seed=seed, **kwargs)


def _build_base_config(section: dict, seed: int) -> AdaptConfig:
    base = section.get("base", {})
    kwargs = {k: base[k] for k in _ADAPT_BASE_FIELDS if k in base}
    return AdaptConfig(seed=seed, **kwargs)


# -- commands ------------------------------------------------------------------


def _cmd_gen_data(args) -> int:
    spec = load_spec(args.spec)
    data = _section(spec, "data")
    seed = spec["seed"]

    if ("lexicon" in data) == ("lexicon_words" in data):
        raise ConfigError("spec.data: provide exactly one of lexicon, lexicon_words")
    alphabet = data["alphabet"]
    Alphabet(alphabet)  # character sanity before any rendering
    if "lexicon" in data:
        lexicon = data["lexicon"]
    else:
        lexicon = random_lexicon(alphabet, data["lexicon_words"], seed)

    height = data.get("height", 32)
    pipeline = None
    if data.get("pipeline") == "pretraining":
        pipeline = AugmentationPipeline.pretraining(height)
    elif data.get("pipeline") == "synthetic":
        pipeline = AugmentationPipeline.synthetic(height)
    font = GlyphFont(**data["font"]) if "font" in data else None
    shift = DomainShiftConfig(**data["shift"]) if "shift" in data else None

    started = time.time()
    manifest_path = generate_dataset(
        lexicon, data["count"], args.out, seed,
        font=font, pipeline=pipeline, shift=shift,
        splits=tuple(data.get("splits", (0.8, 0.1, 0.1))),
        height=height, manifest_name=data.get("manifest_name", "manifest.tsv"),
        alphabet=alphabet,
    )
    manifest = read_manifest(manifest_path)
    counts = {s: sum(1 for r in manifest.rows if r.split == s) for s in ("train", "val", "test")}
    _sidecar(args.out, "gen-data", started)
    print(f"gen-data: wrote {manifest_path} "
          f"({counts['train']} train / {counts['val']} val / {counts['test']} test)")
    return 0


def _cmd_pretrain(args) -> int:
    spec = load_spec(args.spec)
    section = _section(spec, "train")
    model_config = _build_model_config(spec)
    train_config = _build_train_config(section, spec["seed"])
    out = _out_dir(spec)

    started = time.time()
    model, record = pretrain(model_config, train_config, section["manifests"],
                             section["val_manifest"], section.get("test_manifest"))
    ckpt = os.path.join(out, "pretrain.ckpt")
    save_checkpoint(model, ckpt, metadata={"record": "pretrain.json"})
    _write_json(os.path.join(out, "pretrain.json"), strip_wall(record))
    _sidecar(out, "pretrain", started, record)

    line = (f"pretrain: best epoch {record['best_epoch']} "
            f"val CER {record['best_val_cer']:.2f}%")
    if record["test"] is not None:
        line += f", test CER {record['test']['cer']:.2f}%"
    print(f"{line} -> {ckpt}")
    return 0


def _cmd_adapt(args) -> int:
    spec = load_spec(args.spec)
    section = _section(spec, "adapt")
    cfg = _build_adapt_config(section, spec["seed"])
    out = _out_dir(spec)

    started = time.time()
    model, _ = load_checkpoint(args.checkpoint)
    model, record = adapt(model, cfg, section["train_manifest"], section["val_manifest"])
    ckpt = os.path.join(out, "adapted.ckpt")
    save_checkpoint(model, ckpt, metadata={"record": "adapt.json"})
    if section.get("test_manifest"):
        report, _ = evaluate_checkpoint(model, section["test_manifest"], "test", cfg.batch_size)
        record["test"] = report.as_dict()
        record["test_manifest"] = section["test_manifest"]
    _write_json(os.path.join(out, "adapt.json"), strip_wall(record))
    _sidecar(out, "adapt", started, record)

    if record["no_op"]:
        print(f"adapt: no-op adaptation (all weights zero), checkpoint unchanged, "
              f"val CER {record['best_val_cer']:.2f}% -> {ckpt}")
    else:
        line = (f"adapt: best epoch {record['best_epoch']} "
                f"val CER {record['best_val_cer']:.2f}%")
        if "test" in record:
            line += f", test CER {record['test']['cer']:.2f}%"
        print(f"{line} -> {ckpt}")
    return 0


def _cmd_evaluate(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    report, rows = evaluate_checkpoint(model, args.manifest, args.split, args.batch_size)
    if args.out:
        payload = report.as_dict()
        payload["samples"] = [
            {"path": p, "reference": r, "hypothesis": h} for p, r, h in rows
        ]
        _write_json(args.out, payload)
    print(f"evaluate: CER {report.cer:.2f}% WER {report.wer:.2f}% "
          f"({report.sample_count} samples, split {args.split})")
    return 0


def _cmd_search(args) -> int:
    spec = load_spec(args.spec)
    section = _section(spec, "search")
    seed = spec["seed"]
    base = _build_base_config(section, seed)
    out = _out_dir(spec)
    trials = section.get("trials", 20)

    started = time.time()
    results = random_search(args.checkpoint, section["train_manifest"],
                            section["val_manifest"], trials, seed,
                            base=base, jobs=args.jobs)
    best = results[0]
    model, _ = load_checkpoint(args.checkpoint)
    best_cfg = AdaptConfig.from_dict(best["config"])
    model, record = adapt(model, best_cfg, section["train_manifest"], section["val_manifest"])
    ckpt = os.path.join(out, "search_best.ckpt")
    save_checkpoint(model, ckpt, metadata={"record": "search.json"})

    payload = {"trials": results, "best_trial": best["trial"]}
    if section.get("test_manifest"):
        report, _ = evaluate_checkpoint(model, section["test_manifest"], "test", best_cfg.batch_size)
        payload["best_test"] = report.as_dict()
    _write_json(os.path.join(out, "search.json"), payload)
    _sidecar(out, "search", started, record)

    w = best_cfg.weights
    line = (f"search: best trial {best['trial']} val CER {best['best_val_cer']:.2f}% "
            f"weights ({w.w_a:g},{w.w_m:g},{w.w_d:g}) lr {best_cfg.lr:.2e} "
            f"bn {list(best_cfg.bn_layers)}")
    if "best_test" in payload:
        line += f", test CER {payload['best_test']['cer']:.2f}%"
    print(f"{line} -> {ckpt}")
    return 0


def _format_tsv(header, rows) -> str:
    lines = ["\t".join(header)]
    for row in rows:
        lines.append("\t".join(row))
    return "\n".join(lines) + "\n"


def _cmd_ablate(args) -> int:
    spec = load_spec(args.spec)
    section = _section(spec, "ablate")
    seed = spec["seed"]
    base = _build_base_config(section, seed)
    out = _out_dir(spec)
    scenarios = section["scenarios"]

    started = time.time()
    if args.kind == "loss":
        rows = ablate_loss_terms(args.checkpoint, scenarios,
                                 section.get("trials_per_combo", 3), seed,
                                 base=base, jobs=args.jobs)
        table = _format_tsv(
            ("align", "minimize", "diversify", "median_decrease"),
            [(str(int(r["align"])), str(int(r["minimize"])), str(int(r["diversify"])),
              f"{r['median_decrease']:.4f}") for r in rows],
        )
        path = os.path.join(out, "ablate_loss.tsv")
    else:
        if "weights" in section:
            base = _rebuild_with_weights(section, base)
        subsets = section.get("bn_subsets")
        rows = ablate_bn_layers(args.checkpoint, scenarios, seed, base=base,
                                jobs=args.jobs, subsets=subsets)
        table = _format_tsv(
            ("layers", "median_decrease", "max_decrease"),
            [(",".join(str(i) for i in r["layers"]),
              f"{r['median_decrease']:.4f}", f"{r['max_decrease']:.4f}") for r in rows],
        )
        path = os.path.join(out, "ablate_bn.tsv")

    with open(path, "w", encoding="utf-8") as f:
        f.write(table)
    _write_json(path[:-4] + ".json", rows)
    _sidecar(out, f"ablate-{args.kind}", started)
    print(f"ablate {args.kind}: wrote {path} ({len(rows)} rows)")
    return 0


def _rebuild_with_weights(section: dict, base: AdaptConfig) -> AdaptConfig:
    w = section["weights"]
    d = base.to_dict()
    d["weights"] = {"w_a": w["w_a"], "w_m": w["w_m"], "w_d": w["w_d"]}
    return AdaptConfig.from_dict(d)


def _cmd_overlap(args) -> int:
    source = Alphabet(read_manifest(args.source).alphabet)
    target = Alphabet(read_manifest(args.target).alphabet)
    print(f"overlap: {alphabet_overlap(source, target)}%")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="amdadapt",
        description="Source-free domain adaptation for CTC text recognizers.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="render a synthetic dataset from a spec")
    p.add_argument("--spec", required=True, help="JSON experiment spec")
    p.add_argument("--out", required=True, help="output directory for images and manifest")
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("pretrain", help="train a recognizer on labeled source data")
    p.add_argument("--spec", required=True, help="JSON experiment spec")
    p.set_defaults(func=_cmd_pretrain)

    p = sub.add_parser("adapt", help="source-free adaptation of a checkpoint")
    p.add_argument("--spec", required=True, help="JSON experiment spec")
    p.add_argument("--checkpoint", required=True, help="pretrained source checkpoint")
    p.set_defaults(func=_cmd_adapt)

    p = sub.add_parser("evaluate", help="decode a manifest split and report CER/WER")
    p.add_argument("--checkpoint", required=True, help="checkpoint to evaluate")
    p.add_argument("--manifest", required=True, help="dataset manifest")
    p.add_argument("--split", default="test", choices=("train", "val", "test"),
                   help="manifest split to decode (default test)")
    p.add_argument("--batch-size", type=int, default=16, help="decode batch size")
    p.add_argument("--out", help="write a JSON report with per-sample decodes")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("search", help="random search over adaptation hyperparameters")
    p.add_argument("--spec", required=True, help="JSON experiment spec")
    p.add_argument("--checkpoint", required=True, help="pretrained source checkpoint")
    p.add_argument("--jobs", type=int, default=1, help="parallel trial processes")
    p.set_defaults(func=_cmd_search)

    p = sub.add_parser("ablate", help="loss-term or BN-layer ablation tables")
    p.add_argument("--kind", required=True, choices=("loss", "bn"), help="ablation family")
    p.add_argument("--spec", required=True, help="JSON experiment spec")
    p.add_argument("--checkpoint", required=True, help="pretrained source checkpoint")
    p.add_argument("--jobs", type=int, default=1, help="parallel trial processes")
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("overlap", help="character overlap between two manifest alphabets")
    p.add_argument("--source", required=True, help="source manifest")
    p.add_argument("--target", required=True, help="target manifest")
    p.set_defaults(func=_cmd_overlap)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except AmdError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
