"""Command-line interface: spec validation, exit codes, artifacts."""

import json
import os

import numpy as np
import pytest

from amdadapt.cli import build_parser, main
from amdadapt.synthdata import ManifestRow, read_manifest, write_manifest


CHARS = "aeno"
MODEL = {
    "alphabet": CHARS,
    "conv_blocks": [
        {"out_channels": 4, "bn": True, "pool": True},
        {"out_channels": 6, "bn": True},
    ],
    "hidden_size": 8,
    "input_height": 16,
}
DATA = {"alphabet": CHARS, "lexicon_words": 6, "count": 60, "height": 16}


def _spec(tmp_path, name, body):
    path = str(tmp_path / name)
    with open(path, "w") as f:
        json.dump(body, f)
    return path


def _tree(root, skip_logs=True):
    out = {}
    for base, _, files in os.walk(root):
        for fn in files:
            if skip_logs and fn.endswith(".log"):
                continue
            p = os.path.join(base, fn)
            out[os.path.relpath(p, root)] = open(p, "rb").read()
    return out


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """gen-data + pretrain once; later tests reuse the artifacts."""
    root = tmp_path_factory.mktemp("cli")
    src_dir = str(root / "src")
    tgt_dir = str(root / "tgt")
    out_dir = str(root / "out")

    spec = _spec(root, "gen_src.json", {"seed": 7, "data": DATA})
    assert main(["gen-data", "--spec", spec, "--out", src_dir]) == 0
    spec = _spec(root, "gen_tgt.json", {
        "seed": 8,
        "data": {**DATA, "count": 40, "shift": {"slant_deg": 10.0}},
    })
    assert main(["gen-data", "--spec", spec, "--out", tgt_dir]) == 0

    src_man = os.path.join(src_dir, "manifest.tsv")
    tgt_man = os.path.join(tgt_dir, "manifest.tsv")
    spec = _spec(root, "pretrain.json", {
        "seed": 1,
        "out_dir": out_dir,
        "model": MODEL,
        "train": {
            "manifests": [src_man],
            "val_manifest": src_man,
            "test_manifest": src_man,
            "lr": 3e-4, "batch_size": 8, "max_epochs": 2, "patience": 20,
        },
    })
    assert main(["pretrain", "--spec", spec]) == 0
    return {
        "root": root,
        "src": src_man,
        "tgt": tgt_man,
        "out": out_dir,
        "ckpt": os.path.join(out_dir, "pretrain.ckpt"),
    }


def test_help_lists_every_subcommand(capsys):
    help_text = build_parser().format_help()
    for cmd in ("gen-data", "pretrain", "adapt", "evaluate", "search", "ablate", "overlap"):
        assert cmd in help_text
    with pytest.raises(SystemExit) as e:
        main(["adapt", "--help"])
    assert e.value.code == 0
    sub_help = capsys.readouterr().out
    for flag in ("--spec", "--checkpoint"):
        assert flag in sub_help


def test_unknown_spec_key_names_its_path(tmp_path, capsys):
    spec = _spec(tmp_path, "bad.json", {"seed": 1, "data": {**DATA, "pipelin": "x"}})
    assert main(["gen-data", "--spec", spec, "--out", str(tmp_path / "d")]) == 2
    assert "spec.data.pipelin: unknown key" in capsys.readouterr().err


def test_missing_required_field_names_its_path(tmp_path, capsys):
    body = {"seed": 1, "data": {k: v for k, v in DATA.items() if k != "count"}}
    spec = _spec(tmp_path, "bad.json", body)
    assert main(["gen-data", "--spec", spec, "--out", str(tmp_path / "d")]) == 2
    assert "spec.data.count: missing required field" in capsys.readouterr().err


def test_type_violation_exits_2(tmp_path, capsys):
    spec = _spec(tmp_path, "bad.json", {"seed": "one", "data": DATA})
    assert main(["gen-data", "--spec", spec, "--out", str(tmp_path / "d")]) == 2
    assert "spec.seed" in capsys.readouterr().err


def test_invalid_json_exits_2(tmp_path, capsys):
    path = str(tmp_path / "broken.json")
    open(path, "w").write("{not json")
    assert main(["gen-data", "--spec", path, "--out", str(tmp_path / "d")]) == 2


def test_missing_spec_file_exits_3(tmp_path):
    assert main(["gen-data", "--spec", str(tmp_path / "absent.json"),
                 "--out", str(tmp_path / "d")]) == 3


def test_missing_checkpoint_exits_3(tmp_path, workdir):
    assert main(["evaluate", "--checkpoint", str(tmp_path / "no.ckpt"),
                 "--manifest", workdir["src"]]) == 3


def test_lexicon_fields_are_exclusive(tmp_path, capsys):
    body = {"seed": 1, "data": {**DATA, "lexicon": ["ane"]}}
    spec = _spec(tmp_path, "bad.json", body)
    assert main(["gen-data", "--spec", spec, "--out", str(tmp_path / "d")]) == 2
    assert "exactly one of" in capsys.readouterr().err


def test_gen_data_is_byte_deterministic(tmp_path, capsys):
    spec = _spec(tmp_path, "gen.json", {"seed": 7, "data": DATA})
    assert main(["gen-data", "--spec", spec, "--out", str(tmp_path / "a")]) == 0
    assert main(["gen-data", "--spec", spec, "--out", str(tmp_path / "b")]) == 0
    out = capsys.readouterr().out
    assert out.count("gen-data: wrote") == 2
    assert "48 train / 6 val / 6 test" in out
    assert _tree(tmp_path / "a") == _tree(tmp_path / "b")


def test_amd_seed_env_overrides_spec(tmp_path, monkeypatch):
    spec = _spec(tmp_path, "gen.json", {"seed": 7, "data": {**DATA, "count": 10}})
    assert main(["gen-data", "--spec", spec, "--out", str(tmp_path / "a")]) == 0
    monkeypatch.setenv("AMD_SEED", "99")
    assert main(["gen-data", "--spec", spec, "--out", str(tmp_path / "b")]) == 0
    assert _tree(tmp_path / "a") != _tree(tmp_path / "b")
    monkeypatch.setenv("AMD_SEED", "7")
    assert main(["gen-data", "--spec", spec, "--out", str(tmp_path / "c")]) == 0
    assert _tree(tmp_path / "a") == _tree(tmp_path / "c")
    monkeypatch.setenv("AMD_SEED", "not-a-number")
    assert main(["gen-data", "--spec", spec, "--out", str(tmp_path / "d")]) == 2


def test_pretrain_artifacts(workdir, capsys):
    out = workdir["out"]
    assert os.path.exists(os.path.join(out, "pretrain.ckpt"))
    rec = json.load(open(os.path.join(out, "pretrain.json")))
    assert rec["kind"] == "pretrain"
    assert "wall" not in rec
    log = open(os.path.join(out, "pretrain.log")).read()
    assert "wall_seconds:" in log and "started:" in log


def test_evaluate_reports_and_writes_json(workdir, tmp_path, capsys):
    report_path = str(tmp_path / "eval.json")
    code = main(["evaluate", "--checkpoint", workdir["ckpt"],
                 "--manifest", workdir["src"], "--split", "val",
                 "--batch-size", "8", "--out", report_path])
    assert code == 0
    line = capsys.readouterr().out
    assert line.startswith("evaluate: CER ")
    assert "split val" in line
    payload = json.load(open(report_path))
    assert set(payload) == {"cer", "wer", "edits", "sample_count", "samples"}
    assert len(payload["samples"]) == payload["sample_count"] == 6
    rec = json.load(open(os.path.join(workdir["out"], "pretrain.json")))
    assert payload["cer"] == rec["best_val_cer"]


def test_evaluate_alphabet_mismatch_exits_2(workdir, tmp_path):
    man = str(tmp_path / "m.tsv")
    write_manifest(man, "ae", [ManifestRow("x.pgm", "ae", "test")])
    assert main(["evaluate", "--checkpoint", workdir["ckpt"], "--manifest", man]) == 2


def test_evaluate_empty_split_exits_5(workdir, tmp_path):
    man = str(tmp_path / "m.tsv")
    write_manifest(man, CHARS, [ManifestRow("x.pgm", "ane", "train")])
    assert main(["evaluate", "--checkpoint", workdir["ckpt"],
                 "--manifest", man, "--split", "test"]) == 5


def test_adapt_noop_and_idempotent_record(workdir, tmp_path, capsys):
    out = str(tmp_path / "adapt_out")
    spec = _spec(tmp_path, "adapt.json", {
        "seed": 3,
        "out_dir": out,
        "adapt": {
            "train_manifest": workdir["tgt"],
            "val_manifest": workdir["tgt"],
            "weights": {"w_a": 0.0, "w_m": 0.0, "w_d": 0.0},
            "bn_layers": [0],
            "batch_size": 8, "max_epochs": 2,
        },
    })
    assert main(["adapt", "--spec", spec, "--checkpoint", workdir["ckpt"]]) == 0
    assert "no-op adaptation (all weights zero), checkpoint unchanged" in capsys.readouterr().out
    first = _tree(out)
    assert set(first) == {"adapted.ckpt", "adapt.json"}

    # the no-op checkpoint differs from the source one only in metadata
    rec = json.load(open(os.path.join(out, "adapt.json")))
    assert rec["no_op"] is True and rec["epochs"] == []

    assert main(["adapt", "--spec", spec, "--checkpoint", workdir["ckpt"]]) == 0
    assert _tree(out) == first  # byte-idempotent reruns


def test_adapt_with_test_manifest(workdir, tmp_path, capsys):
    out = str(tmp_path / "adapt_out")
    spec = _spec(tmp_path, "adapt.json", {
        "seed": 3,
        "out_dir": out,
        "adapt": {
            "train_manifest": workdir["tgt"],
            "val_manifest": workdir["tgt"],
            "test_manifest": workdir["tgt"],
            "weights": {"w_a": 1.0, "w_m": 1.0, "w_d": 1.0},
            "bn_layers": [0, 1],
            "lr": 1e-4, "batch_size": 8, "max_epochs": 1,
        },
    })
    assert main(["adapt", "--spec", spec, "--checkpoint", workdir["ckpt"]]) == 0
    line = capsys.readouterr().out
    assert "adapt: best epoch 1" in line and "test CER" in line
    rec = json.load(open(os.path.join(out, "adapt.json")))
    assert rec["no_op"] is False
    assert rec["test"]["cer"] >= 0.0


def test_search_writes_ranked_trials(workdir, tmp_path, capsys):
    out = str(tmp_path / "search_out")
    spec = _spec(tmp_path, "search.json", {
        "seed": 5,
        "out_dir": out,
        "search": {
            "train_manifest": workdir["tgt"],
            "val_manifest": workdir["tgt"],
            "test_manifest": workdir["tgt"],
            "trials": 2,
            "base": {"batch_size": 8, "max_epochs": 1},
        },
    })
    assert main(["search", "--spec", spec, "--checkpoint", workdir["ckpt"]]) == 0
    line = capsys.readouterr().out
    assert line.startswith("search: best trial ")
    payload = json.load(open(os.path.join(out, "search.json")))
    assert len(payload["trials"]) == 2
    assert payload["best_trial"] == payload["trials"][0]["trial"]
    assert "best_test" in payload
    assert os.path.exists(os.path.join(out, "search_best.ckpt"))


def test_ablate_loss_table(workdir, tmp_path, capsys):
    out = str(tmp_path / "ablate_out")
    scenarios = [
        {"name": "shifted", "train_manifest": workdir["tgt"],
         "val_manifest": workdir["tgt"], "test_manifest": workdir["tgt"]},
        {"name": "source", "train_manifest": workdir["src"],
         "val_manifest": workdir["src"], "test_manifest": workdir["src"]},
    ]
    spec = _spec(tmp_path, "ablate.json", {
        "seed": 6,
        "out_dir": out,
        "ablate": {
            "scenarios": scenarios,
            "trials_per_combo": 1,
            "base": {"batch_size": 8, "max_epochs": 1},
        },
    })
    assert main(["ablate", "--kind", "loss", "--spec", spec,
                 "--checkpoint", workdir["ckpt"]]) == 0
    assert "ablate loss: wrote" in capsys.readouterr().out
    lines = open(os.path.join(out, "ablate_loss.tsv")).read().splitlines()
    assert lines[0] == "align\tminimize\tdiversify\tmedian_decrease"
    assert len(lines) == 8
    flags = [tuple(l.split("\t")[:3]) for l in lines[1:]]
    assert flags == [("1", "0", "0"), ("0", "1", "0"), ("0", "0", "1"),
                     ("1", "1", "0"), ("1", "0", "1"), ("0", "1", "1"),
                     ("1", "1", "1")]
    rows = json.load(open(os.path.join(out, "ablate_loss.json")))
    assert len(rows) == 7


def test_ablate_bn_table(workdir, tmp_path, capsys):
    out = str(tmp_path / "ablate_out")
    scenarios = [
        {"name": "shifted", "train_manifest": workdir["tgt"],
         "val_manifest": workdir["tgt"], "test_manifest": workdir["tgt"]},
        {"name": "source", "train_manifest": workdir["src"],
         "val_manifest": workdir["src"], "test_manifest": workdir["src"]},
    ]
    spec = _spec(tmp_path, "ablate_bn.json", {
        "seed": 6,
        "out_dir": out,
        "ablate": {
            "scenarios": scenarios,
            "weights": {"w_a": 1.0, "w_m": 1.0, "w_d": 1.0},
            "base": {"batch_size": 8, "max_epochs": 1},
        },
    })
    assert main(["ablate", "--kind", "bn", "--spec", spec,
                 "--checkpoint", workdir["ckpt"]]) == 0
    lines = open(os.path.join(out, "ablate_bn.tsv")).read().splitlines()
    assert lines[0] == "layers\tmedian_decrease\tmax_decrease"
    assert [l.split("\t")[0] for l in lines[1:]] == ["0", "1", "0,1"]


def test_overlap_command(workdir, capsys):
    assert main(["overlap", "--source", workdir["src"], "--target", workdir["tgt"]]) == 0
    assert capsys.readouterr().out.strip() == "overlap: 100%"
