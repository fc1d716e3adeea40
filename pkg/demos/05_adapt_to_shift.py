"""
Source-free adaptation to a shifted target
==========================================

Run 04_pretrain_small.py first. This script degrades the recognizer with a
stroke-thinning shift, then recovers part of the loss using only unlabeled
target images: align BN statistics to the stored source statistics, push
per-frame entropy down, keep the batch-average distribution spread out.

Labels of the target train split are never read (a contract the test suite
enforces by garbling them); the val split's labels are used only to pick
the best epoch and configuration.
"""

import os

from amdadapt import (
    DESK_SHIFTS,
    AdaptConfig,
    AugmentationPipeline,
    adapt,
    evaluate_checkpoint,
    generate_dataset,
    load_checkpoint,
    random_lexicon,
    random_search,
    relative_decrease,
)

OUT = os.path.join(os.path.dirname(__file__), "out")
CKPT = os.path.join(OUT, "source_model.ckpt")
if not os.path.exists(CKPT):
    raise SystemExit("no checkpoint; run demos/04_pretrain_small.py first")

CHARS = "0aehinorst"
LEX = random_lexicon(CHARS, words=80, seed=42)
PIPE = AugmentationPipeline.pretraining(32)

shift = DESK_SHIFTS["thickness"]
print(f"rendering 500 target words with shift {shift.to_dict()} ...")
tgt = generate_dataset(LEX, count=500, out_dir=os.path.join(OUT, "target_thin"),
                       seed=8, pipeline=PIPE, alphabet=CHARS, shift=shift)

model, _ = load_checkpoint(CKPT)
src_report, _ = evaluate_checkpoint(model, os.path.join(OUT, "source", "manifest.tsv"), "test")
tgt_report, _ = evaluate_checkpoint(model, tgt, "test")
print(f"source test CER {src_report.cer:.2f}%   target test CER {tgt_report.cer:.2f}% "
      f"(the shift costs {tgt_report.cer - src_report.cer:.1f} points)")

# Hyperparameters matter here, so search a few draws: loss weights from a
# small grid, log-uniform learning rate, a random BN layer subset. Chosen
# by target validation CER.
print("\nsearching 8 adaptation configurations ...")
results = random_search(CKPT, tgt, tgt, trials=8, seed=3,
                        base=AdaptConfig(batch_size=16, max_epochs=3, patience=20))
for r in results[:3]:
    c = r["config"]
    print(f"  trial {r['trial']}  val CER {r['best_val_cer']:6.2f}%  "
          f"weights ({c['weights']['w_a']:g}, {c['weights']['w_m']:g}, {c['weights']['w_d']:g})  "
          f"bn {tuple(c['bn_layers'])}  lr {c['lr']:.1e}")

best = AdaptConfig.from_dict(results[0]["config"])
model, record = adapt(model, best, tgt, tgt)
print("\nadapting with the best configuration:")
for e in record["epochs"]:
    print(f"  epoch {e['epoch']}  align {e['align']:.3f}  minimize {e['minimize']:.4f}  "
          f"diversify {e['diversify']:.4f}  val CER {e['val_cer']:6.2f}%")

after, _ = evaluate_checkpoint(model, tgt, "test")
print(f"\ntarget test CER {tgt_report.cer:.2f}% -> {after.cer:.2f}%  "
      f"({relative_decrease(tgt_report.cer, after.cer):.0f}% relative recovery, "
      f"source untouched since pretraining)")
