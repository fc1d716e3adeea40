"""
Which pieces actually matter? Ablation tables
=============================================

Run 04 and 05 first (this reuses their checkpoint and target corpus, and
renders one more target). Two sweeps:

* loss terms: every non-empty subset of {align, minimize, diversify},
  a fresh small search per subset, median recovery across scenarios;
* BN layers: fixed weights and learning rate, varying only which BN
  layers' statistics the align term matches.

With one trial per combination on two scenarios this is a sketch, not a
measurement; the acceptance suite runs the full-size version.
"""

import os

from amdadapt import (
    DESK_SHIFTS,
    AdaptConfig,
    AugmentationPipeline,
    AMDWeights,
    ablate_bn_layers,
    ablate_loss_terms,
    generate_dataset,
    random_lexicon,
)

OUT = os.path.join(os.path.dirname(__file__), "out")
CKPT = os.path.join(OUT, "source_model.ckpt")
THIN = os.path.join(OUT, "target_thin", "manifest.tsv")
if not (os.path.exists(CKPT) and os.path.exists(THIN)):
    raise SystemExit("run demos/04_pretrain_small.py and 05_adapt_to_shift.py first")

CHARS = "0aehinorst"
LEX = random_lexicon(CHARS, words=80, seed=42)
PIPE = AugmentationPipeline.pretraining(32)

print("rendering a second scenario (slant) ...")
slant = generate_dataset(LEX, count=500, out_dir=os.path.join(OUT, "target_slant"),
                         seed=15, pipeline=PIPE, alphabet=CHARS,
                         shift=DESK_SHIFTS["slant"])

scenarios = [
    {"name": "thin", "train_manifest": THIN, "val_manifest": THIN, "test_manifest": THIN},
    {"name": "slant", "train_manifest": slant, "val_manifest": slant, "test_manifest": slant},
]
base = AdaptConfig(batch_size=16, max_epochs=3, patience=20)

print("\nloss-term ablation (median relative CER decrease, % / scenario):")
rows = ablate_loss_terms(CKPT, scenarios, trials_per_combo=1, seed=21, base=base)
print("  align minimize diversify   median    thin   slant")
for r in rows:
    print(f"  {int(r['align']):5d} {int(r['minimize']):8d} {int(r['diversify']):9d}"
          f"   {r['median_decrease']:6.1f}  {r['decreases'][0]:6.1f}  {r['decreases'][1]:6.1f}")

print("\nBN-layer ablation (weights and lr held fixed):")
bn_base = AdaptConfig(weights=AMDWeights(10.0, 25.0, 50.0), bn_layers=(0,),
                      lr=4e-5, batch_size=16, max_epochs=3, patience=20)
rows = ablate_bn_layers(CKPT, scenarios, seed=22, base=bn_base)
print("  layers   median     max")
for r in rows:
    label = ",".join(str(i) for i in r["layers"])
    print(f"  {label:7}  {r['median_decrease']:6.1f}  {r['max_decrease']:6.1f}")

print("\nReading hint: entropy minimization alone collapses the model onto a")
print("few classes (the large negative rows); align anchors it to the source")
print("statistics, and rows with align stay positive. In the BN sweep, deeper")
print("subsets recover more. Single draws are noisy; trust the full tables.")
