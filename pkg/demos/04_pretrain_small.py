"""
Pretraining a recognizer on synthetic source data
=================================================

Renders a small source corpus and trains the conv-recurrent recognizer
with CTC until validation CER crosses a bar. Two or three minutes on one
core; the checkpoint lands in demos/out/ and feeds the adaptation and
ablation demos.
"""

import os

from amdadapt import (
    AugmentationPipeline,
    ModelConfig,
    TrainConfig,
    generate_dataset,
    pretrain,
    random_lexicon,
    save_checkpoint,
)

OUT = os.path.join(os.path.dirname(__file__), "out")
os.makedirs(OUT, exist_ok=True)

CHARS = "0aehinorst"
LEX = random_lexicon(CHARS, words=80, seed=42)
PIPE = AugmentationPipeline.pretraining(32)

print("rendering 800 source words ...")
src = generate_dataset(LEX, count=800, out_dir=os.path.join(OUT, "source"),
                       seed=4, pipeline=PIPE, alphabet=CHARS)

# Default architecture: three conv blocks (8, 16, 32 channels, BN on each,
# pooling on the first two), a bidirectional recurrent layer, CTC head.
model_cfg = ModelConfig(alphabet=CHARS)
train_cfg = TrainConfig(lr=3e-4, batch_size=16, max_epochs=60, patience=15,
                        seed=1, stop_val_cer=10.0)

print("training until val CER <= 10% (or 60 epochs) ...")
model, record = pretrain(model_cfg, train_cfg, [src], src, test_manifest=src)

for e in record["epochs"]:
    print(f"  epoch {e['epoch']:2d}  ctc {e['train_loss']:7.3f}  val CER {e['val_cer']:6.2f}%")
print(f"best epoch {record['best_epoch']} at {record['best_val_cer']:.2f}% val CER, "
      f"test CER {record['test']['cer']:.2f}%")

ckpt = os.path.join(OUT, "source_model.ckpt")
save_checkpoint(model, ckpt, metadata={"corpus": "demo source", "words": len(LEX)})
print("checkpoint:", ckpt)
