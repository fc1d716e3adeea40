"""Source-free adaptation toolkit for CTC text recognizers.

Pre-train a compact conv-recurrent recognizer on synthetic source data,
then adapt it to an unlabeled shifted target domain by aligning BN
statistics, minimizing per-frame entropy, and diversifying the batch-mean
distribution.
"""

from .alphabet import Alphabet
from .augment import AugmentationPipeline, DomainShiftConfig, apply_domain_shift, augment, make_transform
from .autodiff import Tensor, grad_check, no_grad
from .checkpoint import load_checkpoint, save_checkpoint
from .ctc import collapse, ctc_loss, decode_batch, greedy_decode
from .errors import AmdError, ConfigError, ContractError, DivergenceError, IOFormatError
from .harness import (
    DESK_SHIFTS,
    AdaptConfig,
    TrainConfig,
    ablate_bn_layers,
    ablate_loss_terms,
    adapt,
    evaluate_checkpoint,
    pretrain,
    random_search,
    relative_decrease,
)
from .losses import (
    AMDWeights,
    SourceStats,
    align_loss,
    amd_loss,
    diversify_loss,
    diversify_loss_printed,
    minimize_loss,
)
from .metrics import alphabet_overlap, cer, evaluate_pairs, levenshtein, wer
from .model import ConvBlock, FrameDistributions, ModelConfig, Recognizer, pad_batch
from .optim import Adam
from .rng import Rng, derive, mix64
from .synthdata import (
    ImageOnlyLoader,
    LabeledLoader,
    generate_dataset,
    random_lexicon,
    read_manifest,
    read_pgm,
    write_manifest,
    write_pgm,
)

__version__ = "0.1.0"

__all__ = [
    "AMDWeights",
    "Adam",
    "AdaptConfig",
    "Alphabet",
    "AmdError",
    "AugmentationPipeline",
    "ConfigError",
    "ContractError",
    "ConvBlock",
    "DESK_SHIFTS",
    "DivergenceError",
    "DomainShiftConfig",
    "FrameDistributions",
    "IOFormatError",
    "ImageOnlyLoader",
    "LabeledLoader",
    "ModelConfig",
    "Recognizer",
    "Rng",
    "SourceStats",
    "Tensor",
    "TrainConfig",
    "ablate_bn_layers",
    "ablate_loss_terms",
    "adapt",
    "align_loss",
    "alphabet_overlap",
    "amd_loss",
    "apply_domain_shift",
    "augment",
    "cer",
    "collapse",
    "ctc_loss",
    "decode_batch",
    "derive",
    "diversify_loss",
    "diversify_loss_printed",
    "evaluate_checkpoint",
    "evaluate_pairs",
    "generate_dataset",
    "grad_check",
    "greedy_decode",
    "levenshtein",
    "load_checkpoint",
    "make_transform",
    "minimize_loss",
    "mix64",
    "no_grad",
    "pad_batch",
    "pretrain",
    "random_lexicon",
    "random_search",
    "read_manifest",
    "read_pgm",
    "relative_decrease",
    "save_checkpoint",
    "wer",
    "write_manifest",
    "write_pgm",
    "__version__",
]
