"""Dataset generation, manifest and image I/O, batch loaders.

Images are 8-bit binary PGM (P5, maxval 255).  A manifest is UTF-8 TSV:
a header line ``# alphabet=<chars>`` followed by rows
``path<TAB>transcript<TAB>split`` with paths relative to the manifest.

Every sample is generated from seeds derived as
derive(master_seed, sample_index, stage) with stages 0=word choice,
1=render, 2=augment, 3=shift, so generation order (or parallelism) cannot
change any output byte.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .alphabet import Alphabet
from .augment import AugmentationPipeline, DomainShiftConfig, apply_domain_shift, augment, border_median
from .errors import ConfigError, ContractError, IOFormatError
from .glyphs import GlyphFont, render_word
from .model import pad_batch
from .rng import Rng, derive

SPLITS = ("train", "val", "test")


# -- PGM ----------------------------------------------------------------------


def write_pgm(path: str, img: np.ndarray):
    data = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(data.tobytes())


def read_pgm(path: str) -> np.ndarray:
    """Read an 8-bit P5 file to float64 in [0, 1]."""
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as e:
        raise IOFormatError(f"cannot read image: {e}") from None
    if not raw.startswith(b"P5"):
        raise IOFormatError(f"{path}: not a binary PGM")
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":  # comment to end of line
            while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        fields.append(raw[start:pos])
    pos += 1  # single whitespace after maxval
    try:
        w, h, maxval = (int(v) for v in fields)
    except ValueError:
        raise IOFormatError(f"{path}: malformed PGM header") from None
    if maxval != 255:
        raise IOFormatError(f"{path}: unsupported maxval {maxval}")
    if len(raw) - pos < w * h:
        raise IOFormatError(f"{path}: truncated pixel data")
    data = np.frombuffer(raw[pos : pos + w * h], dtype=np.uint8).reshape(h, w)
    return data.astype(np.float64) / 255.0


# -- manifests ----------------------------------------------------------------


@dataclass(frozen=True)
class ManifestRow:
    path: str
    transcript: str
    split: str


@dataclass
class SampleManifest:
    alphabet: str
    rows: list
    root: str  # directory the relative paths resolve against

    def select(self, split: str | None) -> list:
        if split is None:
            return list(self.rows)
        return [r for r in self.rows if r.split == split]


def write_manifest(path: str, alphabet: str, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(f"# alphabet={alphabet}\n")
        for r in rows:
            f.write(f"{r.path}\t{r.transcript}\t{r.split}\n")


def read_manifest(path: str, validate_transcripts: bool = True) -> SampleManifest:
    try:
        with open(path, "r", encoding="utf-8") as f:
            lines = f.read().splitlines()
    except OSError as e:
        raise IOFormatError(f"cannot read manifest: {e}") from None
    if not lines or not lines[0].startswith("# alphabet="):
        raise IOFormatError(f"{path}: missing '# alphabet=' header")
    alphabet = lines[0][len("# alphabet=") :]
    rows = []
    seen = set()
    for ln, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise IOFormatError(f"{path}:{ln}: expected 3 tab-separated fields")
        rel, transcript, split = parts
        if split not in SPLITS:
            raise IOFormatError(f"{path}:{ln}: unknown split {split!r}")
        if rel in seen:
            raise IOFormatError(f"{path}:{ln}: duplicate path {rel!r}")
        seen.add(rel)
        rows.append(ManifestRow(rel, transcript, split))
    manifest = SampleManifest(alphabet, rows, os.path.dirname(os.path.abspath(path)))
    if validate_transcripts:
        ab = Alphabet(alphabet)
        for r in rows:
            for ch in r.transcript:
                if ch not in ab:
                    raise IOFormatError(f"{path}: transcript {r.transcript!r} has {ch!r} outside alphabet")
    return manifest


# -- generation ----------------------------------------------------------------


def random_lexicon(alphabet: str, words: int, seed: int, min_len: int = 3, max_len: int = 8) -> list:
    """Distinct pseudo-words over the alphabet, uniform lengths."""
    rng = Rng(derive(seed, 777))
    out = []
    seen = set()
    while len(out) < words:
        n = min_len + rng.randint(max_len - min_len + 1)
        w = "".join(alphabet[rng.randint(len(alphabet))] for _ in range(n))
        if w not in seen:
            seen.add(w)
            out.append(w)
    return out


def generate_dataset(
    lexicon,
    count: int,
    out_dir: str,
    seed: int,
    font: GlyphFont | None = None,
    pipeline: AugmentationPipeline | None = None,
    shift: DomainShiftConfig | None = None,
    splits=(0.8, 0.1, 0.1),
    height: int = 32,
    manifest_name: str = "manifest.tsv",
    alphabet: str | None = None,
) -> str:
    """Render, augment, optionally shift, and write a dataset.

    Split sizes: val and test get floor(count * fraction), train the rest.
    The manifest declares the given alphabet (default: the characters the
    lexicon actually uses, sorted).  Returns the manifest path.
    """
    if not lexicon:
        raise ConfigError("empty lexicon")
    if abs(sum(splits) - 1.0) > 1e-9 or len(splits) != 3:
        raise ConfigError("splits must be three fractions summing to 1")
    font = font or GlyphFont()
    used = set("".join(lexicon))
    if alphabet is None:
        alphabet = "".join(sorted(used))
    elif not used <= set(alphabet):
        raise ConfigError(f"lexicon uses characters outside the alphabet: {sorted(used - set(alphabet))}")
    for w in lexicon:
        if not w:
            raise ConfigError("lexicon has an empty word")

    n_val = int(count * splits[1])
    n_test = int(count * splits[2])
    n_train = count - n_val - n_test
    bounds = (n_train, n_train + n_val)

    os.makedirs(out_dir, exist_ok=True)
    rows = []
    for i in range(count):
        word = lexicon[Rng(derive(seed, i, 0)).randint(len(lexicon))]
        img = render_word(word, font, height, derive(seed, i, 1))
        if pipeline is not None:
            img = augment(img, pipeline, derive(seed, i, 2))
        if shift is not None:
            img = apply_domain_shift(img, shift, derive(seed, i, 3))
        split = "train" if i < bounds[0] else ("val" if i < bounds[1] else "test")
        rel = f"{split}_{i:05d}.pgm"
        write_pgm(os.path.join(out_dir, rel), img)
        rows.append(ManifestRow(rel, word, split))

    manifest_path = os.path.join(out_dir, manifest_name)
    write_manifest(manifest_path, alphabet, rows)
    return manifest_path


# -- loading -------------------------------------------------------------------


def resize_height(img: np.ndarray, height: int) -> np.ndarray:
    """Bilinear resize to the target height, preserving aspect ratio."""
    h, w = img.shape
    if h == height:
        return img
    new_w = max(1, int(round(w * height / h)))
    ys = (np.arange(height) + 0.5) * h / height - 0.5
    xs = (np.arange(new_w) + 0.5) * w / new_w - 0.5
    ys = np.clip(ys, 0, h - 1)
    xs = np.clip(xs, 0, w - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    top = img[np.ix_(y0, x0)] * (1 - wx) + img[np.ix_(y0, x1)] * wx
    bot = img[np.ix_(y1, x0)] * (1 - wx) + img[np.ix_(y1, x1)] * wx
    return top * (1 - wy[:, 0:1]) + bot * wy[:, 0:1]


class _ImageStore:
    """Images of one manifest split, height-normalized, kept in memory."""

    def __init__(self, manifest: SampleManifest, split: str, height: int, with_transcripts: bool):
        self.images = []
        self.pad_values = []
        self.paths = []
        self.transcripts = [] if with_transcripts else None
        for row in manifest.select(split):
            img = read_pgm(os.path.join(manifest.root, row.path))
            img = resize_height(img, height)
            self.images.append(img)
            self.pad_values.append(border_median(img))
            self.paths.append(row.path)
            if with_transcripts:
                self.transcripts.append(row.transcript)
        if not self.images:
            raise ContractError(f"no rows in split {split!r}")

    def __len__(self):
        return len(self.images)

    def gather(self, indices):
        imgs = [self.images[i] for i in indices]
        pads = [self.pad_values[i] for i in indices]
        batch = pad_batch(imgs, pads)
        widths = [im.shape[1] for im in imgs]
        texts = None if self.transcripts is None else [self.transcripts[i] for i in indices]
        return batch, widths, texts


class LabeledLoader:
    """Batches of (images, widths, transcripts) from one or more manifests.

    With balanced=True and m manifests, every training batch takes
    batch_size/m samples from each source (shorter sources cap the epoch).
    Shuffling is per epoch from derive(seed, epoch); eval_batches keeps
    manifest order for reproducible evaluation.
    """

    def __init__(self, manifest_paths, split: str, batch_size: int, height: int = 32,
                 balanced: bool = False, seed: int = 0):
        if isinstance(manifest_paths, (str, os.PathLike)):
            manifest_paths = [manifest_paths]
        self.manifests = [read_manifest(p) for p in manifest_paths]
        alphabets = {m.alphabet for m in self.manifests}
        if len(alphabets) != 1:
            raise ConfigError(f"manifests disagree on alphabet: {sorted(alphabets)}")
        self.alphabet = Alphabet(self.manifests[0].alphabet)
        self.stores = [_ImageStore(m, split, height, with_transcripts=True) for m in self.manifests]
        self.batch_size = batch_size
        self.balanced = balanced and len(self.stores) > 1
        self.seed = seed
        if self.balanced and batch_size % len(self.stores):
            raise ConfigError("balanced batching needs batch_size divisible by the manifest count")

    def epoch_batches(self, epoch: int):
        rng = Rng(derive(self.seed, epoch))
        if self.balanced:
            per = self.batch_size // len(self.stores)
            orders = [rng.permutation(len(s)) for s in self.stores]
            steps = min(len(o) for o in orders) // per
            for b in range(steps):
                imgs, widths, texts = [], [], []
                for s, o in zip(self.stores, orders):
                    idx = o[b * per : (b + 1) * per]
                    for i in idx:
                        imgs.append(s.images[i])
                        widths.append(s.images[i].shape[1])
                        texts.append(s.transcripts[i])
                pads = [border_median(im) for im in imgs]
                yield pad_batch(imgs, pads), widths, texts
        else:
            store = self.stores[0]
            order = rng.permutation(len(store))
            for b in range(0, len(order), self.batch_size):
                yield store.gather(order[b : b + self.batch_size])

    def eval_batches(self):
        for store in self.stores:
            for b in range(0, len(store), self.batch_size):
                yield store.gather(range(b, min(b + self.batch_size, len(store))))


class ImageOnlyLoader:
    """Unlabeled batches for adaptation: transcripts are never parsed.

    The manifest is read without transcript validation and the column is
    dropped on the spot, so downstream code cannot depend on it.
    """

    def __init__(self, manifest_path, split: str, batch_size: int, height: int = 32, seed: int = 0):
        manifest = read_manifest(manifest_path, validate_transcripts=False)
        stripped = SampleManifest(
            manifest.alphabet,
            [ManifestRow(r.path, "", r.split) for r in manifest.rows],
            manifest.root,
        )
        self.store = _ImageStore(stripped, split, height, with_transcripts=False)
        self.batch_size = batch_size
        self.seed = seed

    def __len__(self):
        return len(self.store)

    def epoch_batches(self, epoch: int):
        rng = Rng(derive(self.seed, epoch))
        order = rng.permutation(len(self.store))
        for b in range(0, len(order), self.batch_size):
            batch, widths, _ = self.store.gather(order[b : b + self.batch_size])
            yield batch, widths
