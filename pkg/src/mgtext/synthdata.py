"""Deterministic synthetic word-image generator and dataset file I/O.

Images are 32x128 RGB in [0,1], white background, words drawn with an
embedded 5x7 bitmap font (no font-file dependency), integer-scaled to fit
and laid out with seeded spacing jitter. Optional augmentation adds a
small seeded rotation and Gaussian noise. Datasets round-trip through a
directory of P6 PPM files plus a labels.tsv manifest.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import AlphabetError, ConfigError, FormatError, LengthError
from .nncore import seeded_rng
from .tokenizers import ALPHABET, _check_word

IMG_H, IMG_W, IMG_C = 32, 128, 3
GLYPH_H, GLYPH_W = 7, 5
_MARGIN = 2

MAX_ROTATION_DEG = 5.0
MAX_NOISE_SIGMA = 0.05

# 5x7 glyphs; '#' marks ink. All 36 bitmaps are pairwise distinct.
_FONT_ROWS = {
    "0": (".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."),
    "1": ("..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."),
    "2": (".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"),
    "3": (".###.", "#...#", "....#", "..##.", "....#", "#...#", ".###."),
    "4": ("...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."),
    "5": ("#####", "#....", "####.", "....#", "....#", "#...#", ".###."),
    "6": ("..##.", ".#...", "#....", "####.", "#...#", "#...#", ".###."),
    "7": ("#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#..."),
    "8": (".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."),
    "9": (".###.", "#...#", "#...#", ".####", "....#", "...#.", ".##.."),
    "a": (".....", ".....", ".###.", "....#", ".####", "#...#", ".####"),
    "b": ("#....", "#....", "####.", "#...#", "#...#", "#...#", "####."),
    "c": (".....", ".....", ".###.", "#....", "#....", "#...#", ".###."),
    "d": ("....#", "....#", ".####", "#...#", "#...#", "#...#", ".####"),
    "e": (".....", ".....", ".###.", "#...#", "#####", "#....", ".###."),
    "f": ("..##.", ".#..#", ".#...", "###..", ".#...", ".#...", ".#..."),
    "g": (".....", ".####", "#...#", "#...#", ".####", "....#", ".###."),
    "h": ("#....", "#....", "####.", "#...#", "#...#", "#...#", "#...#"),
    "i": ("..#..", ".....", ".##..", "..#..", "..#..", "..#..", ".###."),
    "j": ("...#.", ".....", "..##.", "...#.", "...#.", "#..#.", ".##.."),
    "k": ("#....", "#....", "#..#.", "#.#..", "##...", "#.#..", "#..#."),
    "l": (".##..", "..#..", "..#..", "..#..", "..#..", "..#..", ".###."),
    "m": (".....", ".....", "##.#.", "#.#.#", "#.#.#", "#.#.#", "#.#.#"),
    "n": (".....", ".....", "####.", "#...#", "#...#", "#...#", "#...#"),
    "o": (".....", ".....", ".###.", "#...#", "#...#", "#...#", ".###."),
    "p": (".....", "####.", "#...#", "#...#", "####.", "#....", "#...."),
    "q": (".....", ".####", "#...#", "#...#", ".####", "....#", "....#"),
    "r": (".....", ".....", "#.##.", "##..#", "#....", "#....", "#...."),
    "s": (".....", ".....", ".####", "#....", ".###.", "....#", "####."),
    "t": (".#...", ".#...", "###..", ".#...", ".#...", ".#..#", "..##."),
    "u": (".....", ".....", "#...#", "#...#", "#...#", "#..##", ".##.#"),
    "v": (".....", ".....", "#...#", "#...#", "#...#", ".#.#.", "..#.."),
    "w": (".....", ".....", "#.#.#", "#.#.#", "#.#.#", "#.#.#", ".#.#."),
    "x": (".....", ".....", "#...#", ".#.#.", "..#..", ".#.#.", "#...#"),
    "y": (".....", "#...#", "#...#", ".####", "....#", "#...#", ".###."),
    "z": (".....", ".....", "#####", "...#.", "..#..", ".#...", "#####"),
}

_BITMAPS = {
    c: np.array([[ch == "#" for ch in row] for row in rows], dtype=bool)
    for c, rows in _FONT_ROWS.items()
}

_WORDS = """
the and for are but not you all any can
had her was one our out day get has him
his how man new now old see two way who
boy did its let put say she too use car
cat dog sun run big red top hot box kid
zoo sky fly try dry wet pen cup hat map
bag bed leg arm eye ear lip toe jam tea
pie nut egg ham bus van jet ice age ant
bee cow elk fox hen owl pig rat yak bat
web net key log mud salt sand rock tree leaf
root seed rain snow wind storm cloud river lake ocean
beach shore house table chair floor door window garden street
light night morning summer winter spring autumn coffee water bread
cheese apple orange banana grape lemon melon peach berry sugar
honey pepper onion carrot potato tomato butter dinner lunch supper
school teacher student letter number story music paint brush paper
pencil market basket bottle kettle candle mirror pillow blanket carpet
curtain kitchen bedroom office bridge castle forest meadow valley mountain
village city town road path trail train plane boat ship
wheel motor engine signal ticket pocket jacket button ribbon silver
""".split()

_DIGIT_STRINGS = [
    "0", "1", "2", "3", "4", "5", "6", "7", "8", "9",
    "10", "12", "42", "99", "100", "365", "1024", "1869", "2020", "12345",
]


@dataclass(frozen=True)
class Sample:
    image: np.ndarray  # (32, 128, 3) float32 in [0, 1]
    label: str
    seed: int


@dataclass(frozen=True)
class Lexicon:
    words: tuple[str, ...]
    weights: tuple[float, ...]

    def __post_init__(self):
        if not self.words:
            raise ConfigError("empty lexicon")
        if len(self.words) != len(self.weights):
            raise ConfigError("words/weights length mismatch")
        for w in self.words:
            _check_word(w)

    @classmethod
    def uniform(cls, words) -> "Lexicon":
        words = tuple(words)
        return cls(words=words, weights=(1.0,) * len(words))


def default_lexicon() -> Lexicon:
    """200 common words plus 20 digit strings, uniform sampling weights."""
    return Lexicon.uniform(tuple(_WORDS) + tuple(_DIGIT_STRINGS))


def glyph_bitmap(c: str) -> np.ndarray:
    return _BITMAPS[c].copy()


def _fit_scale(n_chars: int) -> int:
    # worst-case width with per-gap jitter up to one extra scale unit:
    # 5sn glyph columns + (n-1) gaps of at most 2s
    height_cap = (IMG_H - 2 * _MARGIN) // GLYPH_H
    width_budget = IMG_W - 2 * _MARGIN
    s = min(height_cap, width_budget // (7 * n_chars - 2))
    if s < 1:
        raise LengthError(f"word of {n_chars} chars does not fit a {IMG_H}x{IMG_W} image")
    return s


def render(word: str, seed: int, augment: bool = False) -> Sample:
    """Draw ``word`` deterministically; identical inputs give identical bytes."""
    _check_word(word)
    rng = seeded_rng(seed, f"render:{word}:{augment}")
    n = len(word)
    s = _fit_scale(n)
    gaps = rng.integers(s, 2 * s + 1, size=max(n - 1, 0))
    width = 5 * s * n + int(gaps.sum())
    height = GLYPH_H * s

    img = np.ones((IMG_H, IMG_W, IMG_C), dtype=np.float32)
    x = (IMG_W - width) // 2 + int(rng.integers(-2, 3))
    x = int(np.clip(x, _MARGIN // 2, IMG_W - width - 1))
    y = (IMG_H - height) // 2 + int(rng.integers(-2, 3))
    y = int(np.clip(y, _MARGIN // 2, IMG_H - height - 1))

    for i, c in enumerate(word):
        block = np.kron(_BITMAPS[c], np.ones((s, s), dtype=bool))
        img[y : y + height, x : x + 5 * s][block] = 0.0
        x += 5 * s + (int(gaps[i]) if i < n - 1 else 0)

    if augment:
        angle = float(rng.uniform(-MAX_ROTATION_DEG, MAX_ROTATION_DEG))
        img = ndimage.rotate(
            img, angle, axes=(1, 0), reshape=False, order=1, mode="constant", cval=1.0
        )
        sigma = float(rng.uniform(0.2 * MAX_NOISE_SIGMA, MAX_NOISE_SIGMA))
        img = img + rng.normal(0.0, sigma, size=img.shape)
        img = np.clip(img, 0.0, 1.0)

    return Sample(image=img.astype(np.float32), label=word, seed=seed)


def make_splits(
    lexicon: Lexicon,
    n_train: int,
    n_test: int,
    seed: int,
    augment_train: bool = True,
    augment_test: bool = False,
) -> tuple[list[Sample], list[Sample]]:
    """Seeded disjoint train/test renderings.

    Train and test use disjoint render-seed ranges, so no (word, seed)
    pair repeats across the splits. Whenever ``n_train`` is at least the
    lexicon size, every word appears in the train split.
    """
    if n_train <= 0 or n_test <= 0:
        raise ConfigError("split sizes must be positive")
    rng = seeded_rng(seed, "splits")
    words = list(lexicon.words)
    p = np.asarray(lexicon.weights, dtype=np.float64)
    p = p / p.sum()

    def draw(count):
        return [words[i] for i in rng.choice(len(words), size=count, p=p)]

    if n_train >= len(words):
        train_words = list(words) + draw(n_train - len(words))
    else:
        train_words = draw(n_train)
    train_words = [train_words[i] for i in rng.permutation(len(train_words))]
    test_words = draw(n_test)

    base = seed * 1_000_000
    train = [
        render(w, base + 2 * i, augment=augment_train) for i, w in enumerate(train_words)
    ]
    test = [
        render(w, base + 2 * i + 1, augment=augment_test) for i, w in enumerate(test_words)
    ]
    return train, test


# --- netpbm I/O (hermetic, bit-exact) ---

def _to_u8(image: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)


def write_ppm(path: str | Path, image: np.ndarray) -> None:
    """P6 binary PPM, maxval 255; image is (H, W, 3) float in [0,1]."""
    h, w, c = image.shape
    if c != 3:
        raise FormatError("PPM requires 3 channels")
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(_to_u8(image).tobytes())


def write_pgm(path: str | Path, gray: np.ndarray) -> None:
    """P5 binary PGM, maxval 255; gray is (H, W) uint8."""
    h, w = gray.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(np.ascontiguousarray(gray, dtype=np.uint8).tobytes())


def _read_netpbm(path: str | Path, magic: bytes) -> tuple[np.ndarray, int, int]:
    raw = Path(path).read_bytes()
    if not raw.startswith(magic):
        raise FormatError(f"bad magic at offset 0 in {path}")
    pos = len(magic)
    fields = []
    while len(fields) < 3:
        if pos >= len(raw):
            raise FormatError(f"truncated header at offset {pos} in {path}")
        ch = raw[pos : pos + 1]
        if ch == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        if ch.isspace():
            pos += 1
            continue
        m = re.match(rb"\d+", raw[pos:])
        if m is None:
            raise FormatError(f"bad header token at offset {pos} in {path}")
        fields.append(int(m.group()))
        pos += m.end()
    w, h, maxval = fields
    if maxval != 255:
        raise FormatError(f"unsupported maxval {maxval} in {path}")
    pos += 1  # single whitespace byte after maxval
    return raw[pos:], w, h


def read_ppm(path: str | Path) -> np.ndarray:
    payload, w, h = _read_netpbm(path, b"P6")
    need = w * h * 3
    if len(payload) < need:
        raise FormatError(f"truncated pixel data ({len(payload)} of {need} bytes) in {path}")
    arr = np.frombuffer(payload[:need], dtype=np.uint8).reshape(h, w, 3)
    return (arr.astype(np.float32) / 255.0)


def read_pgm(path: str | Path) -> np.ndarray:
    payload, w, h = _read_netpbm(path, b"P5")
    need = w * h
    if len(payload) < need:
        raise FormatError(f"truncated pixel data ({len(payload)} of {need} bytes) in {path}")
    return np.frombuffer(payload[:need], dtype=np.uint8).reshape(h, w).copy()


# --- dataset directory format: labels.tsv + one PPM per sample ---

def export_dataset(samples, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = []
    for i, sample in enumerate(samples):
        name = f"sample_{i:06d}.ppm"
        write_ppm(out / name, sample.image)
        lines.append(f"{name}\t{sample.label}\n")
    (out / "labels.tsv").write_text("".join(lines), encoding="utf-8")
    return out


def load_dataset(data_dir: str | Path) -> list[Sample]:
    data_dir = Path(data_dir)
    manifest = data_dir / "labels.tsv"
    if not manifest.is_file():
        raise FileNotFoundError(f"no labels.tsv in {data_dir}")
    samples = []
    for line in manifest.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        name, label = line.split("\t", 1)
        image = read_ppm(data_dir / name)
        if image.shape != (IMG_H, IMG_W, IMG_C):
            raise FormatError(f"{name}: expected {IMG_H}x{IMG_W} RGB, got {image.shape}")
        samples.append(Sample(image=image, label=label, seed=-1))
    return samples
