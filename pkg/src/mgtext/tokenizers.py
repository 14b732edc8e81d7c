"""Label codecs: character, byte-pair, and wordpiece tokenization.

All three map lowercase alphanumeric words to fixed-length id sequences
(content tokens, then eos, then pad) and back. Subword vocabularies are
trained on a word corpus at desk scale and serialize to JSON sidecars.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .errors import AlphabetError, ConfigError, CorpusError, LengthError

ALPHABET = "0123456789abcdefghijklmnopqrstuvwxyz"
_ALPHASET = frozenset(ALPHABET)

PAD_TOKEN = "<pad>"
EOS_TOKEN = "<eos>"
UNK_TOKEN = "<unk>"

CONT_PREFIX = "##"

DEFAULT_BPE_MERGES = 256
DEFAULT_WP_VOCAB = 512

# wordpiece seed inventory: specials + 36 word-initial + 36 continuation units
WP_SEED_SIZE = 3 + 2 * len(ALPHABET)


def _check_word(text: str) -> None:
    if not text:
        raise AlphabetError("empty text")
    bad = set(text) - _ALPHASET
    if bad:
        raise AlphabetError(f"characters outside alphabet: {sorted(bad)}")


@dataclass(frozen=True)
class Vocabulary:
    """Ordered symbol table; ids are list positions."""

    tokens: tuple[str, ...]
    granularity: str  # "char" | "bpe" | "wordpiece"
    pad_id: int = 0
    eos_id: int = 1
    unk_id: int | None = None
    _index: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if len(set(self.tokens)) != len(self.tokens):
            raise ConfigError("duplicate token strings in vocabulary")
        if self.granularity == "char" and self.unk_id is not None:
            raise ConfigError("char vocabulary has no unk (closed alphabet)")
        if self.granularity != "char" and self.unk_id is None:
            raise ConfigError(f"{self.granularity} vocabulary requires an unk id")
        self._index.update({t: i for i, t in enumerate(self.tokens)})

    def __len__(self) -> int:
        return len(self.tokens)

    def id_of(self, token: str) -> int | None:
        return self._index.get(token)

    def token_of(self, idx: int) -> str:
        return self.tokens[idx]

    def to_json(self) -> str:
        special = {"pad": self.pad_id, "eos": self.eos_id}
        if self.unk_id is not None:
            special["unk"] = self.unk_id
        obj = {
            "granularity": self.granularity,
            "special": special,
            "tokens": list(self.tokens),
        }
        return json.dumps(obj, indent=1, sort_keys=True, ensure_ascii=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "Vocabulary":
        obj = json.loads(text)
        return cls(
            tokens=tuple(obj["tokens"]),
            granularity=obj["granularity"],
            pad_id=obj["special"]["pad"],
            eos_id=obj["special"]["eos"],
            unk_id=obj["special"].get("unk"),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


@dataclass(frozen=True)
class MergeTable:
    """Ordered byte-pair merge rules; application order == list order."""

    pairs: tuple[tuple[str, str], ...]

    def __post_init__(self):
        if len(set(self.pairs)) != len(self.pairs):
            raise ConfigError("duplicate merge pairs")

    def __len__(self) -> int:
        return len(self.pairs)

    def to_json(self) -> str:
        obj = {"merges": [list(p) for p in self.pairs]}
        return json.dumps(obj, indent=1, sort_keys=True, ensure_ascii=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "MergeTable":
        obj = json.loads(text)
        return cls(pairs=tuple((a, b) for a, b in obj["merges"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "MergeTable":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


@dataclass(frozen=True)
class TokenSequence:
    """Fixed-length id sequence: content ids, eos, then pad."""

    ids: tuple[int, ...]
    length: int  # non-pad ids including eos


def _finalize(token_ids: list[int], t: int, vocab: Vocabulary) -> TokenSequence:
    if len(token_ids) > t - 1:
        raise LengthError(f"{len(token_ids)} tokens exceed capacity {t - 1}")
    ids = token_ids + [vocab.eos_id]
    ids += [vocab.pad_id] * (t - len(ids))
    return TokenSequence(ids=tuple(ids), length=len(token_ids) + 1)


# --- character codec ---

def char_vocab() -> Vocabulary:
    """Fixed 38-entry layout: pad=0, eos=1, digits 2-11, letters 12-37."""
    return Vocabulary(tokens=(PAD_TOKEN, EOS_TOKEN) + tuple(ALPHABET), granularity="char")


def char_encode(text: str, t: int) -> TokenSequence:
    _check_word(text)
    if len(text) > t - 1:
        raise LengthError(f"word of length {len(text)} exceeds capacity {t - 1}")
    vocab = char_vocab()
    return _finalize([vocab.id_of(c) for c in text], t, vocab)


def decode(ids, vocab: Vocabulary) -> str:
    """Ids back to text: stop at eos, skip pad, strip continuation markers."""
    parts = []
    for i in ids:
        if i == vocab.eos_id:
            break
        if i == vocab.pad_id:
            continue
        tok = vocab.token_of(i)
        parts.append(tok[len(CONT_PREFIX):] if tok.startswith(CONT_PREFIX) else tok)
    return "".join(parts)


# --- byte-pair encoding ---

def _merge_once(seg: tuple[str, ...], pair: tuple[str, str]) -> tuple[str, ...]:
    """Replace adjacent (left, right) occurrences, scanning left to right."""
    left, right = pair
    out: list[str] = []
    i = 0
    while i < len(seg):
        if i + 1 < len(seg) and seg[i] == left and seg[i + 1] == right:
            out.append(left + right)
            i += 2
        else:
            out.append(seg[i])
            i += 1
    return tuple(out)


def bpe_train(corpus, num_merges: int) -> tuple[Vocabulary, MergeTable]:
    """Learn merge rules by repeatedly fusing the most frequent adjacent pair.

    Pair counts are frequency-weighted over the corpus; ties break to the
    lexicographically smallest (left, right) pair; training stops after
    ``num_merges`` or when no pair occurs at least twice.
    """
    corpus = list(corpus)
    if not corpus:
        raise CorpusError("empty corpus")
    for w in corpus:
        _check_word(w)
    freqs = Counter(corpus)
    segs: dict[str, tuple[str, ...]] = {w: tuple(w) for w in freqs}
    merges: list[tuple[str, str]] = []
    for _ in range(num_merges):
        counts: Counter = Counter()
        for w, f in freqs.items():
            seg = segs[w]
            for pair in zip(seg, seg[1:]):
                counts[pair] += f
        if not counts:
            break
        top = max(counts.values())
        if top < 2:
            break
        best = min(p for p, c in counts.items() if c == top)
        merges.append(best)
        segs = {w: _merge_once(seg, best) for w, seg in segs.items()}
    tokens = [PAD_TOKEN, EOS_TOKEN, UNK_TOKEN] + list(ALPHABET)
    seen = set(tokens)
    for left, right in merges:
        unit = left + right
        if unit not in seen:
            tokens.append(unit)
            seen.add(unit)
    vocab = Vocabulary(tokens=tuple(tokens), granularity="bpe", unk_id=2)
    return vocab, MergeTable(pairs=tuple(merges))


def bpe_segment(text: str, merges: MergeTable) -> list[str]:
    """Split to characters, then replay every merge rule in table order."""
    _check_word(text)
    seg = tuple(text)
    for pair in merges.pairs:
        if len(seg) == 1:
            break
        seg = _merge_once(seg, pair)
    return list(seg)


def bpe_encode(text: str, merges: MergeTable, vocab: Vocabulary, t: int) -> TokenSequence:
    tokens = bpe_segment(text, merges)
    ids = [vocab.id_of(tok) if vocab.id_of(tok) is not None else vocab.unk_id for tok in tokens]
    return _finalize(ids, t, vocab)


# --- wordpiece ---

def _wp_seed_units() -> list[str]:
    return list(ALPHABET) + [CONT_PREFIX + c for c in ALPHABET]


def wordpiece_segment(text: str, vocab_units: frozenset[str] | set[str]) -> list[str] | None:
    """Greedy longest-match-first; None when some position has no match.

    The first piece matches word-initial units, later pieces match
    continuation (##) units.
    """
    pieces: list[str] = []
    i = 0
    n = len(text)
    while i < n:
        match = None
        for j in range(n, i, -1):
            cand = text[i:j] if i == 0 else CONT_PREFIX + text[i:j]
            if cand in vocab_units:
                match = cand
                i = j
                break
        if match is None:
            return None
        pieces.append(match)
    return pieces


def _wp_candidate(u: str, v: str) -> str:
    """Concatenate adjacent pieces; the left piece keeps its marker."""
    return u + v[len(CONT_PREFIX):]


def _wp_sort_key(unit: str) -> tuple[str, bool]:
    #  bare units sort before their ## twins; text compares without the marker
    cont = unit.startswith(CONT_PREFIX)
    return (unit[len(CONT_PREFIX):] if cont else unit, cont)


def wordpiece_train(corpus, vocab_size: int) -> Vocabulary:
    """Grow a wordpiece vocabulary by frequency-greedy unit concatenation.

    Seeds with all characters (bare and ##-prefixed), then repeatedly adds
    the most frequent concatenation of adjacent units under the current
    greedy segmentation; ties break lexicographically (marker-stripped text
    first, bare before continuation). Units that stop being used by the
    corpus segmentation are dropped so every retained unit stays reachable.
    """
    corpus = list(corpus)
    if not corpus:
        raise CorpusError("empty corpus")
    for w in corpus:
        _check_word(w)
    if vocab_size < WP_SEED_SIZE:
        raise ConfigError(
            f"vocab_size {vocab_size} below seed inventory {WP_SEED_SIZE}"
        )
    freqs = Counter(corpus)
    seed = _wp_seed_units()
    learned: list[str] = []

    def segment_all(units: set[str]) -> dict[str, list[str]]:
        return {w: wordpiece_segment(w, units) for w in freqs}

    units = set(seed)
    segs = segment_all(units)
    max_rounds = 10 * vocab_size  # hard stop; add/drop cycles cannot spin forever
    for _ in range(max_rounds):
        if 3 + len(seed) + len(learned) >= vocab_size:
            break
        counts: Counter = Counter()
        for w, f in freqs.items():
            seg = segs[w]
            for u, v in zip(seg, seg[1:]):
                counts[_wp_candidate(u, v)] += f
        fresh = {c: n for c, n in counts.items() if c not in units}
        if not fresh:
            break
        top = max(fresh.values())
        best = min((c for c, n in fresh.items() if n == top), key=_wp_sort_key)
        learned.append(best)
        units.add(best)
        segs = segment_all(units)
        used = set()
        for seg in segs.values():
            used.update(seg)
        orphaned = [u for u in learned if u not in used]
        if orphaned:
            learned = [u for u in learned if u in used]
            units = set(seed) | set(learned)
            segs = segment_all(units)
    tokens = [PAD_TOKEN, EOS_TOKEN, UNK_TOKEN] + seed + learned
    return Vocabulary(tokens=tuple(tokens), granularity="wordpiece", unk_id=2)


def wordpiece_encode(text: str, vocab: Vocabulary, t: int) -> TokenSequence:
    _check_word(text)
    units = set(vocab.tokens[3:])
    pieces = wordpiece_segment(text, units)
    if pieces is None:
        ids = [vocab.unk_id]
    else:
        ids = [vocab.id_of(p) for p in pieces]
    return _finalize(ids, t, vocab)


# --- uniform front-end used by the trainer and CLI ---

@dataclass(frozen=True)
class Codec:
    """One granularity's encode/decode bundle."""

    granularity: str
    vocab: Vocabulary
    merges: MergeTable | None = None

    def encode(self, text: str, t: int) -> TokenSequence:
        if self.granularity == "char":
            return char_encode(text, t)
        if self.granularity == "bpe":
            return bpe_encode(text, self.merges, self.vocab, t)
        return wordpiece_encode(text, self.vocab, t)

    def decode(self, ids) -> str:
        return decode(ids, self.vocab)


def train_codec(granularity: str, corpus, size: int | None = None) -> Codec:
    """Build a codec; char ignores the corpus (fixed closed alphabet)."""
    if granularity == "char":
        return Codec("char", char_vocab())
    if granularity == "bpe":
        vocab, merges = bpe_train(corpus, DEFAULT_BPE_MERGES if size is None else size)
        return Codec("bpe", vocab, merges)
    if granularity == "wordpiece":
        vocab = wordpiece_train(corpus, DEFAULT_WP_VOCAB if size is None else size)
        return Codec("wordpiece", vocab)
    raise ConfigError(f"unknown granularity {granularity!r}")
