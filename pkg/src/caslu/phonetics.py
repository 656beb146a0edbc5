"""Pronunciation lexicon, G2P, the phoneme noisy channel, and the
homophone back-mapper that together simulate ASR-style errors.

The simulator pipeline for one utterance is
    words --g2p--> phonemes --corrupt--> noisy phonemes
          --phonemes_to_words--> similar-sounding word sequence
so the word-level errors it produces are phonetically plausible
("buy a computer" -> "by a computer"), not random token swaps.
"""

from __future__ import annotations

import json
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import DatasetExample, tokenize
from .metrics import wer

UNK_PHONEME = "<unk>"
UNK_WORD = "<unk>"


class LexiconError(ValueError):
    """A lexicon file line cannot be parsed."""


class ConfusionError(ValueError):
    """A confusion model violates its stochasticity contract."""


def _normalize_phoneme(p: str) -> str:
    return p.lower().rstrip("0123456789")


@dataclass
class Lexicon:
    """word -> pronunciations, with a reverse index for exact back-mapping.

    frequency ranks words when several share a pronunciation (or sit at the
    same edit distance from a noisy span); absent words rank lowest.
    """

    entries: dict
    frequency: dict = field(default_factory=dict)

    def __post_init__(self):
        self.inventory = set()
        self.reverse = {}
        self.by_length = {}
        self.max_pron_len = 0
        for word, prons in self.entries.items():
            for pron in prons:
                if not pron:
                    raise LexiconError(f"empty pronunciation for {word!r}")
                pron = tuple(pron)
                self.inventory.update(pron)
                self.reverse.setdefault(pron, set()).add(word)
                self.by_length.setdefault(len(pron), []).append(
                    (word, pron, Counter(pron)))
                self.max_pron_len = max(self.max_pron_len, len(pron))
        for bucket in self.by_length.values():
            bucket.sort(key=lambda e: e[0])
        self._span_cache = {}

    def words(self):
        return self.entries.keys()

    def freq(self, word):
        return self.frequency.get(word, 0)

    def span_candidates(self, span, beam=5, max_cost=2):
        """Best lexicon words for one noisy phoneme span.

        Returns up to beam (cost, word) pairs sorted by cost, then higher
        frequency, then word. Exact matches short-circuit the fuzzy scan.
        """
        span = tuple(span)
        key = (span, beam, max_cost)
        hit = self._span_cache.get(key)
        if hit is not None:
            return hit
        exact = self.reverse.get(span)
        if exact:
            ranked = sorted(exact, key=lambda w: (-self.freq(w), w))
            out = [(0, w) for w in ranked[:beam]]
            self._span_cache[key] = out
            return out
        L = len(span)
        span_counts = Counter(span)
        best = {}
        for plen in range(max(1, L - max_cost), L + max_cost + 1):
            for word, pron, pron_counts in self.by_length.get(plen, ()):
                # cheap lower bound before the real distance
                overlap = sum(min(c, pron_counts[p]) for p, c in span_counts.items())
                if max(L, plen) - overlap > max_cost:
                    continue
                d = _lev_capped(span, pron, max_cost)
                if d <= max_cost and d < best.get(word, max_cost + 1):
                    best[word] = d
        out = sorted(((d, w) for w, d in best.items()),
                     key=lambda dw: (dw[0], -self.freq(dw[1]), dw[1]))[:beam]
        self._span_cache[key] = out
        return out


def _lev_capped(a, b, cap):
    """Levenshtein distance, early-abandoned once it must exceed cap."""
    if abs(len(a) - len(b)) > cap:
        return cap + 1
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j - 1] + (ca != cb), cur[-1] + 1, prev[j] + 1))
        if min(cur) > cap:
            return cap + 1
        prev = cur
    return prev[-1]


def parse_lexicon(lines, frequencies=None) -> Lexicon:
    """CMU-dictionary convention: word, whitespace, phonemes.

    "WORD(2)" marks alternate pronunciations; "#" or ";;;" starts a comment
    line; stress digits on phonemes are stripped; everything lowercases.
    """
    entries = {}
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line or line.startswith("#") or line.startswith(";;;"):
            continue
        parts = line.split()
        if len(parts) < 2:
            raise LexiconError(f"line {lineno}: expected word and phonemes")
        word = parts[0].lower()
        if word.endswith(")") and "(" in word:
            word = word[:word.index("(")]
        entries.setdefault(word, []).append(
            tuple(_normalize_phoneme(p) for p in parts[1:]))
    return Lexicon(entries, dict(frequencies or {}))


def load_lexicon(path, frequencies=None) -> Lexicon:
    with open(path, encoding="utf-8") as fh:
        return parse_lexicon(fh, frequencies)


def g2p(words, lexicon: Lexicon) -> list:
    """First listed pronunciation per word; OOV words become one UNK phoneme."""
    out = []
    for word in words:
        prons = lexicon.entries.get(word)
        if prons:
            out.extend(prons[0])
        else:
            out.append(UNK_PHONEME)
    return out


# ---------------------------------------------------------------------------
# noisy channel

@dataclass
class ConfusionModel:
    phonemes: list
    sub: np.ndarray
    p_ins: float
    p_del: float

    def __post_init__(self):
        self.sub = np.asarray(self.sub, dtype=float)
        if self.sub.shape != (len(self.phonemes), len(self.phonemes)):
            raise ConfusionError(f"substitution matrix {self.sub.shape} does not "
                                 f"match {len(self.phonemes)} phonemes")
        rows = self.sub.sum(axis=1)
        if np.abs(rows - 1.0).max() > 1e-9:
            raise ConfusionError("substitution rows must each sum to 1")
        if self.sub.min() < 0:
            raise ConfusionError("substitution probabilities must be nonnegative")
        for rate, name in ((self.p_ins, "p_ins"), (self.p_del, "p_del")):
            if not 0.0 <= rate <= 1.0:
                raise ConfusionError(f"{name} must lie in [0, 1]")
        self.index = {p: i for i, p in enumerate(self.phonemes)}

    @classmethod
    def identity(cls, phonemes) -> "ConfusionModel":
        return cls(list(phonemes), np.eye(len(phonemes)), 0.0, 0.0)

    def to_json(self) -> str:
        return json.dumps({"phonemes": list(self.phonemes),
                           "sub": self.sub.tolist(),
                           "p_ins": self.p_ins, "p_del": self.p_del})

    @classmethod
    def from_json(cls, text: str) -> "ConfusionModel":
        d = json.loads(text)
        return cls(d["phonemes"], d["sub"], d["p_ins"], d["p_del"])


def load_confusion(path) -> ConfusionModel:
    with open(path, encoding="utf-8") as fh:
        return ConfusionModel.from_json(fh.read())


def save_confusion(cm: ConfusionModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(cm.to_json() + "\n")


def corrupt(phonemes, cm: ConfusionModel, rng) -> list:
    """Sample one noisy rendering of a phoneme sequence.

    Per position: delete with p_del, otherwise emit a draw from that
    phoneme's substitution row; after each position insert a uniformly
    random phoneme with p_ins. Phonemes outside the inventory (the UNK
    marker) pass through untouched.
    """
    out = []
    k = len(cm.phonemes)
    for p in phonemes:
        row = cm.index.get(p)
        if row is None:
            out.append(p)
        elif rng.random() >= cm.p_del:
            out.append(cm.phonemes[rng.choice(k, p=cm.sub[row])])
        if rng.random() < cm.p_ins:
            out.append(cm.phonemes[rng.integers(k)])
    return out


# ---------------------------------------------------------------------------
# homophone back-mapping

def phonemes_to_words(phonemes, lexicon: Lexicon, beam=5, max_cost=2) -> list:
    """Segment noisy phonemes into the closest-sounding word sequence.

    Dynamic program over prefix lengths: a span may become a lexicon word
    at its capped edit distance, or a single phoneme may be swallowed at
    unit cost (an UNK step). Consecutive UNK steps merge into one UNK
    word. Span ties go to higher-frequency, then lexicographically
    earlier, words.
    """
    seq = tuple(phonemes)
    n = len(seq)
    if n == 0:
        return []
    INF = float("inf")
    cost = [INF] * (n + 1)
    cost[0] = 0.0
    back = [None] * (n + 1)
    max_span = lexicon.max_pron_len + max_cost
    for i in range(1, n + 1):
        if cost[i - 1] + 1 < cost[i]:
            cost[i] = cost[i - 1] + 1
            back[i] = (i - 1, UNK_WORD)
        for width in range(1, min(max_span, i) + 1):
            j = i - width
            if cost[j] == INF:
                continue
            cands = lexicon.span_candidates(seq[j:i], beam, max_cost)
            if not cands:
                continue
            c, word = cands[0]
            total = cost[j] + c
            # a real word wins a tie against the UNK step
            if total < cost[i] or (total == cost[i] and back[i] is not None
                                   and back[i][1] == UNK_WORD):
                cost[i] = total
                back[i] = (j, word)
    words = []
    i = n
    while i > 0:
        j, word = back[i]
        if word != UNK_WORD or not words or words[-1] != UNK_WORD:
            words.append(word)
        i = j
    words.reverse()
    return words


# ---------------------------------------------------------------------------
# corpus synthesis

def _simulate_one(index, text, label, lexicon, cm, seed, beam):
    rng = np.random.default_rng(seed ^ index)
    words = tokenize(text)
    clean_phonemes = g2p(words, lexicon)
    noisy = corrupt(clean_phonemes, cm, rng)
    asr_words = phonemes_to_words(noisy, lexicon, beam=beam)
    return DatasetExample(
        id=f"ex{index:06d}", text_clean=" ".join(words),
        text_asr=" ".join(asr_words), phonemes_asr=noisy, label=label,
        wer=wer(words, asr_words) if words else 0.0)


_POOL_STATE = {}


def _pool_init(lexicon, cm, seed, beam):
    _POOL_STATE.update(lexicon=lexicon, cm=cm, seed=seed, beam=beam)


def _pool_task(args):
    index, text, label = args
    return _simulate_one(index, text, label, _POOL_STATE["lexicon"],
                         _POOL_STATE["cm"], _POOL_STATE["seed"],
                         _POOL_STATE["beam"])


def make_noisy_corpus(corpus, lexicon: Lexicon, cm: ConfusionModel,
                      keep_only_errors=True, seed=0, beam=5, workers=1) -> list:
    """Run the simulator over (text, label) pairs.

    Per-example randomness is seeded with seed XOR example index, so the
    output is identical for any worker count and any processing order.
    keep_only_errors drops examples whose ASR text matches the clean text.
    """
    corpus = list(corpus)
    if not corpus:
        raise ValueError("make_noisy_corpus: empty input corpus")
    tasks = [(i, text, label) for i, (text, label) in enumerate(corpus)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers, initializer=_pool_init,
                                 initargs=(lexicon, cm, seed, beam)) as pool:
            examples = list(pool.map(_pool_task, tasks, chunksize=64))
    else:
        examples = [_simulate_one(i, text, label, lexicon, cm, seed, beam)
                    for i, text, label in tasks]
    if keep_only_errors:
        examples = [ex for ex in examples if ex.wer > 0]
    return examples
