"""Built-in synthetic homophone benchmark.

Four music intents whose keywords sit one phoneme away from decoy words
in the packaged lexicon ("add" vs "odd", "buy" vs "by", "end" vs "and").
The noisy channel flips keyword phonemes toward the decoys, so the
ASR-side text loses its intent-bearing tokens while the phoneme sequence
keeps most of the evidence. Nouns and function words are shared across
classes, leaving keywords as the only reliable signal.
"""

import os

import numpy as np

from .config import derive_seed
from .phonetics import Lexicon, load_confusion, load_lexicon, make_noisy_corpus

DATA_DIR = os.path.join(os.path.dirname(__file__), "data")
LEXICON_PATH = os.path.join(DATA_DIR, "lexicon_small.txt")
CONFUSION_PATH = os.path.join(DATA_DIR, "confusion_default.json")

# unigram-style counts for back-mapping tie-breaks: common words win
# pronunciation ties, so "buy" transcribes as "by" and "end" as "and"
WORD_FREQUENCIES = {
    "the": 950, "to": 620, "a": 600, "i": 560, "and": 480, "you": 300,
    "it": 290, "that": 260, "in": 250, "this": 230, "my": 210, "on": 200,
    "for": 190, "me": 180, "by": 170, "here": 160, "how": 150, "now": 140,
    "no": 130, "got": 120, "from": 115, "an": 110, "at": 105, "can": 100,
    "too": 95, "some": 90, "two": 85, "had": 80, "say": 75, "of": 72,
    "old": 70, "last": 65, "four": 60, "went": 50, "pay": 50, "step": 48,
    "boy": 47, "get": 45, "top": 45, "shop": 40, "him": 40, "list": 38,
    "song": 36, "near": 36, "bye": 35, "lost": 35, "music": 34, "safe": 33,
    "play": 33, "head": 32, "star": 31, "ed": 30, "put": 30, "wave": 30,
    "miss": 30, "foot": 29, "smart": 29, "odd": 28, "start": 28, "truck": 28,
    "lay": 27, "stop": 26, "aid": 26, "bet": 26, "wrong": 26, "hat": 26,
    "add": 25, "pie": 25, "end": 24, "gate": 24, "fear": 24, "pray": 23,
    "jet": 22, "save": 22, "clay": 21, "bay": 21, "pose": 21, "buy": 20,
    "sum": 20, "paws": 19, "hear": 18, "pit": 18, "sang": 17, "order": 16,
    "pause": 15, "sung": 15, "hid": 14, "track": 13, "eye": 12, "border": 12,
    "playlist": 11, "album": 10, "radio": 9, "odor": 8, "pot": 42,
}

CLASSES = ("add_to_list", "buy_music", "play_music", "stop_music")

KEYWORDS = {
    "add_to_list": ("add", "save", "put"),
    "buy_music": ("buy", "get", "order"),
    "play_music": ("play", "start", "hear"),
    "stop_music": ("stop", "pause", "end"),
}

NOUNS = ("song", "track", "album", "music", "playlist", "radio", "list")

TEMPLATES = {
    "add_to_list": (
        "{kw} this {n}",
        "{kw} the {n} to my {n2}",
        "i want to {kw} this {n}",
        "please {kw} a {n} to the {n2}",
        "can you {kw} that {n} for me",
        "{kw} it to my {n} now",
    ),
    "buy_music": (
        "{kw} this {n} for me",
        "i want to {kw} a new {n}",
        "{kw} the {n} now",
        "please {kw} that {n}",
        "can you {kw} me the {n}",
        "{kw} two of the {n}",
    ),
    "play_music": (
        "{kw} some {n}",
        "{kw} the last {n}",
        "i want to {kw} a {n}",
        "can you {kw} the {n} for me",
        "please {kw} that {n} by him",
        "{kw} my new {n} now",
    ),
    "stop_music": (
        "{kw} the {n}",
        "{kw} it now",
        "please {kw} the {n} now",
        "i want to {kw} this {n}",
        "can you {kw} it for me",
        "{kw} my {n}",
    ),
}


def default_lexicon() -> Lexicon:
    return load_lexicon(LEXICON_PATH, frequencies=WORD_FREQUENCIES)


def default_confusion():
    return load_confusion(CONFUSION_PATH)


def make_clean_corpus(n: int, seed: int = 0) -> list:
    """n (text, label) pairs, classes interleaved and exactly balanced."""
    if n <= 0:
        raise ValueError("make_clean_corpus: n must be positive")
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        label = CLASSES[i % len(CLASSES)]
        template = TEMPLATES[label][rng.integers(len(TEMPLATES[label]))]
        kw = KEYWORDS[label][rng.integers(len(KEYWORDS[label]))]
        n1, n2 = rng.choice(len(NOUNS), size=2, replace=False)
        out.append((template.format(kw=kw, n=NOUNS[n1], n2=NOUNS[n2]), label))
    return out


def make_benchmark(n_train=2000, n_dev=300, n_test=500, seed=0, *,
                   lexicon=None, cm=None, beam=5, workers=1):
    """Generate disjoint train/dev/test splits of errorful examples.

    The clean pool is oversampled because keep_only_errors drops
    utterances the simulator happens to leave intact.
    """
    lexicon = lexicon or default_lexicon()
    cm = cm or default_confusion()
    total = n_train + n_dev + n_test
    pool = make_clean_corpus(int(total * 1.4) + 200, derive_seed(seed, "clean"))
    examples = make_noisy_corpus(pool, lexicon, cm, keep_only_errors=True,
                                 seed=derive_seed(seed, "data"), beam=beam,
                                 workers=workers)
    if len(examples) < total:
        raise RuntimeError(f"benchmark oversample too small: needed {total}, "
                           f"kept {len(examples)}")
    return (examples[:n_train], examples[n_train:n_train + n_dev],
            examples[n_train + n_dev:total])
