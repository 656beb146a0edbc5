#!/usr/bin/env python3
"""Regenerate the packaged default phoneme confusion matrix.

Each phoneme keeps its identity with probability KEEP and spreads the
rest uniformly over its perceptual neighbors: vowel-space neighbors for
vowels, shared place or manner for consonants. Edit the table, rerun,
and commit the refreshed JSON.
"""

import os
import sys

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from caslu.phonetics import ConfusionModel, save_confusion

KEEP = 0.80
P_INS = 0.02
P_DEL = 0.03

NEIGHBORS = {
    "aa": ["ae", "ah", "ao"],
    "ae": ["eh", "aa", "ah", "ey"],
    "ah": ["ae", "aa", "uh", "er"],
    "ao": ["aa", "ow", "uh"],
    "aw": ["ay", "aa", "ow"],
    "ay": ["aw", "oy", "ey"],
    "eh": ["ae", "ih", "ey", "ah"],
    "er": ["ah", "uh"],
    "ey": ["eh", "ih", "ae"],
    "ih": ["iy", "eh", "ah"],
    "iy": ["ih", "ey"],
    "ow": ["ao", "uw", "oy"],
    "oy": ["ay", "ow"],
    "uh": ["uw", "ah", "ao"],
    "uw": ["uh", "ow"],
    "b": ["p", "d", "g", "v"],
    "ch": ["jh", "sh", "t"],
    "d": ["t", "b", "g", "dh", "n"],
    "dh": ["th", "v", "d"],
    "f": ["v", "th", "hh", "p"],
    "g": ["k", "d", "b", "jh"],
    "hh": ["f", "th"],
    "jh": ["ch", "zh", "d", "g"],
    "k": ["g", "t", "p"],
    "l": ["r", "w"],
    "m": ["n", "ng", "b"],
    "n": ["m", "ng", "d"],
    "ng": ["n", "m", "g"],
    "p": ["b", "t", "k", "f"],
    "r": ["l", "w", "er"],
    "s": ["z", "sh", "th"],
    "sh": ["s", "zh", "ch"],
    "t": ["d", "p", "k", "ch"],
    "th": ["dh", "f", "s"],
    "v": ["f", "dh", "b"],
    "w": ["l", "r", "v"],
    "y": ["w", "jh", "iy"],
    "z": ["s", "zh", "dh"],
    "zh": ["z", "sh", "jh"],
}


def build() -> ConfusionModel:
    phonemes = sorted(NEIGHBORS)
    index = {p: i for i, p in enumerate(phonemes)}
    sub = np.zeros((len(phonemes), len(phonemes)))
    for p, neighbors in NEIGHBORS.items():
        row = index[p]
        sub[row, row] = KEEP
        for q in neighbors:
            sub[row, index[q]] = (1.0 - KEEP) / len(neighbors)
    return ConfusionModel(phonemes, sub, P_INS, P_DEL)


def main():
    out = os.path.join(os.path.dirname(__file__), "..", "src", "caslu",
                       "data", "confusion_default.json")
    out = os.path.abspath(sys.argv[1] if len(sys.argv) > 1 else out)
    save_confusion(build(), out)
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
