"""Properties of the bundled synthetic benchmark."""

from collections import Counter

import pytest

from caslu.benchmark import (CLASSES, KEYWORDS, NOUNS, TEMPLATES,
                             default_confusion, default_lexicon,
                             make_benchmark, make_clean_corpus)
from caslu.phonetics import ConfusionModel, g2p


@pytest.fixture(scope="module")
def small_benchmark():
    return make_benchmark(n_train=300, n_dev=60, n_test=120, seed=0)


def test_clean_corpus_balanced_and_deterministic():
    corpus = make_clean_corpus(120, seed=4)
    assert corpus == make_clean_corpus(120, seed=4)
    counts = Counter(label for _, label in corpus)
    assert set(counts) == set(CLASSES)
    assert max(counts.values()) - min(counts.values()) <= 1


def test_every_template_word_is_pronounceable():
    lex = default_lexicon()
    words = set(NOUNS)
    for cls in CLASSES:
        words.update(KEYWORDS[cls])
        for template in TEMPLATES[cls]:
            words.update(template.replace("{kw}", "").replace("{n}", "")
                         .replace("{n2}", "").split())
    for word in words:
        assert word in lex.entries, word
        assert g2p(word, lex), word


def test_confusion_covers_lexicon_inventory():
    lex = default_lexicon()
    cm = default_confusion()
    assert lex.inventory <= set(cm.phonemes)


def test_splits_sized_disjoint_and_deterministic(small_benchmark):
    train, dev, test = small_benchmark
    assert (len(train), len(dev), len(test)) == (300, 60, 120)
    ids = [ex.id for part in (train, dev, test) for ex in part]
    assert len(set(ids)) == len(ids)
    again = make_benchmark(n_train=300, n_dev=60, n_test=120, seed=0)
    assert [ex.id for ex in again[0]] == [ex.id for ex in train]
    assert [ex.text_asr for ex in again[2]] == [ex.text_asr for ex in test]


def test_splits_have_all_labels_and_real_errors(small_benchmark):
    train, dev, test = small_benchmark
    for part in (train, dev, test):
        assert set(ex.label for ex in part) == set(CLASSES)
        assert all(ex.wer > 0 for ex in part)
        assert all(ex.text_asr != ex.text_clean for ex in part)


def test_wer_spread_fills_strata(small_benchmark):
    train, _, test = small_benchmark
    wers = [ex.wer for ex in train + test]
    assert any(w <= 0.3 for w in wers)
    assert any(0.3 < w <= 0.6 for w in wers)
    assert any(w > 0.6 for w in wers)


def test_different_seed_changes_corruptions():
    a = make_benchmark(n_train=40, n_dev=10, n_test=10, seed=0)
    b = make_benchmark(n_train=40, n_dev=10, n_test=10, seed=1)
    assert [ex.text_asr for ex in a[0]] != [ex.text_asr for ex in b[0]]


def test_oversample_shortfall_raises():
    # identity confusion leaves only homophone flips, too few to fill splits
    ident = ConfusionModel.identity(default_confusion().phonemes)
    with pytest.raises(RuntimeError, match="oversample"):
        make_benchmark(n_train=300, n_dev=60, n_test=120, seed=0, cm=ident)
