"""Adam, the training loop with dev-based model selection, evaluation,
WER-bucket stratification, and the paired sign test."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import models as M
from . import tensor as T
from .config import ConfigError, TrainConfig, derive_seed
from .data import build_vocab, pad_ids, tokenize
from .phonetics import g2p
from .tensor import ShapeError


class DivergenceError(RuntimeError):
    """Loss or gradients went non-finite during training."""


class ClassMismatchError(ValueError):
    """An evaluation example carries a label unseen at training time."""


# ---------------------------------------------------------------------------
# Adam

@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState):
    """One bias-corrected Adam update; moments are kept in float64.

    Only parameters present in grads move. Returns (params, state); the
    params dict is updated with freshly allocated arrays.
    """
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for name in sorted(grads):
        g = np.asarray(grads[name])
        p = params[name]
        if g.shape != p.shape:
            raise ShapeError(f"adam_step: grad {g.shape} vs param {p.shape} "
                             f"for {name!r}")
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient in {name!r} at step {state.t}")
        g = g.astype(np.float64)
        m = state.m.get(name)
        if m is None:
            m = np.zeros(p.shape, dtype=np.float64)
            v = np.zeros(p.shape, dtype=np.float64)
        else:
            v = state.v[name]
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.m[name] = m
        state.v[name] = v
        step = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        params[name] = (p.astype(np.float64) - step).astype(p.dtype)
    return params, state


def clip_grads(grads: dict, max_norm: float) -> dict:
    """Global-norm clipping; identity when the norm is under max_norm."""
    total = math.sqrt(sum(float(np.sum(np.square(g.astype(np.float64))))
                          for g in grads.values()))
    if total <= max_norm or total == 0.0:
        return grads
    scale = max_norm / total
    return {name: g * scale for name, g in grads.items()}


# ---------------------------------------------------------------------------
# batch assembly

def _truncate_pad(vocab, tokens, max_len):
    # training data may exceed the model maxima; clip rather than reject
    return pad_ids(vocab, tokens[:max_len], max_len)


def _pad_phonemes(vocab, phonemes, max_len):
    return pad_ids(vocab, list(phonemes)[:max_len], max_len)


def encode_field(model: M.CasluModel, examples, input_field: str, lexicon=None):
    """Examples -> padded id/mask arrays for one input field.

    input_field "asr" reads (text_asr, phonemes_asr); "trans" reads
    text_clean and re-derives phonemes through g2p, which needs a lexicon
    for any phoneme-consuming variant. Text-only variants never touch the
    phoneme fields.
    """
    if input_field not in ("trans", "asr"):
        raise ValueError(f"input_field must be trans or asr, got {input_field!r}")
    text_ids, text_mask = [], []
    phon_ids, phon_mask = [], []
    uses_phonemes = model.variant not in M.TEXT_ONLY_VARIANTS
    if uses_phonemes and input_field == "trans" and lexicon is None:
        raise ConfigError("trans-field evaluation of a phoneme-consuming "
                          "variant needs a lexicon to re-derive phonemes")
    for ex in examples:
        tokens = tokenize(ex.text_clean if input_field == "trans" else ex.text_asr)
        ids, mask = _truncate_pad(model.text_vocab, tokens, model.max_len_text)
        text_ids.append(ids)
        text_mask.append(mask)
        if uses_phonemes:
            phonemes = (g2p(tokens, lexicon) if input_field == "trans"
                        else ex.phonemes_asr)
            ids, mask = _pad_phonemes(model.phoneme_vocab, phonemes,
                                      model.max_len_phonemes)
            phon_ids.append(ids)
            phon_mask.append(mask)
    text = (np.asarray(text_ids), np.asarray(text_mask, dtype=float))
    if not uses_phonemes:
        return text + (None, None)
    return text + (np.asarray(phon_ids), np.asarray(phon_mask, dtype=float))


def _label_indices(examples, class_names):
    index = {name: i for i, name in enumerate(class_names)}
    out = []
    for ex in examples:
        if ex.label not in index:
            raise ClassMismatchError(f"label {ex.label!r} was never seen at "
                                     f"training time")
        out.append(index[ex.label])
    return np.asarray(out)


def _slice(batch, sel):
    return tuple(None if part is None else part[sel] for part in batch)


def predict_ids(model: M.CasluModel, batch, batch_size=64) -> np.ndarray:
    """Argmax class indices for padded id/mask arrays, in chunks."""
    n = batch[0].shape[0]
    out = np.empty(n, dtype=int)
    for lo in range(0, n, batch_size):
        sel = slice(lo, lo + batch_size)
        tape = T.Tape()
        bound = M.bind(model, tape, requires_grad=False)
        logits = M.forward_batch(model, bound, *_slice(batch, sel))
        out[sel] = np.argmax(logits.value, axis=1)
    return out


# ---------------------------------------------------------------------------
# training loop

@dataclass
class TrainResult:
    model: M.CasluModel
    best_epoch: int
    best_dev_accuracy: float
    history: list


def select_best(dev_accuracies) -> int:
    """1-based epoch of the best dev accuracy; ties go to the earlier epoch."""
    best, best_epoch = -1.0, 0
    for epoch, acc in enumerate(dev_accuracies, start=1):
        if acc > best:
            best, best_epoch = acc, epoch
    return best_epoch


def dev_input_field(variant: str) -> str:
    # the transcript-trained baseline selects on transcripts; everything
    # else is trained for ASR inputs and selects on them
    return "trans" if variant == "TEXT_ONLY_TRS" else "asr"


def train(cfg: TrainConfig, train_set, dev_set, *, seed=None, lexicon=None,
          model=None, log=None) -> TrainResult:
    """Epoch loop with per-epoch dev selection; returns the best checkpoint.

    All randomness is derived from seed (default cfg.seeds[0]) via named
    streams, so reruns reproduce the history exactly. Pass model to warm
    start; otherwise vocab and parameters are built from the train split.
    """
    if not train_set or not dev_set:
        raise ValueError("train: empty split")
    if seed is None:
        seed = cfg.seeds[0]
    if model is None:
        text_vocab, phon_vocab = build_vocab(train_set, cfg.min_count)
        class_names = sorted({ex.label for ex in train_set})
        model = M.init_model(
            cfg.variant, class_names, text_vocab, phon_vocab, arch=cfg.arch,
            d_w=cfg.d_w, d_p=cfg.d_p or None, hidden=cfg.hidden,
            max_len_text=cfg.max_len_text, max_len_phonemes=cfg.max_len_phonemes,
            epsilon=cfg.epsilon, premask=cfg.premask,
            seed=derive_seed(seed, "init"), init_range=cfg.init_range)
    variant = model.variant

    field_name = dev_input_field(variant)
    batch_all = encode_field(model, train_set, field_name, lexicon)
    labels_all = _label_indices(train_set, model.class_names)
    if variant == "CASLU_VAT":
        if lexicon is None:
            raise ConfigError("CASLU_VAT needs a lexicon for the clean-side "
                              "phonemes of its consistency pairs")
        clean_all = encode_field(model, train_set, "trans", lexicon)
    dev_batch = encode_field(model, dev_set, dev_input_field(variant), lexicon)
    dev_labels = _label_indices(dev_set, model.class_names)

    opt = AdamState(lr=cfg.lr)
    n = len(train_set)
    history = []
    best_acc, best_epoch, best_params = -1.0, 0, None
    for epoch in range(1, cfg.epochs + 1):
        order = np.random.default_rng(
            derive_seed(seed, "shuffle", epoch)).permutation(n)
        epoch_loss = 0.0
        for bnum, lo in enumerate(range(0, n, cfg.batch_size), start=1):
            sel = order[lo:lo + cfg.batch_size]
            tape = T.Tape()
            bound = M.bind(model, tape)
            if variant == "CASLU_VAT":
                loss = M.vat_loss_batch(model, bound, _slice(clean_all, sel),
                                        _slice(batch_all, sel),
                                        labels_all[sel], lam=cfg.vat_lambda)
            else:
                logits = M.forward_batch(model, bound, *_slice(batch_all, sel))
                loss = M.batch_cross_entropy(logits, labels_all[sel])
            value = float(loss.value)
            if not math.isfinite(value):
                raise DivergenceError(f"loss diverged at epoch {epoch} "
                                      f"batch {bnum}")
            epoch_loss += value * len(sel)
            tape.backward(loss)
            grads = {name: leaf.grad for name, leaf in bound.items()
                     if leaf.grad is not None}
            for name in ("text_embedding", "phoneme_embedding"):
                if name in grads:
                    grads[name][0] = 0.0  # PAD row stays frozen
            if cfg.clip_norm > 0:
                grads = clip_grads(grads, cfg.clip_norm)
            adam_step(model.params, grads, opt)
        preds = predict_ids(model, dev_batch, cfg.batch_size)
        dev_acc = float(np.mean(preds == dev_labels))
        history.append({"epoch": epoch, "train_loss": epoch_loss / n,
                        "dev_accuracy": dev_acc})
        if log is not None:
            log(history[-1])
        if dev_acc > best_acc:
            best_acc, best_epoch = dev_acc, epoch
            best_params = {k: v.copy() for k, v in model.params.items()}
    model.params = best_params
    return TrainResult(model=model, best_epoch=best_epoch,
                       best_dev_accuracy=best_acc, history=history)


# ---------------------------------------------------------------------------
# evaluation

@dataclass
class EvalReport:
    input_field: str
    accuracy: float
    n: int
    class_names: list
    confusion: list
    predictions: list
    correct: list
    buckets: list | None = None

    def to_dict(self) -> dict:
        return {"input_field": self.input_field, "accuracy": self.accuracy,
                "n": self.n, "class_names": self.class_names,
                "confusion": self.confusion, "predictions": self.predictions,
                "correct": self.correct, "buckets": self.buckets}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def evaluate(model: M.CasluModel, examples, input_field="asr", *, lexicon=None,
             boundaries=None, batch_size=64) -> EvalReport:
    """Accuracy over argmax predictions; never mutates the checkpoint."""
    examples = list(examples)
    if not examples:
        raise ValueError("evaluate: empty test set")
    labels = _label_indices(examples, model.class_names)
    batch = encode_field(model, examples, input_field, lexicon)
    preds = predict_ids(model, batch, batch_size)
    correct = preds == labels
    k = len(model.class_names)
    confusion = np.zeros((k, k), dtype=int)
    for t_label, p_label in zip(labels, preds):
        confusion[t_label, p_label] += 1
    buckets = None
    if boundaries is not None:
        buckets = stratify_by_wer([ex.wer for ex in examples],
                                  correct.tolist(), boundaries)
    return EvalReport(
        input_field=input_field, accuracy=float(np.mean(correct)),
        n=len(examples), class_names=list(model.class_names),
        confusion=confusion.tolist(),
        predictions=[model.class_names[i] for i in preds],
        correct=correct.tolist(), buckets=buckets)


def average_accuracy(reports) -> dict:
    """Exact mean over per-seed reports of one (variant, field) cell."""
    accs = [r.accuracy for r in reports]
    return {"mean": sum(accs) / len(accs), "per_seed": accs}


def render_table(rows) -> str:
    """Rows {"variant", "trans", "asr"} (fractions or None) -> text table."""
    width = max([len("Variant")] + [len(r["variant"]) for r in rows])
    out = [f"{'Variant':<{width}}  {'Trans(%)':>9}  {'ASR(%)':>9}"]

    def cell(x):
        return f"{100.0 * x:9.2f}" if x is not None else f"{'-':>9}"

    for r in rows:
        out.append(f"{r['variant']:<{width}}  {cell(r.get('trans'))}  "
                   f"{cell(r.get('asr'))}")
    return "\n".join(out)


def stratify_by_wer(wers, correct, boundaries=(0.3, 0.6)) -> list:
    """Bucket accuracies over [0,w1), [w1,w2), [w2,inf)."""
    w1, w2 = boundaries
    if not 0 < w1 < w2:
        raise ValueError("stratify_by_wer: boundaries must be increasing positives")
    edges = [(0.0, w1), (w1, w2), (w2, math.inf)]
    buckets = []
    for low, high in edges:
        hits = [c for w, c in zip(wers, correct) if low <= w < high]
        buckets.append({
            "low": low, "high": None if high == math.inf else high,
            "count": len(hits),
            "accuracy": float(np.mean(hits)) if hits else None})
    return buckets


# ---------------------------------------------------------------------------
# paired sign test

def discordant(pred_a, pred_b, labels):
    """(a-correct/b-wrong, a-wrong/b-correct) counts over aligned vectors."""
    if not len(pred_a) == len(pred_b) == len(labels):
        raise ValueError("sign test inputs are not aligned")
    n_a = n_b = 0
    for a, b, y in zip(pred_a, pred_b, labels):
        if (a == y) and (b != y):
            n_a += 1
        elif (a != y) and (b == y):
            n_b += 1
    return n_a, n_b


def sign_test(pred_a, pred_b, labels) -> float:
    """Two-sided exact binomial sign test on discordant pairs."""
    n_a, n_b = discordant(pred_a, pred_b, labels)
    n = n_a + n_b
    if n == 0:
        return 1.0
    k = max(n_a, n_b)
    tail = sum(math.comb(n, i) for i in range(k, n + 1)) / 2.0 ** n
    return min(1.0, 2.0 * tail)
