"""Model zoo: CASLU, its baselines and ablations, losses, and checkpoints.

Variants share one structural recipe and differ in which pooled vectors
reach the classifier:

  CASLU          cross-attention pooled [t; p]
  TEXT_ONLY_TRS  mean-pooled text only, trained/evaluated on transcripts (B1)
  TEXT_ONLY_ASR  mean-pooled text only, on ASR hypotheses (B2)
  MULTI_INPUT    mean-pooled [t; p], no attention (B3)
  CASLU_WO_T     attention-pooled p only
  CASLU_WO_P     attention-pooled t only
  CASLU_VAT      CASLU plus a KL consistency loss on clean/ASR pairs
  CASLU_NBEST    CASLU over SEP-joined N-best hypotheses

Parameters live as named float32 numpy arrays; every forward binds them
onto a fresh tape, so inference is a pure function of (params, inputs).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import attention as A
from . import encoders as E
from . import tensor as T
from .data import SEP_ID, Vocab, pad_ids
from .tensor import ShapeError, Tensor

MAGIC = b"CASLU1"

VARIANTS = ("CASLU", "TEXT_ONLY_TRS", "TEXT_ONLY_ASR", "MULTI_INPUT",
            "CASLU_WO_T", "CASLU_WO_P", "CASLU_VAT", "CASLU_NBEST")
TEXT_ONLY_VARIANTS = ("TEXT_ONLY_TRS", "TEXT_ONLY_ASR")
ATTENTION_VARIANTS = ("CASLU", "CASLU_WO_T", "CASLU_WO_P", "CASLU_VAT", "CASLU_NBEST")


class CheckpointError(ValueError):
    """A checkpoint file is malformed or truncated."""


@dataclass
class CasluModel:
    variant: str
    arch: str
    d_w: int
    d_p: int
    hidden: int
    max_len_text: int
    max_len_phonemes: int
    class_names: list
    text_vocab: Vocab
    phoneme_vocab: Vocab
    epsilon: float = 1e-8
    premask: bool = True
    params: dict = field(default_factory=dict)

    @property
    def num_classes(self):
        return len(self.class_names)


@dataclass
class Prediction:
    logits: Tensor
    probs: np.ndarray
    label: int
    trace: A.AttentionTrace | None = None


def _softmax_np(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def kl_div(p, q) -> float:
    """KL(p || q) with natural log and the 0 log 0 = 0 convention."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    active = p > 0
    return float(np.sum(p[active] * (np.log(p[active]) - np.log(q[active]))))


def _uses_phonemes(variant):
    return variant not in TEXT_ONLY_VARIANTS


def _classifier_width(variant, text_width, phon_width):
    if variant in TEXT_ONLY_VARIANTS:
        return text_width
    if variant == "CASLU_WO_T":
        return phon_width
    if variant == "CASLU_WO_P":
        return text_width
    return text_width + phon_width


def param_shapes(model: CasluModel) -> dict:
    """Ordered name -> shape map defining the checkpoint layout."""
    shapes = {"text_embedding": (len(model.text_vocab), model.d_w)}
    if _uses_phonemes(model.variant):
        shapes["phoneme_embedding"] = (len(model.phoneme_vocab), model.d_p)

    def encoder(prefix, input_dim):
        if model.arch == "cnn":
            for name, shape in E.conv_param_shapes(input_dim).items():
                shapes[f"{prefix}.conv.{name}"] = shape
            return
        kind = "lstm" if "lstm" in model.arch else "gru"
        dirs = ("fwd", "bwd") if model.arch in ("bilstm", "bigru") else ("fwd",)
        for d in dirs:
            for name, shape in E.recurrent_param_shapes(input_dim, model.hidden, kind).items():
                shapes[f"{prefix}.{d}.{name}"] = shape

    encoder("text_enc", model.d_w)
    if _uses_phonemes(model.variant):
        encoder("phon_enc", model.d_p)
    if model.variant in ATTENTION_VARIANTS:
        shapes["k_text"] = (model.max_len_phonemes,)
        shapes["k_phoneme"] = (model.max_len_text,)
    width = E.encoder_out_width(model.arch, model.hidden)
    shapes["cls.w"] = (_classifier_width(model.variant, width, width), model.num_classes)
    shapes["cls.b"] = (model.num_classes,)
    return shapes


def init_model(variant, class_names, text_vocab, phoneme_vocab, *, arch="bilstm",
               d_w=128, d_p=None, hidden=150, max_len_text=40, max_len_phonemes=80,
               epsilon=1e-8, premask=True, seed=0, init_range=0.1) -> CasluModel:
    """Fresh model: uniform(-r, r) weights, zero biases and attention kernels.

    Kernels start at zero so CASLU's first forward is exactly the uniform
    pooling baseline. The PAD embedding row starts at zero and the trainer
    never updates it.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    if arch not in E.ARCHS:
        raise ValueError(f"unknown encoder arch {arch!r}")
    model = CasluModel(variant=variant, arch=arch, d_w=d_w, d_p=d_p or d_w,
                       hidden=hidden, max_len_text=max_len_text,
                       max_len_phonemes=max_len_phonemes,
                       class_names=list(class_names), text_vocab=text_vocab,
                       phoneme_vocab=phoneme_vocab, epsilon=epsilon, premask=premask)
    rng = np.random.default_rng(seed)
    for name, shape in param_shapes(model).items():
        zero = name.split(".")[-1].startswith("b") or name.startswith("k_")
        if zero:
            arr = np.zeros(shape, dtype=np.float32)
        else:
            arr = rng.uniform(-init_range, init_range, shape).astype(np.float32)
        if name.endswith("embedding"):
            arr[0] = 0.0
        model.params[name] = arr
    return model


def count_params(model: CasluModel) -> int:
    return sum(arr.size for arr in model.params.values())


def bind(model: CasluModel, tape: T.Tape, requires_grad=True) -> dict:
    """Put every parameter on a tape; returns name -> leaf Tensor."""
    return {name: tape.leaf(arr, requires_grad=requires_grad)
            for name, arr in model.params.items()}


def _bound_encoder(model, bound, prefix, max_len) -> E.EncoderParams:
    arch = model.arch
    width = E.encoder_out_width(arch, model.hidden)
    if arch == "cnn":
        conv = E.ConvParams(E.CNN_WIDTHS,
                            [bound[f"{prefix}.conv.w{w}"] for w in E.CNN_WIDTHS],
                            [bound[f"{prefix}.conv.b{w}"] for w in E.CNN_WIDTHS])
        return E.EncoderParams(arch, max_len, width, conv=conv)
    kind = "lstm" if "lstm" in arch else "gru"

    def rec(d):
        return E.RecurrentParams(kind, model.hidden, bound[f"{prefix}.{d}.wx"],
                                 bound[f"{prefix}.{d}.wh"], bound[f"{prefix}.{d}.b"])

    bwd = rec("bwd") if arch in ("bilstm", "bigru") else None
    return E.EncoderParams(arch, max_len, width, fwd=rec("fwd"), bwd=bwd)


def _forward_internals(model, bound, text_ids, text_mask, phon_ids, phon_mask,
                       variant=None):
    """Shared forward body. Returns (logits [B,K], dict of attention pieces)."""
    variant = variant or model.variant
    text_ids = np.asarray(text_ids)
    text_mask = np.asarray(text_mask, dtype=float)
    B = text_ids.shape[0]
    if text_ids.shape != (B, model.max_len_text):
        raise ShapeError(f"forward: text batch {text_ids.shape}, "
                         f"expected (B, {model.max_len_text})")
    text_table = E.EmbeddingTable(len(model.text_vocab), model.d_w,
                                  bound["text_embedding"])
    Hw = E.encode_batch(E.embed_batch(text_ids, text_table, text_mask), text_mask,
                        _bound_encoder(model, bound, "text_enc", model.max_len_text))
    extras = {}
    if variant in TEXT_ONLY_VARIANTS:
        feat = A.uniform_pool_batch(Hw, text_mask)
    else:
        phon_ids = np.asarray(phon_ids)
        phon_mask = np.asarray(phon_mask, dtype=float)
        if phon_ids.shape != (B, model.max_len_phonemes):
            raise ShapeError(f"forward: phoneme batch {phon_ids.shape}, "
                             f"expected (B, {model.max_len_phonemes})")
        phon_table = E.EmbeddingTable(len(model.phoneme_vocab), model.d_p,
                                      bound["phoneme_embedding"])
        Hp = E.encode_batch(E.embed_batch(phon_ids, phon_table, phon_mask), phon_mask,
                            _bound_encoder(model, bound, "phon_enc",
                                           model.max_len_phonemes))
        if variant == "MULTI_INPUT":
            t = A.uniform_pool_batch(Hw, text_mask)
            p = A.uniform_pool_batch(Hp, phon_mask)
            feat = T.concat_cols([t, p])
        else:
            C3 = A.correlation_batch(Hw, text_mask, Hp, phon_mask,
                                     epsilon=model.epsilon, premask=model.premask)
            alpha = A.row_attention_batch(C3, text_mask, bound["k_text"])
            beta = A.col_attention_batch(C3, phon_mask, bound["k_phoneme"])
            extras = {"C": C3, "alpha": alpha, "beta": beta}
            t = A.pool_batch(Hw, alpha)
            p = A.pool_batch(Hp, beta)
            if variant == "CASLU_WO_T":
                feat = p
            elif variant == "CASLU_WO_P":
                feat = t
            else:
                feat = T.concat_cols([t, p])
    logits = T.add_bias(T.matmul(feat, bound["cls.w"]), bound["cls.b"])
    return logits, extras


def forward_batch(model, bound, text_ids, text_mask, phon_ids=None, phon_mask=None,
                  variant=None) -> Tensor:
    logits, _ = _forward_internals(model, bound, text_ids, text_mask,
                                   phon_ids, phon_mask, variant)
    return logits


def _pad_one(ids, max_len, what):
    ids = list(ids)
    if len(ids) > max_len:
        raise ShapeError(f"forward: {what} length {len(ids)} exceeds maximum {max_len}")
    mask = [1] * len(ids) + [0] * (max_len - len(ids))
    return ids + [0] * (max_len - len(ids)), mask


def forward(model: CasluModel, text_ids, phoneme_ids=None, variant=None,
            trace=False) -> Prediction:
    """Single-utterance forward on a fresh tape. Pads inputs to the maxima."""
    variant = variant or model.variant
    tid, tmask = _pad_one(text_ids, model.max_len_text, "text")
    pid, pmask = _pad_one(phoneme_ids or [], model.max_len_phonemes, "phonemes")
    tape = T.Tape()
    bound = bind(model, tape, requires_grad=False)
    logits, extras = _forward_internals(
        model, bound, np.asarray([tid]), np.asarray([tmask]),
        np.asarray([pid]), np.asarray([pmask]), variant)
    probs = _softmax_np(logits.value[0].astype(np.float64))
    out_trace = None
    if trace:
        if variant not in ATTENTION_VARIANTS:
            raise ValueError(f"variant {variant} has no attention trace")
        nw = len(list(text_ids))
        np_len = len(list(phoneme_ids))
        out_trace = A.AttentionTrace(
            C=extras["C"].value[0, :nw, :np_len].copy(),
            alpha=extras["alpha"].value[0, :nw].copy(),
            beta=extras["beta"].value[0, :np_len].copy(),
            words=model.text_vocab.decode(list(text_ids)),
            phonemes=model.phoneme_vocab.decode(list(phoneme_ids)))
    return Prediction(logits=T.reshape(logits, (model.num_classes,)),
                      probs=probs, label=int(np.argmax(probs)), trace=out_trace)


def cross_entropy(pred: Prediction, label: int) -> Tensor:
    """-log softmax(logits)[label], fused through log-sum-exp."""
    k = pred.logits.shape[0]
    if not 0 <= label < k:
        raise ValueError(f"label {label} out of range for {k} classes")
    row = T.reshape(pred.logits, (1, k))
    return T.sum_all(T.softmax_xent(row, [label]))


def batch_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean cross-entropy of a [B,K] logits batch."""
    B = logits.shape[0]
    return T.scale(T.sum_all(T.softmax_xent(logits, labels)), 1.0 / B)


def vat_loss_batch(model, bound, clean, asr, labels, lam=1.0,
                   frozen_clean_probs=None) -> Tensor:
    """CE on the clean pair plus lam * KL(stopgrad(p_clean) || p_asr).

    clean and asr are (text_ids, text_mask, phon_ids, phon_mask) tuples for
    the same utterances. frozen_clean_probs substitutes a fixed KL target;
    training recomputes the target each step (the stop-gradient), while
    finite-difference checks must hold it constant to match the analytic
    gradient.
    """
    if len(clean[0]) != len(asr[0]):
        raise ValueError("vat_loss: clean and ASR batches are not paired")
    tape = bound["cls.w"].tape
    B = len(labels)
    logits_clean = forward_batch(model, bound, *clean, variant="CASLU")
    ce = batch_cross_entropy(logits_clean, labels)
    if frozen_clean_probs is None:
        pc = _softmax_np(logits_clean.value.astype(np.float64))
    else:
        pc = np.asarray(frozen_clean_probs, dtype=np.float64)
    logits_asr = forward_batch(model, bound, *asr, variant="CASLU")
    logpa = T.log_softmax(logits_asr)
    entropy = float(np.sum(np.where(pc > 0, pc * np.log(np.where(pc > 0, pc, 1.0)), 0.0))) / B
    cross = T.scale(T.sum_all(T.mul(logpa, tape.constant(pc))), -1.0 / B)
    kl = T.add(tape.constant(np.asarray(entropy)), cross)
    return T.add(ce, T.scale(kl, lam))


def vat_loss(model, clean_example, asr_example, label, lam=1.0) -> float:
    """Single-pair VAT loss value (fresh tape, no gradient side effects)."""
    tape = T.Tape()
    bound = bind(model, tape, requires_grad=False)

    def as_batch(example):
        tid, tmask = _pad_one(example[0], model.max_len_text, "text")
        pid, pmask = _pad_one(example[1], model.max_len_phonemes, "phonemes")
        return (np.asarray([tid]), np.asarray([tmask]),
                np.asarray([pid]), np.asarray([pmask]))

    loss = vat_loss_batch(model, bound, as_batch(clean_example),
                          as_batch(asr_example), [label], lam=lam)
    return float(loss.value)


def nbest_join(hypotheses, max_len_text, max_len_phonemes, n):
    """SEP-join up to n hypotheses and truncate left-to-right to the maxima."""
    if not hypotheses:
        raise ValueError("nbest: empty hypothesis list")
    if len(hypotheses) > n:
        raise ValueError(f"nbest: {len(hypotheses)} hypotheses exceed n={n}")
    text, phon = [], []
    for i, (tid, pid) in enumerate(hypotheses):
        if i:
            text.append(SEP_ID)
            phon.append(SEP_ID)
        text.extend(tid)
        phon.extend(pid)
    return text[:max_len_text], phon[:max_len_phonemes]


def nbest_forward(model, hypotheses, n, trace=False) -> Prediction:
    text, phon = nbest_join(hypotheses, model.max_len_text,
                            model.max_len_phonemes, n)
    return forward(model, text, phon, variant="CASLU", trace=trace)


# ---------------------------------------------------------------------------
# checkpoint container

def save_model(model: CasluModel, path) -> None:
    names = list(param_shapes(model))
    header = {
        "variant": model.variant, "arch": model.arch,
        "dims": {"d_w": model.d_w, "d_p": model.d_p, "hidden": model.hidden,
                 "max_len_text": model.max_len_text,
                 "max_len_phonemes": model.max_len_phonemes},
        "epsilon": model.epsilon, "premask": model.premask,
        "class_names": list(model.class_names),
        "text_vocab": model.text_vocab.to_list(),
        "phoneme_vocab": model.phoneme_vocab.to_list(),
        "param_names": names,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for name in names:
            arr = np.ascontiguousarray(model.params[name], dtype="<f4")
            nb = name.encode("utf-8")
            fh.write(struct.pack("<I", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def _read_exact(fh, n, what):
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointError(f"truncated checkpoint while reading {what}")
    return data


def load_model(path) -> CasluModel:
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise CheckpointError(f"{path}: not a CASLU1 checkpoint")
        (hlen,) = struct.unpack("<I", _read_exact(fh, 4, "header length"))
        header = json.loads(_read_exact(fh, hlen, "header"))
        dims = header["dims"]
        model = CasluModel(
            variant=header["variant"], arch=header["arch"], d_w=dims["d_w"],
            d_p=dims["d_p"], hidden=dims["hidden"],
            max_len_text=dims["max_len_text"],
            max_len_phonemes=dims["max_len_phonemes"],
            class_names=list(header["class_names"]),
            text_vocab=Vocab.from_list(header["text_vocab"]),
            phoneme_vocab=Vocab.from_list(header["phoneme_vocab"]),
            epsilon=header["epsilon"], premask=header["premask"])
        for expected in header["param_names"]:
            (nlen,) = struct.unpack("<I", _read_exact(fh, 4, "name length"))
            name = _read_exact(fh, nlen, "name").decode("utf-8")
            if name != expected:
                raise CheckpointError(f"parameter order mismatch: {name} != {expected}")
            (ndim,) = struct.unpack("<I", _read_exact(fh, 4, "ndim"))
            shape = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim, "shape"))
            count = int(np.prod(shape)) if shape else 1
            raw = _read_exact(fh, 4 * count, f"data for {name}")
            model.params[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
        if fh.read(1):
            raise CheckpointError("trailing bytes after final parameter")
    return model


def encode_inputs(model: CasluModel, text_tokens, phoneme_tokens):
    """Tokens -> (text ids, mask, phoneme ids, mask) padded to the maxima."""
    tid, tmask = pad_ids(model.text_vocab, text_tokens, model.max_len_text)
    pid, pmask = pad_ids(model.phoneme_vocab, phoneme_tokens, model.max_len_phonemes)
    return tid, tmask, pid, pmask


# ---------------------------------------------------------------------------
# per-variant gradient checking (verification tooling for the CLI and tests)

def _tiny_setup(variant, seed=0):
    # init is deliberately wide so every coordinate's gradient sits well
    # above the finite-difference noise floor
    rng = np.random.default_rng(seed)
    text_vocab = Vocab([f"w{i}" for i in range(8)])
    phon_vocab = Vocab([f"p{i}" for i in range(8)])
    model = init_model(variant, ["c0", "c1", "c2"], text_vocab, phon_vocab,
                       arch="bilstm", d_w=4, d_p=4, hidden=3,
                       max_len_text=5, max_len_phonemes=8, seed=seed)
    for name, arr in model.params.items():
        spread = 1.5 if name.startswith("k_") else 0.8
        model.params[name] = rng.uniform(-spread, spread, arr.shape).astype(np.float32)
        if name.endswith("embedding"):
            model.params[name][0] = 0.0

    def ids(B, L, top):
        out = rng.integers(3, top, size=(B, L))
        mask = np.ones((B, L))
        out[0, L - 1] = 0
        mask[0, L - 1] = 0
        return out, mask

    tid, tmask = ids(2, model.max_len_text, len(text_vocab))
    pid, pmask = ids(2, model.max_len_phonemes, len(phon_vocab))
    tid2, tmask2 = ids(2, model.max_len_text, len(text_vocab))
    pid2, pmask2 = ids(2, model.max_len_phonemes, len(phon_vocab))
    labels = rng.integers(0, 3, size=2)
    return model, (tid, tmask, pid, pmask), (tid2, tmask2, pid2, pmask2), labels


def gradcheck_variant(variant, eps=1e-5, seed=0) -> dict:
    """Finite-difference check of one variant's training loss.

    Returns max relative error per parameter group, computed in 64-bit on
    a 2-example batch. For the VAT variant the KL target distribution is
    frozen at the base parameters, mirroring its stop-gradient.
    """
    model, clean, asr, labels = _tiny_setup(variant, seed)
    frozen = None
    if variant == "CASLU_VAT":
        tape = T.Tape(np.float64)
        bound = bind(model, tape, requires_grad=False)
        base_logits = forward_batch(model, bound, *clean, variant="CASLU")
        frozen = _softmax_np(base_logits.value)

    names = list(model.params)
    groups = {}
    for name in names:
        groups.setdefault(name.split(".")[0], []).append(name)

    def loss_fn(bound):
        if variant == "CASLU_VAT":
            return vat_loss_batch(model, bound, clean, asr, labels,
                                  lam=1.0, frozen_clean_probs=frozen)
        logits = forward_batch(model, bound, *clean)
        return batch_cross_entropy(logits, labels)

    errors = {}
    for group, members in groups.items():
        fixed = [n for n in names if n not in members]

        def f(leaves, members=members, fixed=fixed):
            tape = leaves[0].tape
            bound = dict(zip(members, leaves))
            bound.update({n: tape.constant(model.params[n]) for n in fixed})
            return loss_fn(bound)

        arrays = [model.params[n].astype(np.float64) for n in members]
        errors[group] = T.grad_check(f, arrays, eps=eps)
    return errors
