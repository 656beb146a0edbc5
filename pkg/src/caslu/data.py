"""Dataset records, tokenization, vocabularies, and JSONL serialization."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import asdict, dataclass

PAD, UNK, SEP = "<pad>", "<unk>", "<sep>"
RESERVED = (PAD, UNK, SEP)
PAD_ID, UNK_ID, SEP_ID = 0, 1, 2

_FIELD_TYPES = {"id": str, "text_clean": str, "text_asr": str,
                "phonemes_asr": list, "label": str, "wer": (int, float)}

_PUNCT = str.maketrans("", "", ",.!?;:\"()")


class SchemaError(ValueError):
    """A dataset line does not match the expected schema."""


@dataclass
class DatasetExample:
    id: str
    text_clean: str
    text_asr: str
    phonemes_asr: list
    label: str
    wer: float


def tokenize(text: str) -> list:
    """Lowercase, strip sentence punctuation, split on whitespace."""
    return [t for t in text.lower().translate(_PUNCT).split() if t]


class Vocab:
    """Token-to-id map with ids 0/1/2 reserved for PAD/UNK/SEP."""

    def __init__(self, tokens):
        self.id_to_token = list(RESERVED) + [t for t in tokens if t not in RESERVED]
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}

    def __len__(self):
        return len(self.id_to_token)

    def __contains__(self, token):
        return token in self.token_to_id

    def encode(self, tokens) -> list:
        return [self.token_to_id.get(t, UNK_ID) for t in tokens]

    def decode(self, ids) -> list:
        return [self.id_to_token[i] for i in ids]

    def to_list(self) -> list:
        return list(self.id_to_token)

    @classmethod
    def from_list(cls, id_to_token) -> "Vocab":
        if tuple(id_to_token[:3]) != RESERVED:
            raise SchemaError(f"vocab list must start with {RESERVED}")
        return cls(id_to_token[3:])


def build_vocab(examples, min_count: int = 1):
    """Frequency-then-lexicographic vocabularies from the training split.

    Text counts cover both clean and ASR sides so every model variant
    shares one id space; phoneme counts come from phonemes_asr.
    """
    if not examples:
        raise SchemaError("cannot build a vocabulary from an empty corpus")
    text_counts = Counter()
    phon_counts = Counter()
    for ex in examples:
        text_counts.update(tokenize(ex.text_clean))
        text_counts.update(tokenize(ex.text_asr))
        phon_counts.update(ex.phonemes_asr)

    def ordered(counts):
        kept = [(t, c) for t, c in counts.items() if c >= min_count and t not in RESERVED]
        kept.sort(key=lambda tc: (-tc[1], tc[0]))
        return [t for t, _ in kept]

    return Vocab(ordered(text_counts)), Vocab(ordered(phon_counts))


def pad_ids(vocab: Vocab, tokens, max_len: int):
    """Encode, truncate to max_len, right-pad with PAD. Returns (ids, mask)."""
    ids = vocab.encode(tokens)[:max_len]
    mask = [1] * len(ids)
    pad = max_len - len(ids)
    return ids + [PAD_ID] * pad, mask + [0] * pad


def _validate(obj, lineno):
    for field, kind in _FIELD_TYPES.items():
        if field not in obj:
            raise SchemaError(f"line {lineno}: missing field {field!r}")
        if not isinstance(obj[field], kind):
            raise SchemaError(f"line {lineno}: field {field!r} has wrong type")
    if not all(isinstance(p, str) for p in obj["phonemes_asr"]):
        raise SchemaError(f"line {lineno}: field 'phonemes_asr' must hold strings")
    if obj["wer"] < 0:
        raise SchemaError(f"line {lineno}: field 'wer' must be >= 0")


def load_dataset(path) -> list:
    examples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as err:
                raise SchemaError(f"line {lineno}: not valid JSON ({err.msg})") from err
            if not isinstance(obj, dict):
                raise SchemaError(f"line {lineno}: expected a JSON object")
            _validate(obj, lineno)
            examples.append(DatasetExample(
                id=obj["id"], text_clean=obj["text_clean"], text_asr=obj["text_asr"],
                phonemes_asr=list(obj["phonemes_asr"]), label=obj["label"],
                wer=float(obj["wer"])))
    return examples


def save_dataset(path, examples) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            row = asdict(ex)
            ordered = {k: row[k] for k in _FIELD_TYPES}
            fh.write(json.dumps(ordered, ensure_ascii=False) + "\n")
