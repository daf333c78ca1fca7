"""Dataset ingestion, tokenization, vocabularies, splits, and evaluation pools.

Every operation in this module is a deterministic function of its inputs and
an explicit seed, so prepared artifacts can be reproduced byte-for-byte.
"""

from __future__ import annotations

import hashlib
import json
import re
import warnings
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
PAD_ID = 0
UNK_ID = 1

LANGS = ("python", "sql", "other")


class DatasetError(ValueError):
    """Malformed dataset file or violated dataset invariant."""


# ---------------------------------------------------------------------------
# tokenization
# ---------------------------------------------------------------------------

# Words (identifiers, numbers, underscored names) stay whole; every other
# non-space character becomes its own token. Lowercasing happens first, so
# both vocabularies are case-insensitive.
_TOKEN_RE = re.compile(r"[a-z0-9_]+|[^\sa-z0-9_]")


def tokenize_nl(text: str) -> list[str]:
    """Tokenize a natural-language string into lowercase words and punctuation."""
    return _TOKEN_RE.findall(text.lower())


def tokenize_code(code: str, lang: str = "other") -> list[str]:
    """Tokenize a code snippet into identifiers, literals, and operator characters.

    The splitter is language-agnostic whitespace-and-punctuation splitting, so
    it never fails on unparseable code; ``lang`` is validated against the
    supported set but does not change the default behavior. Callers that need
    language-specific normalization can pass their own tokenizer to the
    loaders instead.
    """
    if lang not in LANGS:
        raise DatasetError(f"unsupported lang {lang!r}, expected one of {LANGS}")
    return _TOKEN_RE.findall(code.lower())


# ---------------------------------------------------------------------------
# records
# ---------------------------------------------------------------------------


@dataclass
class QCPair:
    """A natural-language question paired with its accepted code answer."""

    id: int
    question: list[str]
    code: list[str]
    lang: str = "other"


@dataclass
class QDPair:
    """Two questions labeled as duplicates of each other (unordered positive)."""

    id: int
    question_a: list[str]
    question_b: list[str]


@dataclass
class EvalPool:
    """A query, its single positive candidate, and a fixed set of negatives."""

    query_id: int
    positive_id: int
    negative_ids: list[int]

    def __post_init__(self):
        if not self.negative_ids:
            raise DatasetError(f"pool for query {self.query_id} has no negatives")
        if self.positive_id in self.negative_ids:
            raise DatasetError(f"pool for query {self.query_id}: positive appears among negatives")
        if len(set(self.negative_ids)) != len(self.negative_ids):
            raise DatasetError(f"pool for query {self.query_id}: repeated negative ids")


# ---------------------------------------------------------------------------
# file loading / saving (JSON lines, UTF-8)
# ---------------------------------------------------------------------------


def _iter_records(path: Path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                warnings.warn(f"{path}:{lineno}: skipping unparseable line ({exc.msg})")
                continue
            if not isinstance(rec, dict):
                warnings.warn(f"{path}:{lineno}: skipping non-object line")
                continue
            yield lineno, rec


def _require_fields(rec: dict, keys: Sequence[str], path: Path, lineno: int) -> None:
    missing = [k for k in keys if k not in rec]
    if missing:
        raise DatasetError(f"{path}:{lineno}: record is missing field(s): {', '.join(missing)}")


def load_qc(
    path,
    nl_tokenizer: Callable[[str], list[str]] = tokenize_nl,
    code_tokenizer: Callable[[str, str], list[str]] = tokenize_code,
) -> list[QCPair]:
    """Load question/code records from a JSON-lines file, preserving file order.

    Lines that cannot be parsed, or whose question/code tokenize to nothing,
    are skipped with a warning naming the line. A record missing a required
    field (id, question, code, lang) or reusing an id aborts the load.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    pairs: list[QCPair] = []
    seen: set[int] = set()
    for lineno, rec in _iter_records(path):
        _require_fields(rec, ("id", "question", "code", "lang"), path, lineno)
        pid = int(rec["id"])
        if pid in seen:
            raise DatasetError(f"{path}:{lineno}: duplicate id {pid}")
        lang = str(rec["lang"])
        if lang not in LANGS:
            raise DatasetError(f"{path}:{lineno}: unsupported lang {lang!r}")
        question = nl_tokenizer(str(rec["question"]))
        code = code_tokenizer(str(rec["code"]), lang)
        if not question or not code:
            warnings.warn(f"{path}:{lineno}: skipping record {pid}: question or code tokenizes to nothing")
            continue
        seen.add(pid)
        pairs.append(QCPair(pid, question, code, lang))
    if not pairs:
        warnings.warn(f"{path}: no usable records")
    return pairs


def load_qd(path, nl_tokenizer: Callable[[str], list[str]] = tokenize_nl) -> list[QDPair]:
    """Load duplicate-question records (fields id, q1, q2) from a JSON-lines file."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    pairs: list[QDPair] = []
    seen: set[int] = set()
    for lineno, rec in _iter_records(path):
        _require_fields(rec, ("id", "q1", "q2"), path, lineno)
        pid = int(rec["id"])
        if pid in seen:
            raise DatasetError(f"{path}:{lineno}: duplicate id {pid}")
        first = nl_tokenizer(str(rec["q1"]))
        second = nl_tokenizer(str(rec["q2"]))
        if not first or not second:
            warnings.warn(f"{path}:{lineno}: skipping record {pid}: a question tokenizes to nothing")
            continue
        seen.add(pid)
        pairs.append(QDPair(pid, first, second))
    if not pairs:
        warnings.warn(f"{path}: no usable records")
    return pairs


def save_qc(pairs: Iterable[QCPair], path) -> None:
    """Write QC pairs as JSON lines; tokens are space-joined (re-tokenization is stable)."""
    with open(path, "w", encoding="utf-8") as fh:
        for p in pairs:
            rec = {"id": p.id, "question": " ".join(p.question), "code": " ".join(p.code), "lang": p.lang}
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def save_qd(pairs: Iterable[QDPair], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in pairs:
            rec = {"id": p.id, "q1": " ".join(p.question_a), "q2": " ".join(p.question_b)}
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def save_pools(pools: Iterable[EvalPool], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for pool in pools:
            rec = {"query_id": pool.query_id, "positive_id": pool.positive_id, "negative_ids": pool.negative_ids}
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def load_pools(path) -> list[EvalPool]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    pools = []
    for lineno, rec in _iter_records(path):
        _require_fields(rec, ("query_id", "positive_id", "negative_ids"), path, lineno)
        pools.append(EvalPool(int(rec["query_id"]), int(rec["positive_id"]), [int(x) for x in rec["negative_ids"]]))
    return pools


# ---------------------------------------------------------------------------
# vocabulary
# ---------------------------------------------------------------------------


def _build_index(counts: Counter, min_freq: int, max_size: int) -> dict[str, int]:
    # most frequent first, ties broken lexicographically, truncated to max_size
    kept = sorted((t for t, c in counts.items() if c >= min_freq), key=lambda t: (-counts[t], t))
    index = {PAD_TOKEN: PAD_ID, UNK_TOKEN: UNK_ID}
    for token in kept[: max_size - 2]:
        index[token] = len(index)
    return index


def _index_hash(index: dict[str, int]) -> str:
    blob = json.dumps(sorted(index.items()), separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


@dataclass
class Vocabulary:
    """Token-to-id maps for the NL and code sides; PAD=0 and UNK=1 in both."""

    nl_index: dict[str, int]
    code_index: dict[str, int]

    def __post_init__(self):
        for name, index in (("nl", self.nl_index), ("code", self.code_index)):
            if index.get(PAD_TOKEN) != PAD_ID or index.get(UNK_TOKEN) != UNK_ID:
                raise DatasetError(f"{name} index must map {PAD_TOKEN!r}->{PAD_ID} and {UNK_TOKEN!r}->{UNK_ID}")
            if len(set(index.values())) != len(index):
                raise DatasetError(f"{name} index is not injective")

    @property
    def nl_size(self) -> int:
        return len(self.nl_index)

    @property
    def code_size(self) -> int:
        return len(self.code_index)

    def encode_nl(self, tokens: Sequence[str], max_len: int | None = None) -> list[int]:
        return _encode(tokens, self.nl_index, max_len)

    def encode_code(self, tokens: Sequence[str], max_len: int | None = None) -> list[int]:
        return _encode(tokens, self.code_index, max_len)

    def decode_nl(self, ids: Sequence[int]) -> list[str]:
        inverse = {i: t for t, i in self.nl_index.items()}
        return [inverse[i] for i in ids]

    def decode_code(self, ids: Sequence[int]) -> list[str]:
        inverse = {i: t for t, i in self.code_index.items()}
        return [inverse[i] for i in ids]

    def nl_hash(self) -> str:
        return _index_hash(self.nl_index)

    def code_hash(self) -> str:
        return _index_hash(self.code_index)

    def save(self, path) -> None:
        blob = json.dumps({"nl": self.nl_index, "code": self.code_index}, sort_keys=True, indent=0)
        Path(path).write_text(blob + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(dict(data["nl"]), dict(data["code"]))


def _encode(tokens: Sequence[str], index: dict[str, int], max_len: int | None) -> list[int]:
    ids = [index.get(t, UNK_ID) for t in tokens]
    if max_len is not None:
        ids = ids[:max_len]
    return ids


def build_vocab(
    pairs: Sequence[QCPair],
    min_freq: int = 1,
    max_size: int = 50000,
    qd_pairs: Sequence[QDPair] = (),
) -> Vocabulary:
    """Frequency-ranked vocabularies over the pairs; QD questions share the NL index."""
    if min_freq < 1:
        raise ValueError("min_freq must be >= 1")
    if max_size < 2:
        raise ValueError("max_size must be >= 2 to hold PAD and UNK")
    nl_counts: Counter = Counter()
    code_counts: Counter = Counter()
    for p in pairs:
        nl_counts.update(p.question)
        code_counts.update(p.code)
    for d in qd_pairs:
        nl_counts.update(d.question_a)
        nl_counts.update(d.question_b)
    if not nl_counts and not code_counts:
        warnings.warn("building a vocabulary from an empty corpus")
    return Vocabulary(
        _build_index(nl_counts, min_freq, max_size),
        _build_index(code_counts, min_freq, max_size),
    )


# ---------------------------------------------------------------------------
# splits and pools
# ---------------------------------------------------------------------------


def split_dataset(pairs: Sequence, seed: int):
    """Shuffle by seed and partition 70/15/15 (floor / floor / remainder)."""
    n = len(pairs)
    if n < 10:
        raise DatasetError(f"need at least 10 records to split, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    n_train = (70 * n) // 100
    n_dev = (15 * n) // 100
    train = [pairs[i] for i in order[:n_train]]
    dev = [pairs[i] for i in order[n_train : n_train + n_dev]]
    test = [pairs[i] for i in order[n_train + n_dev :]]
    return train, dev, test


def build_eval_pools(split: Sequence, pool_negatives: int = 49, seed: int = 0) -> list[EvalPool]:
    """One pool per record: its own positive plus ``pool_negatives`` sampled others.

    Negatives are drawn uniformly without replacement from the same split,
    never including the record itself. Fully determined by (split, seed).
    """
    if pool_negatives < 1:
        raise ValueError("pool_negatives must be >= 1")
    if len(split) <= pool_negatives:
        raise DatasetError(
            f"split of {len(split)} records is too small for {pool_negatives} negatives per pool"
        )
    ids = np.array([r.id for r in split])
    rng = np.random.default_rng(seed)
    pools = []
    for pos, rid in enumerate(ids):
        others = np.delete(ids, pos)
        negatives = rng.choice(others, size=pool_negatives, replace=False)
        pools.append(EvalPool(int(rid), int(rid), [int(x) for x in negatives]))
    return pools


# ---------------------------------------------------------------------------
# token-id views used by training and evaluation
# ---------------------------------------------------------------------------


@dataclass
class QCIndex:
    """Token-id view of QC pairs, keyed by pair id."""

    ids: list[int]
    question_ids: dict[int, list[int]]
    code_ids: dict[int, list[int]]


def index_qc(pairs: Sequence[QCPair], vocab: Vocabulary, max_question_len: int = 30, max_code_len: int = 200) -> QCIndex:
    questions = {p.id: vocab.encode_nl(p.question, max_question_len) for p in pairs}
    codes = {p.id: vocab.encode_code(p.code, max_code_len) for p in pairs}
    return QCIndex([p.id for p in pairs], questions, codes)


@dataclass
class QDIndex:
    """Token-id view of duplicate-question pairs, keyed by pair id."""

    ids: list[int]
    first_ids: dict[int, list[int]]
    second_ids: dict[int, list[int]]


def index_qd(pairs: Sequence[QDPair], vocab: Vocabulary, max_question_len: int = 30) -> QDIndex:
    first = {p.id: vocab.encode_nl(p.question_a, max_question_len) for p in pairs}
    second = {p.id: vocab.encode_nl(p.question_b, max_question_len) for p in pairs}
    return QDIndex([p.id for p in pairs], first, second)


# ---------------------------------------------------------------------------
# prepared bundles
# ---------------------------------------------------------------------------


@dataclass
class PreparedData:
    """Everything a training run needs: splits, pools, and the shared vocabulary."""

    qc_train: list[QCPair]
    qc_dev: list[QCPair]
    qc_test: list[QCPair]
    qc_dev_pools: list[EvalPool]
    qc_test_pools: list[EvalPool]
    qd_train: list[QDPair] = field(default_factory=list)
    qd_dev: list[QDPair] = field(default_factory=list)
    qd_test: list[QDPair] = field(default_factory=list)
    qd_dev_pools: list[EvalPool] = field(default_factory=list)
    qd_test_pools: list[EvalPool] = field(default_factory=list)
    vocab: Vocabulary = None


def prepare_data(
    qc_pairs: Sequence[QCPair],
    qd_pairs: Sequence[QDPair] | None = None,
    seed: int = 0,
    pool_negatives: int = 49,
    min_freq: int = 1,
    max_vocab: int = 50000,
) -> PreparedData:
    """Split both datasets, build the shared vocabulary, and sample eval pools.

    The vocabulary is built from the training splits only (QD questions feed
    the NL side). QC pool sizes are strict; QD pools shrink to the split size
    with a warning when the duplicate data is too small for the requested pool.
    """
    qc_train, qc_dev, qc_test = split_dataset(qc_pairs, seed)
    if qd_pairs:
        qd_train, qd_dev, qd_test = split_dataset(qd_pairs, seed + 1)
    else:
        qd_train, qd_dev, qd_test = [], [], []
    vocab = build_vocab(qc_train, min_freq, max_vocab, qd_pairs=qd_train)
    qc_dev_pools = build_eval_pools(qc_dev, pool_negatives, seed + 2)
    qc_test_pools = build_eval_pools(qc_test, pool_negatives, seed + 3)
    qd_dev_pools = _qd_pools(qd_dev, pool_negatives, seed + 4)
    qd_test_pools = _qd_pools(qd_test, pool_negatives, seed + 5)
    return PreparedData(
        qc_train, qc_dev, qc_test, qc_dev_pools, qc_test_pools,
        qd_train, qd_dev, qd_test, qd_dev_pools, qd_test_pools, vocab,
    )


def _qd_pools(split: Sequence[QDPair], pool_negatives: int, seed: int) -> list[EvalPool]:
    if len(split) < 2:
        return []
    effective = min(pool_negatives, len(split) - 1)
    if effective < pool_negatives:
        warnings.warn(f"duplicate-question split of {len(split)} supports only {effective} pool negatives")
    return build_eval_pools(split, effective, seed)


_PREPARED_FILES = {
    "qc_train": "qc_train.jsonl",
    "qc_dev": "qc_dev.jsonl",
    "qc_test": "qc_test.jsonl",
    "qd_train": "qd_train.jsonl",
    "qd_dev": "qd_dev.jsonl",
    "qd_test": "qd_test.jsonl",
    "qc_dev_pools": "pools_qc_dev.jsonl",
    "qc_test_pools": "pools_qc_test.jsonl",
    "qd_dev_pools": "pools_qd_dev.jsonl",
    "qd_test_pools": "pools_qd_test.jsonl",
    "vocab": "vocab.json",
}


def save_prepared(data: PreparedData, out_dir) -> dict[str, Path]:
    """Write all prepared artifacts into a directory; returns name -> path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: dict[str, Path] = {}

    def _put(name, writer, payload):
        path = out_dir / _PREPARED_FILES[name]
        writer(payload, path)
        written[name] = path

    _put("qc_train", save_qc, data.qc_train)
    _put("qc_dev", save_qc, data.qc_dev)
    _put("qc_test", save_qc, data.qc_test)
    _put("qc_dev_pools", save_pools, data.qc_dev_pools)
    _put("qc_test_pools", save_pools, data.qc_test_pools)
    if data.qd_train or data.qd_dev or data.qd_test:
        _put("qd_train", save_qd, data.qd_train)
        _put("qd_dev", save_qd, data.qd_dev)
        _put("qd_test", save_qd, data.qd_test)
        _put("qd_dev_pools", save_pools, data.qd_dev_pools)
        _put("qd_test_pools", save_pools, data.qd_test_pools)
    path = out_dir / _PREPARED_FILES["vocab"]
    data.vocab.save(path)
    written["vocab"] = path
    return written


def load_prepared(prep_dir) -> PreparedData:
    """Load the artifacts written by :func:`save_prepared`."""
    prep_dir = Path(prep_dir)
    if not (prep_dir / _PREPARED_FILES["vocab"]).exists():
        raise FileNotFoundError(f"{prep_dir} does not look like a prepared data directory")

    def _maybe(name, loader, empty):
        path = prep_dir / _PREPARED_FILES[name]
        return loader(path) if path.exists() else empty

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # empty split files are expected here
        data = PreparedData(
            qc_train=load_qc(prep_dir / _PREPARED_FILES["qc_train"]),
            qc_dev=load_qc(prep_dir / _PREPARED_FILES["qc_dev"]),
            qc_test=load_qc(prep_dir / _PREPARED_FILES["qc_test"]),
            qc_dev_pools=load_pools(prep_dir / _PREPARED_FILES["qc_dev_pools"]),
            qc_test_pools=load_pools(prep_dir / _PREPARED_FILES["qc_test_pools"]),
            qd_train=_maybe("qd_train", load_qd, []),
            qd_dev=_maybe("qd_dev", load_qd, []),
            qd_test=_maybe("qd_test", load_qd, []),
            qd_dev_pools=_maybe("qd_dev_pools", load_pools, []),
            qd_test_pools=_maybe("qd_test_pools", load_pools, []),
            vocab=Vocabulary.load(prep_dir / _PREPARED_FILES["vocab"]),
        )
    return data
