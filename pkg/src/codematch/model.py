"""Recurrent sequence encoders and the two cosine matchers.

The question-code matcher owns two independent encoders; the question-question
matcher is Siamese (one encoder applied to both sides). Checkpoints are
self-describing and verify vocabulary compatibility on load.
"""

from __future__ import annotations

import copy
from dataclasses import asdict, is_dataclass
from typing import Sequence

import torch
from torch import nn
from torch.nn.utils.rnn import pack_padded_sequence, pad_packed_sequence

from .corpus import PAD_ID, Vocabulary


class VocabMismatchError(RuntimeError):
    """Checkpoint or model was built against a different vocabulary."""


def pad_batch(seqs: Sequence[Sequence[int]], pad_id: int = PAD_ID):
    """Right-pad token-id sequences into (tokens [B, T], lengths [B])."""
    if not seqs:
        raise ValueError("empty batch")
    lengths = [len(s) for s in seqs]
    if min(lengths) == 0:
        raise ValueError("cannot encode an empty token sequence")
    tokens = torch.full((len(seqs), max(lengths)), pad_id, dtype=torch.long)
    for i, s in enumerate(seqs):
        tokens[i, : len(s)] = torch.as_tensor(list(s), dtype=torch.long)
    return tokens, torch.as_tensor(lengths, dtype=torch.long)


def cosine(u: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    """Cosine similarity along the last dim; raises on zero-norm inputs."""
    nu = u.norm(dim=-1)
    nv = v.norm(dim=-1)
    if bool((nu == 0).any()) or bool((nv == 0).any()):
        raise ArithmeticError("zero-norm encoding vector")
    return (u * v).sum(dim=-1) / (nu * nv)


class SeqEncoder(nn.Module):
    """Embedding -> bi-directional LSTM -> max pooling over time -> tanh.

    Dropout hits the embedding outputs only, and only in training mode.
    Padded positions never enter the recurrence (packed sequences), so
    appending padding cannot change an encoding.
    """

    def __init__(self, vocab_size: int, embedding_dim: int = 200, output_dim: int = 400, dropout: float = 0.25):
        super().__init__()
        if output_dim % 2:
            raise ValueError("output_dim must be even (two concatenated directions)")
        if not 0.0 <= dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        self.output_dim = output_dim
        self.embedding = nn.Embedding(vocab_size, embedding_dim, padding_idx=PAD_ID)
        self.lstm = nn.LSTM(embedding_dim, output_dim // 2, batch_first=True, bidirectional=True)
        self.dropout = nn.Dropout(dropout)
        self.reset_parameters()

    def reset_parameters(self):
        nn.init.uniform_(self.embedding.weight, -0.1, 0.1)
        with torch.no_grad():
            self.embedding.weight[PAD_ID].zero_()
        for name, param in self.lstm.named_parameters():
            if "weight" in name:
                for gate in param.chunk(4, dim=0):
                    nn.init.orthogonal_(gate)
            else:
                nn.init.zeros_(param)

    def forward(self, tokens: torch.Tensor, lengths: torch.Tensor | None = None) -> torch.Tensor:
        if lengths is None:
            lengths = (tokens != PAD_ID).sum(dim=1)
        if bool((lengths == 0).any()):
            raise ValueError("cannot encode an empty token sequence")
        if int(tokens.min()) < 0 or int(tokens.max()) >= self.embedding.num_embeddings:
            raise ValueError("token id outside the vocabulary range")
        emb = self.dropout(self.embedding(tokens))
        packed = pack_padded_sequence(emb, lengths.cpu(), batch_first=True, enforce_sorted=False)
        outputs, _ = self.lstm(packed)
        outputs, _ = pad_packed_sequence(outputs, batch_first=True)
        # -inf at padded steps so the maxpool only sees real timesteps
        steps = torch.arange(outputs.size(1), device=outputs.device)
        pad_mask = steps.unsqueeze(0) >= lengths.unsqueeze(1).to(outputs.device)
        outputs = outputs.masked_fill(pad_mask.unsqueeze(-1), float("-inf"))
        return torch.tanh(outputs.max(dim=1).values)

    def encode_batch(self, token_lists: Sequence[Sequence[int]]) -> torch.Tensor:
        # lengths are re-derived from non-PAD positions inside forward, so
        # trailing PAD tokens in the input lists cannot change the result
        tokens, _ = pad_batch(token_lists)
        return self(tokens)

    def encode_one(self, token_ids: Sequence[int], train_mode: bool = False) -> torch.Tensor:
        was_training = self.training
        self.train(train_mode)
        try:
            return self.encode_batch([token_ids])[0]
        finally:
            self.train(was_training)


def encode(token_ids: Sequence[int], encoder: SeqEncoder, train_mode: bool = False) -> torch.Tensor:
    """Encode one token-id sequence to a vector of width ``encoder.output_dim``."""
    return encoder.encode_one(token_ids, train_mode=train_mode)


class QCModel(nn.Module):
    """Question-code matcher: separate encoders for each side, cosine score."""

    kind = "qc"

    def __init__(
        self,
        nl_vocab_size: int,
        code_vocab_size: int,
        embedding_dim: int = 200,
        output_dim: int = 400,
        dropout: float = 0.25,
        nl_vocab_hash: str = "",
        code_vocab_hash: str = "",
    ):
        super().__init__()
        self.dims = {
            "nl_vocab_size": nl_vocab_size,
            "code_vocab_size": code_vocab_size,
            "embedding_dim": embedding_dim,
            "output_dim": output_dim,
            "dropout": dropout,
        }
        self.nl_vocab_hash = nl_vocab_hash
        self.code_vocab_hash = code_vocab_hash
        self.question_encoder = SeqEncoder(nl_vocab_size, embedding_dim, output_dim, dropout)
        self.code_encoder = SeqEncoder(code_vocab_size, embedding_dim, output_dim, dropout)

    def score_pairs(self, questions: Sequence[Sequence[int]], codes: Sequence[Sequence[int]]) -> torch.Tensor:
        """Cosine scores for aligned (question, code) batches of token-id lists."""
        return cosine(self.question_encoder.encode_batch(questions), self.code_encoder.encode_batch(codes))

    def score_one_to_many(self, question: Sequence[int], codes: Sequence[Sequence[int]]) -> torch.Tensor:
        """Scores of one question against many code candidates."""
        q = self.question_encoder.encode_batch([question])
        c = self.code_encoder.encode_batch(codes)
        return cosine(q, c)


class QDModel(nn.Module):
    """Question-question matcher with one shared (Siamese) encoder."""

    kind = "qd"

    def __init__(
        self,
        nl_vocab_size: int,
        embedding_dim: int = 200,
        output_dim: int = 400,
        dropout: float = 0.25,
        nl_vocab_hash: str = "",
    ):
        super().__init__()
        self.dims = {
            "nl_vocab_size": nl_vocab_size,
            "embedding_dim": embedding_dim,
            "output_dim": output_dim,
            "dropout": dropout,
        }
        self.nl_vocab_hash = nl_vocab_hash
        self.question_encoder = SeqEncoder(nl_vocab_size, embedding_dim, output_dim, dropout)

    def score_pairs(self, first: Sequence[Sequence[int]], second: Sequence[Sequence[int]]) -> torch.Tensor:
        return cosine(self.question_encoder.encode_batch(first), self.question_encoder.encode_batch(second))

    def score_one_to_many(self, question: Sequence[int], others: Sequence[Sequence[int]]) -> torch.Tensor:
        q = self.question_encoder.encode_batch([question])
        o = self.question_encoder.encode_batch(others)
        return cosine(q, o)


def score_qc(model: QCModel, question: Sequence[int], code: Sequence[int]) -> float:
    """Inference-mode relevance of one question/code pair, in [-1, 1]."""
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            return float(model.score_pairs([question], [code])[0])
    finally:
        model.train(was_training)


def score_qd(model: QDModel, first: Sequence[int], second: Sequence[int]) -> float:
    """Inference-mode relevance of two questions, in [-1, 1]."""
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            return float(model.score_pairs([first], [second])[0])
    finally:
        model.train(was_training)


def init_qd_from_qc(qc: QCModel) -> QDModel:
    """Start a question matcher from the question encoder of a trained QC model.

    The weights are copied, so later updates to either model leave the other
    untouched.
    """
    d = qc.dims
    qd = QDModel(d["nl_vocab_size"], d["embedding_dim"], d["output_dim"], d["dropout"], nl_vocab_hash=qc.nl_vocab_hash)
    qd.question_encoder.load_state_dict(copy.deepcopy(qc.question_encoder.state_dict()))
    return qd


class GeneratorModel:
    """Sampler parameters for adversarial negative selection.

    tied: the generator aliases the discriminator and receives no separate
    updates; untied: an independent deep copy trained by policy gradient.
    """

    def __init__(self, discriminator: nn.Module, mode: str = "untied"):
        if mode not in ("untied", "tied"):
            raise ValueError(f"unknown generator mode {mode!r}")
        self.mode = mode
        self.model = discriminator if mode == "tied" else copy.deepcopy(discriminator)

    @property
    def tied(self) -> bool:
        return self.mode == "tied"

    def parameters(self):
        return self.model.parameters()

    def train(self, flag: bool = True):
        self.model.train(flag)
        return self

    def eval(self):
        return self.train(False)

    def score_one_to_many(self, query: Sequence[int], candidates: Sequence[Sequence[int]]) -> torch.Tensor:
        return self.model.score_one_to_many(query, candidates)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(path, model, config=None, extra: dict | None = None) -> None:
    """Write a self-describing checkpoint: weights, shapes, vocab hashes, config."""
    payload = {
        "kind": model.kind,
        "dims": dict(model.dims),
        "nl_vocab_hash": model.nl_vocab_hash,
        "code_vocab_hash": getattr(model, "code_vocab_hash", ""),
        "state_dict": model.state_dict(),
        "config": asdict(config) if is_dataclass(config) else dict(config or {}),
    }
    if extra:
        payload.update(extra)
    # legacy serialization is byte-deterministic (no archive timestamps),
    # which keeps rerun artifacts identical
    torch.save(payload, path, _use_new_zipfile_serialization=False)


def load_checkpoint(path, vocab: Vocabulary | None = None):
    """Load a checkpoint; verifies vocabulary hashes when a vocabulary is given.

    Returns (model, payload). The model comes back in eval mode.
    """
    payload = torch.load(path, map_location="cpu", weights_only=True)
    kind = payload["kind"]
    dims = payload["dims"]
    if vocab is not None:
        if payload["nl_vocab_hash"] != vocab.nl_hash():
            raise VocabMismatchError("checkpoint was trained on a different NL vocabulary")
        if kind == "qc" and payload["code_vocab_hash"] != vocab.code_hash():
            raise VocabMismatchError("checkpoint was trained on a different code vocabulary")
    if kind == "qc":
        model = QCModel(
            dims["nl_vocab_size"], dims["code_vocab_size"], dims["embedding_dim"],
            dims["output_dim"], dims["dropout"],
            nl_vocab_hash=payload["nl_vocab_hash"], code_vocab_hash=payload["code_vocab_hash"],
        )
    elif kind == "qd":
        model = QDModel(
            dims["nl_vocab_size"], dims["embedding_dim"], dims["output_dim"], dims["dropout"],
            nl_vocab_hash=payload["nl_vocab_hash"],
        )
    else:
        raise ValueError(f"unknown checkpoint kind {kind!r}")
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model, payload
