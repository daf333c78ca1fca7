"""Training loops: ranking-loss pretraining, the relevance-regularized
adversarial loop for both matcher directions, and the multi-task baseline.

All trainers are deterministic given (data, config, seed) on a single thread.
They mutate the models passed in and return them with the best-dev weights
restored.
"""

from __future__ import annotations

import copy
import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch

from . import evaluation
from .corpus import DatasetError, PreparedData, QCIndex, QDIndex, index_qc, index_qd
from .model import GeneratorModel, QCModel, QDModel, VocabMismatchError, cosine, init_qd_from_qc
from .objectives import RegWeights, hinge_loss, normalize_relevance, qd_weight, reinforce_term

ABLATIONS = ("full", "no_rr", "no_rr_no_as")
GENERATOR_MODES = ("untied", "tied")
QD_UPDATE_MODES = ("frozen", "symmetric")
OPTIMIZERS = ("adam", "sgd")


class TrainingDiverged(RuntimeError):
    """Raised when a training loss stops being finite."""


@dataclass
class TrainConfig:
    """Every knob of the training loops, with the standard defaults."""

    embedding_dim: int = 200
    encoder_out_dim: int = 400
    margin: float = 0.05
    learning_rate: float = 1e-4
    dropout: float = 0.25
    tau: float = 0.2
    max_epochs: int = 300
    reg_a: int = 1
    reg_b: int = 1
    subset_size: int = 50
    l2_coeff: float = 1e-5
    generator_mode: str = "untied"
    qd_update: str = "symmetric"
    ablation: str = "full"
    seed: int = 0
    batch_size: int = 64
    patience: int = 10
    optimizer: str = "adam"
    grad_clip: float = 5.0
    use_baseline: bool = False
    max_question_len: int = 30
    max_code_len: int = 200

    def __post_init__(self):
        if self.embedding_dim < 1 or self.encoder_out_dim < 2 or self.encoder_out_dim % 2:
            raise ValueError("encoder dimensions must be positive (output width even)")
        if self.margin < 0:
            raise ValueError("margin must be >= 0")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.max_epochs < 0 or self.patience < 0:
            raise ValueError("max_epochs and patience must be >= 0")
        if self.subset_size < 1 or self.batch_size < 1:
            raise ValueError("subset_size and batch_size must be >= 1")
        if self.l2_coeff < 0 or self.grad_clip < 0:
            raise ValueError("l2_coeff and grad_clip must be >= 0")
        if self.max_question_len < 1 or self.max_code_len < 1:
            raise ValueError("sequence length caps must be >= 1")
        RegWeights(self.reg_a, self.reg_b)
        if self.generator_mode not in GENERATOR_MODES:
            raise ValueError(f"generator_mode must be one of {GENERATOR_MODES}")
        if self.qd_update not in QD_UPDATE_MODES:
            raise ValueError(f"qd_update must be one of {QD_UPDATE_MODES}")
        if self.ablation not in ABLATIONS:
            raise ValueError(f"ablation must be one of {ABLATIONS}")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")

    @property
    def reg_weights(self) -> RegWeights:
        return RegWeights(self.reg_a, self.reg_b)


@dataclass
class EpochRecord:
    """One history row: dev metrics, mean applied train loss, mean sample weight."""

    epoch: int
    map: float
    ndcg: float
    loss: float
    mean_weight: float


class TrainHistory:
    """Per-epoch training log. Epoch 0 holds the pre-training evaluation."""

    def __init__(self, records=None):
        self.records: list[EpochRecord] = []
        for r in records or ():
            self.append(r)

    def append(self, record: EpochRecord) -> None:
        if self.records and record.epoch <= self.records[-1].epoch:
            raise ValueError("epochs must strictly increase")
        for name in ("map", "ndcg", "mean_weight"):
            value = getattr(record, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name}={value} outside [0, 1]")
        if not math.isfinite(record.loss) or record.loss < 0:
            raise ValueError(f"loss={record.loss} must be finite and >= 0")
        self.records.append(record)

    def best_map(self) -> float:
        return max(r.map for r in self.records)

    def __iter__(self):
        return iter(self.records)

    def __len__(self):
        return len(self.records)

    def __eq__(self, other):
        return isinstance(other, TrainHistory) and self.records == other.records


@dataclass(frozen=True)
class SampleRecord:
    """One adversarial draw as seen by the discriminator update."""

    query_id: int
    chosen_id: int
    weight: float
    raw_loss: float


# ---------------------------------------------------------------------------
# shared plumbing
# ---------------------------------------------------------------------------


def _seed_everything(seed: int) -> None:
    # single-threaded BLAS keeps reductions bit-reproducible across runs
    torch.set_num_threads(1)
    torch.manual_seed(seed)


def _make_optimizer(params, cfg: TrainConfig):
    if cfg.optimizer == "adam":
        return torch.optim.Adam(params, lr=cfg.learning_rate, weight_decay=cfg.l2_coeff)
    return torch.optim.SGD(params, lr=cfg.learning_rate, weight_decay=cfg.l2_coeff)


def _check_finite(loss: torch.Tensor) -> None:
    if not torch.isfinite(loss):
        raise TrainingDiverged(f"training loss became {loss.item()!r}; lower the learning rate")


def _step(optimizer, loss, module, cfg: TrainConfig) -> None:
    _check_finite(loss)
    optimizer.zero_grad()
    loss.backward()
    if cfg.grad_clip:
        torch.nn.utils.clip_grad_norm_(module.parameters(), cfg.grad_clip)
    optimizer.step()


class _BestTracker:
    """Keeps the state dict with the highest dev MAP seen so far."""

    def __init__(self):
        self.best_map = -1.0
        self.state = None
        self.stale = 0

    def update(self, model, dev_map: float) -> None:
        if dev_map > self.best_map:
            self.best_map = dev_map
            self.state = copy.deepcopy(model.state_dict())
            self.stale = 0
        else:
            self.stale += 1

    def restore(self, model) -> None:
        if self.state is not None:
            model.load_state_dict(self.state)


def _eval_qc(model: QCModel, dev_index: QCIndex | None, pools) -> tuple[float, float]:
    if not pools or dev_index is None:
        return 0.0, 0.0
    report = evaluation.evaluate(evaluation.QCPoolScorer(model, dev_index), pools)
    return report.map, report.ndcg


def _eval_qd(model: QDModel, dev_index: QDIndex | None, pools) -> tuple[float, float]:
    if not pools or dev_index is None:
        return 0.0, 0.0
    report = evaluation.evaluate(evaluation.QDPoolScorer(model, dev_index), pools)
    return report.map, report.ndcg


def _uniform_others(positions: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """One uniform index != own position per row, over range(n)."""
    draws = rng.integers(0, n - 1, size=len(positions))
    return draws + (draws >= positions)


# ---------------------------------------------------------------------------
# uniform-negative epochs (pretraining update rule)
# ---------------------------------------------------------------------------


def _qc_uniform_batch(model: QCModel, optimizer, index: QCIndex, positions, neg_positions, cfg) -> float:
    ids = index.ids
    questions = [index.question_ids[ids[int(i)]] for i in positions]
    positives = [index.code_ids[ids[int(i)]] for i in positions]
    negatives = [index.code_ids[ids[int(j)]] for j in neg_positions]
    model.train()
    qv = model.question_encoder.encode_batch(questions)
    pv = model.code_encoder.encode_batch(positives)
    nv = model.code_encoder.encode_batch(negatives)
    loss = hinge_loss(cosine(qv, pv), cosine(qv, nv), cfg.margin).mean()
    _step(optimizer, loss, model, cfg)
    return loss.item()


def _qc_uniform_epoch(model: QCModel, optimizer, index: QCIndex, rng, cfg) -> float:
    """One pass of hinge training with one uniform random negative per pair."""
    n = len(index.ids)
    if n < 2:
        raise DatasetError("training needs at least 2 pairs")
    order = rng.permutation(n)
    total = 0.0
    for start in range(0, n, cfg.batch_size):
        batch = order[start : start + cfg.batch_size]
        negatives = _uniform_others(batch, n, rng)
        total += _qc_uniform_batch(model, optimizer, index, batch, negatives, cfg) * len(batch)
    return total / n


def _qd_uniform_batch(model: QDModel, optimizer, index: QDIndex, positions, neg_positions, cfg) -> float:
    ids = index.ids
    first = [index.first_ids[ids[int(i)]] for i in positions]
    second = [index.second_ids[ids[int(i)]] for i in positions]
    negatives = [index.second_ids[ids[int(j)]] for j in neg_positions]
    model.train()
    fv = model.question_encoder.encode_batch(first)
    sv = model.question_encoder.encode_batch(second)
    nv = model.question_encoder.encode_batch(negatives)
    loss = hinge_loss(cosine(fv, sv), cosine(fv, nv), cfg.margin).mean()
    _step(optimizer, loss, model, cfg)
    return loss.item()


def _qd_uniform_epoch(model: QDModel, optimizer, index: QDIndex, rng, cfg) -> float:
    n = len(index.ids)
    if n < 2:
        raise DatasetError("duplicate-question training needs at least 2 pairs")
    order = rng.permutation(n)
    total = 0.0
    for start in range(0, n, cfg.batch_size):
        batch = order[start : start + cfg.batch_size]
        negatives = _uniform_others(batch, n, rng)
        total += _qd_uniform_batch(model, optimizer, index, batch, negatives, cfg) * len(batch)
    return total / n


# ---------------------------------------------------------------------------
# pretraining
# ---------------------------------------------------------------------------


def pretrain_qc(data: PreparedData, cfg: TrainConfig) -> tuple[QCModel, TrainHistory]:
    """Ranking-loss pretraining with one uniform random negative per pair.

    Retains the checkpoint with the best dev MAP (the untrained model counts
    as epoch 0) and stops early after ``cfg.patience`` epochs without
    improvement. With ``max_epochs=0`` the initialized model comes back
    unchanged.
    """
    _seed_everything(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    vocab = data.vocab
    model = QCModel(
        vocab.nl_size, vocab.code_size, cfg.embedding_dim, cfg.encoder_out_dim, cfg.dropout,
        nl_vocab_hash=vocab.nl_hash(), code_vocab_hash=vocab.code_hash(),
    )
    optimizer = _make_optimizer(model.parameters(), cfg)
    train_index = index_qc(data.qc_train, vocab, cfg.max_question_len, cfg.max_code_len)
    dev_index = index_qc(data.qc_dev, vocab, cfg.max_question_len, cfg.max_code_len)

    history = TrainHistory()
    tracker = _BestTracker()
    dev_map, dev_ndcg = _eval_qc(model, dev_index, data.qc_dev_pools)
    history.append(EpochRecord(0, dev_map, dev_ndcg, 0.0, 1.0))
    tracker.update(model, dev_map)
    for epoch in range(1, cfg.max_epochs + 1):
        mean_loss = _qc_uniform_epoch(model, optimizer, train_index, rng, cfg)
        dev_map, dev_ndcg = _eval_qc(model, dev_index, data.qc_dev_pools)
        history.append(EpochRecord(epoch, dev_map, dev_ndcg, mean_loss, 1.0))
        tracker.update(model, dev_map)
        if tracker.stale >= cfg.patience:
            break
    tracker.restore(model)
    return model, history


def pretrain_qd(data: PreparedData, qc_model: QCModel, cfg: TrainConfig) -> tuple[QDModel, TrainHistory]:
    """Initialize the question matcher from the QC question encoder, then
    fine-tune on duplicate pairs with uniform random negative questions.

    With no duplicate training pairs the initialized copy comes back untrained
    (with a warning), which is the no-fine-tuning baseline.
    """
    _seed_everything(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    qd = init_qd_from_qc(qc_model)
    dev_index = index_qd(data.qd_dev, data.vocab, cfg.max_question_len) if data.qd_dev else None

    history = TrainHistory()
    tracker = _BestTracker()
    dev_map, dev_ndcg = _eval_qd(qd, dev_index, data.qd_dev_pools)
    history.append(EpochRecord(0, dev_map, dev_ndcg, 0.0, 1.0))
    tracker.update(qd, dev_map)
    if not data.qd_train:
        warnings.warn("no duplicate-question training pairs; returning the initialized model")
        return qd, history
    train_index = index_qd(data.qd_train, data.vocab, cfg.max_question_len)
    optimizer = _make_optimizer(qd.parameters(), cfg)
    for epoch in range(1, cfg.max_epochs + 1):
        mean_loss = _qd_uniform_epoch(qd, optimizer, train_index, rng, cfg)
        dev_map, dev_ndcg = _eval_qd(qd, dev_index, data.qd_dev_pools)
        history.append(EpochRecord(epoch, dev_map, dev_ndcg, mean_loss, 1.0))
        tracker.update(qd, dev_map)
        if tracker.stale >= cfg.patience:
            break
    tracker.restore(qd)
    return qd, history


# ---------------------------------------------------------------------------
# adversarial training, QC side
# ---------------------------------------------------------------------------


def _qc_adversarial_epoch(
    model: QCModel,
    generator: GeneratorModel,
    gen_opt,
    disc_opt,
    qd_model: QDModel | None,
    index: QCIndex,
    rng: np.random.Generator,
    sampler_rng: torch.Generator,
    cfg: TrainConfig,
    observer: Callable | None,
    baseline: list,
) -> tuple[float, float]:
    ids = index.ids
    n = len(ids)
    if n < 2:
        raise DatasetError("adversarial training needs at least 2 pairs")
    subset_size = min(cfg.subset_size, n - 1)
    order = rng.permutation(n)
    use_weights = cfg.ablation == "full" and qd_model is not None
    loss_total = 0.0
    weight_total = 0.0
    for start in range(0, n, cfg.batch_size):
        batch = order[start : start + cfg.batch_size]
        b = len(batch)
        # candidate subsets exclude each example's own (ground-truth) answer
        subsets = np.empty((b, subset_size), dtype=np.int64)
        for row, pos in enumerate(batch):
            draw = rng.choice(n - 1, size=subset_size, replace=False)
            subsets[row] = draw + (draw >= pos)

        questions = [index.question_ids[ids[int(p)]] for p in batch]
        unique_pos = np.unique(subsets)
        col_of = {int(p): k for k, p in enumerate(unique_pos)}

        # sample hard negatives from the generator's temperature softmax
        generator.eval()
        needs_gen_grad = gen_opt is not None
        with torch.set_grad_enabled(needs_gen_grad):
            gq = generator.model.question_encoder.encode_batch(questions)
            gc = generator.model.code_encoder.encode_batch([index.code_ids[ids[int(p)]] for p in unique_pos])
            chosen_pos = np.empty(b, dtype=np.int64)
            log_probs = []
            for row in range(b):
                cols = [col_of[int(p)] for p in subsets[row]]
                logits = cosine(gq[row : row + 1], gc[cols]) / cfg.tau
                draw = torch.multinomial(torch.softmax(logits.detach(), dim=0), 1, generator=sampler_rng)
                j = int(draw.item())
                chosen_pos[row] = subsets[row][j]
                log_probs.append(torch.log_softmax(logits, dim=0)[j])

        # discriminator update on the relevance-weighted hinge loss
        model.train()
        positives = [index.code_ids[ids[int(p)]] for p in batch]
        negatives = [index.code_ids[ids[int(p)]] for p in chosen_pos]
        qv = model.question_encoder.encode_batch(questions)
        pv = model.code_encoder.encode_batch(positives)
        nv = model.code_encoder.encode_batch(negatives)
        raw = hinge_loss(cosine(qv, pv), cosine(qv, nv), cfg.margin)
        if use_weights:
            with torch.no_grad():
                qd_model.eval()
                paired_questions = [index.question_ids[ids[int(p)]] for p in chosen_pos]
                relevance = qd_model.score_pairs(questions, paired_questions)
            weights = torch.tensor(
                [qd_weight(normalize_relevance(float(r)), cfg.reg_weights) for r in relevance],
                dtype=raw.dtype,
            )
        else:
            weights = torch.ones_like(raw)
        loss = (weights * raw).mean()
        _step(disc_opt, loss, model, cfg)

        # generator update: ascend the expected loss by policy gradient
        if gen_opt is not None:
            rewards = raw.detach()
            if cfg.use_baseline:
                rewards = rewards - baseline[0]
                baseline[0] = 0.9 * baseline[0] + 0.1 * float(raw.detach().mean())
            surrogate = torch.stack([reinforce_term(rewards[i], log_probs[i]) for i in range(b)]).mean()
            _step(gen_opt, -surrogate, generator.model, cfg)

        if observer is not None:
            for row in range(b):
                observer(SampleRecord(
                    query_id=ids[int(batch[row])],
                    chosen_id=ids[int(chosen_pos[row])],
                    weight=float(weights[row]),
                    raw_loss=raw[row].item(),
                ))
        loss_total += loss.item() * b
        weight_total += float(weights.sum())
    return loss_total / n, weight_total / n


class _QDAdvState:
    """Generator, optimizers, and indexes for the interleaved QD-side updates."""

    def __init__(self, qd_model: QDModel, data: PreparedData, cfg: TrainConfig):
        self.qd_model = qd_model
        self.qd_index = index_qd(data.qd_train, data.vocab, cfg.max_question_len)
        self.qc_index = index_qc(data.qc_train, data.vocab, cfg.max_question_len, cfg.max_code_len)
        self.generator = GeneratorModel(qd_model, cfg.generator_mode)
        self.gen_opt = None if self.generator.tied else _make_optimizer(self.generator.parameters(), cfg)
        self.opt = _make_optimizer(qd_model.parameters(), cfg)
        self.cfg = cfg

    def run_epoch(self, qc_model, rng, sampler_rng):
        _qd_adversarial_epoch(
            self.qd_model, self.generator, self.gen_opt, self.opt,
            qc_model, self.qd_index, self.qc_index, rng, sampler_rng, self.cfg, None,
        )


def train_adversarial(
    data: PreparedData,
    qc_model: QCModel,
    qd_model: QDModel | None,
    cfg: TrainConfig,
    sample_observer: Callable | None = None,
) -> tuple[QCModel, GeneratorModel, TrainHistory]:
    """Adversarially sampled negatives, down-weighted by question relevance.

    Per example: draw a candidate subset (never containing the example's own
    answer), sample one hard negative from the temperature softmax over
    generator scores, compute the raw hinge loss, scale the discriminator
    update by the relevance weight of the sampled candidate's paired question,
    and in untied mode push the generator toward high-loss candidates by
    policy gradient. ``ablation='no_rr'`` fixes all weights at 1;
    ``ablation='no_rr_no_as'`` additionally replaces the sampler with the
    uniform pretraining rule. With ``qd_update='symmetric'`` one epoch of
    QD-side adversarial updates runs after each epoch here.

    ``sample_observer``, when given, receives a SampleRecord per draw.
    """
    _seed_everything(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    sampler_rng = torch.Generator().manual_seed(cfg.seed)
    vocab = data.vocab

    if cfg.ablation == "full":
        if qd_model is None:
            raise ValueError("the full objective needs a question matcher for the relevance weights")
        if qd_model.nl_vocab_hash != qc_model.nl_vocab_hash:
            raise VocabMismatchError("question matcher and QC model use different NL vocabularies")

    generator = GeneratorModel(qc_model, cfg.generator_mode)
    disc_opt = _make_optimizer(qc_model.parameters(), cfg)
    gen_opt = None
    if not generator.tied and cfg.ablation != "no_rr_no_as":
        gen_opt = _make_optimizer(generator.parameters(), cfg)

    train_index = index_qc(data.qc_train, vocab, cfg.max_question_len, cfg.max_code_len)
    dev_index = index_qc(data.qc_dev, vocab, cfg.max_question_len, cfg.max_code_len)

    qd_state = None
    if cfg.qd_update == "symmetric" and cfg.ablation == "full":
        if data.qd_train:
            qd_state = _QDAdvState(qd_model, data, cfg)
        else:
            warnings.warn("symmetric question-matcher updates requested but there is no duplicate data; keeping it frozen")

    history = TrainHistory()
    tracker = _BestTracker()
    dev_map, dev_ndcg = _eval_qc(qc_model, dev_index, data.qc_dev_pools)
    history.append(EpochRecord(0, dev_map, dev_ndcg, 0.0, 1.0))
    tracker.update(qc_model, dev_map)
    baseline = [0.0]
    for epoch in range(1, cfg.max_epochs + 1):
        if cfg.ablation == "no_rr_no_as":
            mean_loss = _qc_uniform_epoch(qc_model, disc_opt, train_index, rng, cfg)
            mean_weight = 1.0
        else:
            mean_loss, mean_weight = _qc_adversarial_epoch(
                qc_model, generator, gen_opt, disc_opt, qd_model,
                train_index, rng, sampler_rng, cfg, sample_observer, baseline,
            )
        if qd_state is not None:
            qd_state.run_epoch(qc_model, rng, sampler_rng)
        dev_map, dev_ndcg = _eval_qc(qc_model, dev_index, data.qc_dev_pools)
        history.append(EpochRecord(epoch, dev_map, dev_ndcg, mean_loss, mean_weight))
        tracker.update(qc_model, dev_map)
        if tracker.stale >= cfg.patience:
            break
    tracker.restore(qc_model)
    return qc_model, generator, history


# ---------------------------------------------------------------------------
# adversarial training, QD side (roles swapped)
# ---------------------------------------------------------------------------


def _qd_adversarial_epoch(
    qd: QDModel,
    generator: GeneratorModel,
    gen_opt,
    opt,
    qc_model: QCModel | None,
    qd_index: QDIndex,
    qc_index: QCIndex,
    rng: np.random.Generator,
    sampler_rng: torch.Generator,
    cfg: TrainConfig,
    observer: Callable | None,
) -> tuple[float, float]:
    """Mirror of the QC adversarial epoch with the roles swapped.

    Adversarial negative questions come from the question/code training set,
    because each of those questions has a paired code snippet: the QC model's
    relevance between the query question and that snippet supplies the
    down-weighting signal.
    """
    ids = qd_index.ids
    n = len(ids)
    if n < 1 or len(qc_index.ids) < 2:
        raise DatasetError("QD adversarial training needs duplicate pairs and QC candidates")
    qc_ids = qc_index.ids
    subset_size = min(cfg.subset_size, len(qc_ids))
    order = rng.permutation(n)
    use_weights = cfg.ablation == "full" and qc_model is not None
    loss_total = 0.0
    weight_total = 0.0
    for start in range(0, n, cfg.batch_size):
        batch = order[start : start + cfg.batch_size]
        b = len(batch)
        subsets = np.stack([rng.choice(len(qc_ids), size=subset_size, replace=False) for _ in range(b)])

        first = [qd_index.first_ids[ids[int(p)]] for p in batch]
        unique_pos = np.unique(subsets)
        col_of = {int(p): k for k, p in enumerate(unique_pos)}

        generator.eval()
        needs_gen_grad = gen_opt is not None
        with torch.set_grad_enabled(needs_gen_grad):
            gq = generator.model.question_encoder.encode_batch(first)
            gcands = generator.model.question_encoder.encode_batch(
                [qc_index.question_ids[qc_ids[int(p)]] for p in unique_pos]
            )
            chosen_pos = np.empty(b, dtype=np.int64)
            log_probs = []
            for row in range(b):
                cols = [col_of[int(p)] for p in subsets[row]]
                logits = cosine(gq[row : row + 1], gcands[cols]) / cfg.tau
                draw = torch.multinomial(torch.softmax(logits.detach(), dim=0), 1, generator=sampler_rng)
                j = int(draw.item())
                chosen_pos[row] = subsets[row][j]
                log_probs.append(torch.log_softmax(logits, dim=0)[j])

        qd.train()
        second = [qd_index.second_ids[ids[int(p)]] for p in batch]
        sampled_questions = [qc_index.question_ids[qc_ids[int(p)]] for p in chosen_pos]
        fv = qd.question_encoder.encode_batch(first)
        sv = qd.question_encoder.encode_batch(second)
        nv = qd.question_encoder.encode_batch(sampled_questions)
        raw = hinge_loss(cosine(fv, sv), cosine(fv, nv), cfg.margin)
        if use_weights:
            with torch.no_grad():
                qc_model.eval()
                sampled_codes = [qc_index.code_ids[qc_ids[int(p)]] for p in chosen_pos]
                relevance = qc_model.score_pairs(first, sampled_codes)
            weights = torch.tensor(
                [qd_weight(normalize_relevance(float(r)), cfg.reg_weights) for r in relevance],
                dtype=raw.dtype,
            )
        else:
            weights = torch.ones_like(raw)
        loss = (weights * raw).mean()
        _step(opt, loss, qd, cfg)

        if gen_opt is not None:
            rewards = raw.detach()
            surrogate = torch.stack([reinforce_term(rewards[i], log_probs[i]) for i in range(b)]).mean()
            _step(gen_opt, -surrogate, generator.model, cfg)

        if observer is not None:
            for row in range(b):
                observer(SampleRecord(
                    query_id=ids[int(batch[row])],
                    chosen_id=qc_ids[int(chosen_pos[row])],
                    weight=float(weights[row]),
                    raw_loss=raw[row].item(),
                ))
        loss_total += loss.item() * b
        weight_total += float(weights.sum())
    return loss_total / n, weight_total / n


def train_qd_adversarial(
    data: PreparedData,
    qc_model: QCModel | None,
    qd_model: QDModel,
    cfg: TrainConfig,
    sample_observer: Callable | None = None,
) -> tuple[QDModel, TrainHistory]:
    """Adversarial training of the duplicate-question matcher.

    Hard negative questions are sampled from the temperature softmax over the
    QD generator's scores; the discriminative QD update on each sample is
    weighted by the QC model's normalized relevance between the query question
    and the code paired with the sampled question. ``ablation='no_rr_no_as'``
    reduces to the uniform fine-tuning rule used by :func:`pretrain_qd`.
    """
    _seed_everything(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    sampler_rng = torch.Generator().manual_seed(cfg.seed)
    if not data.qd_train:
        raise DatasetError("no duplicate-question training pairs")
    if cfg.ablation == "full":
        if qc_model is None:
            raise ValueError("the full objective needs a QC model for the relevance weights")
        if qc_model.nl_vocab_hash != qd_model.nl_vocab_hash:
            raise VocabMismatchError("QC model and question matcher use different NL vocabularies")

    qd_index = index_qd(data.qd_train, data.vocab, cfg.max_question_len)
    qc_index = index_qc(data.qc_train, data.vocab, cfg.max_question_len, cfg.max_code_len)
    dev_index = index_qd(data.qd_dev, data.vocab, cfg.max_question_len) if data.qd_dev else None

    generator = GeneratorModel(qd_model, cfg.generator_mode)
    opt = _make_optimizer(qd_model.parameters(), cfg)
    gen_opt = None
    if not generator.tied and cfg.ablation != "no_rr_no_as":
        gen_opt = _make_optimizer(generator.parameters(), cfg)

    history = TrainHistory()
    tracker = _BestTracker()
    dev_map, dev_ndcg = _eval_qd(qd_model, dev_index, data.qd_dev_pools)
    history.append(EpochRecord(0, dev_map, dev_ndcg, 0.0, 1.0))
    tracker.update(qd_model, dev_map)
    for epoch in range(1, cfg.max_epochs + 1):
        if cfg.ablation == "no_rr_no_as":
            mean_loss = _qd_uniform_epoch(qd_model, opt, qd_index, rng, cfg)
            mean_weight = 1.0
        else:
            mean_loss, mean_weight = _qd_adversarial_epoch(
                qd_model, generator, gen_opt, opt, qc_model,
                qd_index, qc_index, rng, sampler_rng, cfg, sample_observer,
            )
        dev_map, dev_ndcg = _eval_qd(qd_model, dev_index, data.qd_dev_pools)
        history.append(EpochRecord(epoch, dev_map, dev_ndcg, mean_loss, mean_weight))
        tracker.update(qd_model, dev_map)
        if tracker.stale >= cfg.patience:
            break
    tracker.restore(qd_model)
    return qd_model, history


# ---------------------------------------------------------------------------
# multi-task baseline
# ---------------------------------------------------------------------------


def _mtl_qd_batch(model: QCModel, optimizer, qd_index: QDIndex, positions, neg_positions, cfg) -> float:
    """One duplicate-question step through the shared question encoder.

    Only the question encoder receives gradients here; the code encoder is
    untouched by the optimizer (its grads stay None).
    """
    ids = qd_index.ids
    first = [qd_index.first_ids[ids[int(i)]] for i in positions]
    second = [qd_index.second_ids[ids[int(i)]] for i in positions]
    negatives = [qd_index.second_ids[ids[int(j)]] for j in neg_positions]
    model.train()
    fv = model.question_encoder.encode_batch(first)
    sv = model.question_encoder.encode_batch(second)
    nv = model.question_encoder.encode_batch(negatives)
    loss = hinge_loss(cosine(fv, sv), cosine(fv, nv), cfg.margin).mean()
    _check_finite(loss)
    optimizer.zero_grad()
    loss.backward()
    if cfg.grad_clip:
        torch.nn.utils.clip_grad_norm_(model.question_encoder.parameters(), cfg.grad_clip)
    optimizer.step()
    return loss.item()


def train_mtl_dcs(data: PreparedData, cfg: TrainConfig) -> tuple[QCModel, TrainHistory]:
    """Alternating multi-task baseline: one QC batch, then one QD batch
    through the shared question encoder, both with uniform random negatives.

    The code encoder learns from the QC task only. Checkpointing follows the
    QC dev MAP. With no duplicate data this reduces to plain QC pretraining.
    """
    if not data.qd_train:
        warnings.warn("no duplicate-question data; multi-task training reduces to QC pretraining")
        return pretrain_qc(data, cfg)
    _seed_everything(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    vocab = data.vocab
    model = QCModel(
        vocab.nl_size, vocab.code_size, cfg.embedding_dim, cfg.encoder_out_dim, cfg.dropout,
        nl_vocab_hash=vocab.nl_hash(), code_vocab_hash=vocab.code_hash(),
    )
    optimizer = _make_optimizer(model.parameters(), cfg)
    qc_index = index_qc(data.qc_train, vocab, cfg.max_question_len, cfg.max_code_len)
    qd_index = index_qd(data.qd_train, vocab, cfg.max_question_len)
    dev_index = index_qc(data.qc_dev, vocab, cfg.max_question_len, cfg.max_code_len)

    history = TrainHistory()
    tracker = _BestTracker()
    dev_map, dev_ndcg = _eval_qc(model, dev_index, data.qc_dev_pools)
    history.append(EpochRecord(0, dev_map, dev_ndcg, 0.0, 1.0))
    tracker.update(model, dev_map)
    n_qc = len(qc_index.ids)
    n_qd = len(qd_index.ids)
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(n_qc)
        qc_loss_total = 0.0
        for start in range(0, n_qc, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            negatives = _uniform_others(batch, n_qc, rng)
            qc_loss_total += _qc_uniform_batch(model, optimizer, qc_index, batch, negatives, cfg) * len(batch)
            if n_qd > 1:
                qd_batch = rng.choice(n_qd, size=min(cfg.batch_size, n_qd), replace=False)
                qd_negatives = _uniform_others(qd_batch, n_qd, rng)
                _mtl_qd_batch(model, optimizer, qd_index, qd_batch, qd_negatives, cfg)
        dev_map, dev_ndcg = _eval_qc(model, dev_index, data.qc_dev_pools)
        history.append(EpochRecord(epoch, dev_map, dev_ndcg, qc_loss_total / n_qc, 1.0))
        tracker.update(model, dev_map)
        if tracker.stale >= cfg.patience:
            break
    tracker.restore(model)
    return model, history
