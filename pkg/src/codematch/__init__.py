"""Toolkit for training and evaluating question-to-code retrieval models with
adversarially sampled negatives down-weighted by duplicate-question relevance."""

__version__ = "0.1.0"

from .corpus import (
    EvalPool,
    PreparedData,
    QCPair,
    QDPair,
    Vocabulary,
    build_eval_pools,
    build_vocab,
    load_qc,
    load_qd,
    prepare_data,
    split_dataset,
    tokenize_code,
    tokenize_nl,
)
from .evaluation import (
    EvalReport,
    average_precision_single,
    evaluate,
    export_curves,
    ndcg_single,
    rank_pool,
)
from .model import (
    GeneratorModel,
    QCModel,
    QDModel,
    SeqEncoder,
    encode,
    init_qd_from_qc,
    load_checkpoint,
    save_checkpoint,
    score_qc,
    score_qd,
)
from .objectives import (
    AdvSample,
    Candidate,
    RegWeights,
    adversarial_distribution,
    hinge_loss,
    normalize_relevance,
    qd_weight,
    reinforce_term,
    sample_adversarial,
)
from .synthetic import SyntheticCorpus, make_synthetic_corpus
from .training import (
    EpochRecord,
    TrainConfig,
    TrainHistory,
    pretrain_qc,
    pretrain_qd,
    train_adversarial,
    train_mtl_dcs,
    train_qd_adversarial,
)
