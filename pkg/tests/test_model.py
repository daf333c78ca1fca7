"""Encoder contracts, cosine scoring, model initialization, checkpoints."""

import copy

import pytest
import torch

from codematch.corpus import PAD_ID, build_vocab
from codematch.model import (
    GeneratorModel,
    QCModel,
    QDModel,
    SeqEncoder,
    VocabMismatchError,
    cosine,
    encode,
    init_qd_from_qc,
    load_checkpoint,
    pad_batch,
    save_checkpoint,
    score_qc,
    score_qd,
)
from conftest import make_separable_pairs, tiny_config


@pytest.fixture
def encoder():
    torch.manual_seed(0)
    return SeqEncoder(vocab_size=30, embedding_dim=8, output_dim=12, dropout=0.0).eval()


@pytest.fixture
def qc_model():
    torch.manual_seed(0)
    return QCModel(30, 40, embedding_dim=8, output_dim=12, dropout=0.0).eval()


class TestSeqEncoder:
    def test_output_width_and_open_range(self, encoder):
        vec = encoder.encode_one([3, 4, 5])
        assert vec.shape == (12,)
        assert bool((vec.abs() < 1.0).all())

    def test_singleton_pooling_is_single_timestep(self, encoder):
        tokens, _ = pad_batch([[7]])
        emb = encoder.embedding(tokens)
        raw, _ = encoder.lstm(emb)
        expected = torch.tanh(raw[0, 0])
        got = encoder.encode_one([7])
        assert torch.allclose(got, expected)

    def test_inference_deterministic(self, encoder):
        first = encoder.encode_one([2, 9, 11])
        second = encoder.encode_one([2, 9, 11])
        assert torch.equal(first, second)

    def test_empty_sequence_rejected(self, encoder):
        with pytest.raises(ValueError):
            encoder.encode_one([])

    def test_out_of_range_index_rejected(self, encoder):
        with pytest.raises(ValueError):
            encoder.encode_one([29, 30])

    def test_padding_invariance(self, encoder):
        seq = [5, 3, 7]
        padded = seq + [PAD_ID] * 4
        plain = encoder.encode_batch([seq])
        extended = encoder.encode_batch([padded])
        assert torch.equal(plain, extended)

    def test_dropout_only_in_train_mode(self):
        torch.manual_seed(0)
        noisy = SeqEncoder(vocab_size=30, embedding_dim=32, output_dim=16, dropout=0.5)
        seq = [4, 5, 6, 7]
        assert not torch.equal(noisy.encode_one(seq, train_mode=True), noisy.encode_one(seq, train_mode=True))
        assert torch.equal(noisy.encode_one(seq), noisy.encode_one(seq))

    def test_odd_output_dim_rejected(self):
        with pytest.raises(ValueError):
            SeqEncoder(10, 4, output_dim=7)

    def test_encode_function_wrapper(self, encoder):
        assert torch.equal(encode([1, 2], encoder), encoder.encode_one([1, 2]))

    def test_default_dimensions(self):
        torch.manual_seed(0)
        enc = SeqEncoder(vocab_size=50).eval()
        assert enc.embedding.embedding_dim == 200
        with torch.no_grad():
            vec = enc.encode_one([2, 3, 4])
        assert vec.shape == (400,)
        assert bool((vec.abs() < 1.0).all())

    def test_nonzero_norm(self, encoder):
        with torch.no_grad():
            for seq in ([2], [3, 4], list(range(2, 20))):
                assert float(encoder.encode_one(seq).norm()) > 0


class TestCosine:
    def test_identical_is_one(self):
        v = torch.tensor([0.3, -0.2, 0.9])
        assert float(cosine(v, v)) == pytest.approx(1.0)

    def test_antipodal_is_minus_one(self):
        v = torch.tensor([0.3, -0.2, 0.9])
        assert float(cosine(v, -v)) == pytest.approx(-1.0)

    def test_orthogonal_is_zero(self):
        u = torch.tensor([1.0, 0.0, 0.0])
        v = torch.tensor([0.0, 1.0, 0.0])
        assert float(cosine(u, v)) == pytest.approx(0.0)

    def test_zero_norm_raises(self):
        with pytest.raises(ArithmeticError):
            cosine(torch.zeros(3), torch.ones(3))

    def test_invariant_under_positive_rescaling(self):
        u = torch.tensor([0.5, -0.1, 0.4])
        v = torch.tensor([-0.3, 0.8, 0.2])
        assert float(cosine(3.7 * u, v)) == pytest.approx(float(cosine(u, v)))
        assert float(cosine(u, 0.01 * v)) == pytest.approx(float(cosine(u, v)))


class TestMatchers:
    def test_score_qc_in_range(self, qc_model):
        score = score_qc(qc_model, [1, 2, 3], [4, 5])
        assert -1.0 <= score <= 1.0

    def test_qd_self_similarity_is_one(self):
        torch.manual_seed(1)
        qd = QDModel(30, embedding_dim=8, output_dim=12, dropout=0.0).eval()
        assert score_qd(qd, [3, 4, 5], [3, 4, 5]) == pytest.approx(1.0)

    def test_qd_symmetry(self):
        torch.manual_seed(1)
        qd = QDModel(30, embedding_dim=8, output_dim=12, dropout=0.0).eval()
        a, b = [2, 9], [11, 4, 6]
        assert score_qd(qd, a, b) == pytest.approx(score_qd(qd, b, a))

    def test_separate_encoders_share_nothing(self, qc_model):
        q_params = {id(p) for p in qc_model.question_encoder.parameters()}
        c_params = {id(p) for p in qc_model.code_encoder.parameters()}
        assert not q_params & c_params

    def test_qd_model_is_siamese(self):
        torch.manual_seed(1)
        qd = QDModel(30, embedding_dim=8, output_dim=12, dropout=0.0)
        encoders = [m for m in qd.modules() if isinstance(m, SeqEncoder)]
        assert len(encoders) == 1

    def test_score_one_to_many_matches_pairwise(self, qc_model):
        q = [1, 2, 3]
        codes = [[4, 5], [6], [7, 8, 9]]
        many = qc_model.score_one_to_many(q, codes)
        singles = [score_qc(qc_model, q, c) for c in codes]
        assert torch.allclose(many, torch.tensor(singles), atol=1e-6)


class TestInitQDFromQC:
    def test_scores_equal_question_encoder_cosines(self, qc_model):
        qd = init_qd_from_qc(qc_model)
        a, b = [2, 3, 4], [5, 6]
        with torch.no_grad():
            expected = float(cosine(
                qc_model.question_encoder.encode_one(a),
                qc_model.question_encoder.encode_one(b),
            ))
        assert score_qd(qd, a, b) == pytest.approx(expected)

    def test_isolation(self, qc_model):
        qd = init_qd_from_qc(qc_model)
        before = score_qc(qc_model, [1, 2], [3, 4])
        with torch.no_grad():
            for p in qd.parameters():
                p.add_(1.0)
        assert score_qc(qc_model, [1, 2], [3, 4]) == pytest.approx(before)

    def test_deterministic(self, qc_model):
        first = init_qd_from_qc(qc_model)
        second = init_qd_from_qc(qc_model)
        for key in first.state_dict():
            assert torch.equal(first.state_dict()[key], second.state_dict()[key])


class TestGeneratorModel:
    def test_tied_aliases_parameters(self, qc_model):
        gen = GeneratorModel(qc_model, mode="tied")
        assert gen.model is qc_model

    def test_untied_is_independent_copy(self, qc_model):
        gen = GeneratorModel(qc_model, mode="untied")
        assert gen.model is not qc_model
        with torch.no_grad():
            next(gen.model.parameters()).add_(1.0)
        assert not torch.equal(next(gen.model.parameters()), next(qc_model.parameters()))

    def test_unknown_mode(self, qc_model):
        with pytest.raises(ValueError):
            GeneratorModel(qc_model, mode="loose")


class TestCheckpoints:
    def test_roundtrip(self, tmp_path, qc_model):
        cfg = tiny_config()
        save_checkpoint(tmp_path / "model.pt", qc_model, cfg)
        loaded, payload = load_checkpoint(tmp_path / "model.pt")
        assert payload["kind"] == "qc"
        assert payload["config"]["embedding_dim"] == cfg.embedding_dim
        for key in qc_model.state_dict():
            assert torch.equal(loaded.state_dict()[key], qc_model.state_dict()[key])

    def test_vocab_hash_verified(self, tmp_path):
        vocab = build_vocab(make_separable_pairs(5))
        model = QCModel(vocab.nl_size, vocab.code_size, 8, 12, 0.0,
                        nl_vocab_hash=vocab.nl_hash(), code_vocab_hash=vocab.code_hash())
        save_checkpoint(tmp_path / "model.pt", model)
        assert load_checkpoint(tmp_path / "model.pt", vocab=vocab)[0] is not None
        other = build_vocab(make_separable_pairs(7))
        with pytest.raises(VocabMismatchError):
            load_checkpoint(tmp_path / "model.pt", vocab=other)

    def test_qd_checkpoint_kind(self, tmp_path):
        qd = QDModel(30, 8, 12, 0.0)
        save_checkpoint(tmp_path / "qd.pt", qd)
        loaded, payload = load_checkpoint(tmp_path / "qd.pt")
        assert payload["kind"] == "qd"
        assert loaded.kind == "qd"


class TestPadBatch:
    def test_shapes(self):
        tokens, lengths = pad_batch([[1, 2, 3], [4]])
        assert tokens.tolist() == [[1, 2, 3], [4, PAD_ID, PAD_ID]]
        assert lengths.tolist() == [3, 1]

    def test_empty_batch(self):
        with pytest.raises(ValueError):
            pad_batch([])

    def test_empty_sequence(self):
        with pytest.raises(ValueError):
            pad_batch([[1], []])
