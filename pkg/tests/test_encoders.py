import numpy as np
import pytest

from hvqa import fileio
from hvqa.encoders import (
    EmbeddingTable,
    LstmParams,
    RegionFeatures,
    encode_question,
    load_region_features,
    pad_or_truncate,
)
from hvqa.tensor import Tape, tensor_sum

from gradcheck import fd_gradient, rel_error


def make_table(vocab=10, dim=4, seed=0, dtype=np.float64):
    rng = np.random.default_rng(seed)
    return EmbeddingTable(rng.normal(size=(vocab, dim)).astype(dtype))


class TestPadOrTruncate:
    def test_exact_length_is_identity(self):
        assert pad_or_truncate([5, 7, 9], 3) == [5, 7, 9]

    def test_right_pads_with_pad_id(self):
        assert pad_or_truncate([5, 7], 4, pad_id=0) == [5, 7, 0, 0]

    def test_keeps_first_fourteen_of_twenty(self):
        tokens = list(range(1, 21))
        assert pad_or_truncate(tokens, 14) == tokens[:14]

    def test_rejects_non_positive_length(self):
        with pytest.raises(ValueError):
            pad_or_truncate([1], 0)


class TestEmbeddingTable:
    def test_pad_row_is_zero(self):
        table = make_table()
        np.testing.assert_array_equal(table.rows[0], np.zeros(4))

    def test_lookup_rejects_out_of_range_ids(self):
        table = make_table(vocab=5)
        with pytest.raises(ValueError):
            table.lookup([1, 5])
        with pytest.raises(ValueError):
            table.lookup([-1])

    def test_lookup_is_constant(self):
        table = make_table()
        out = table.lookup([1, 2, 0])
        assert not out.requires_grad
        np.testing.assert_array_equal(out.data[2], np.zeros(4))

    def test_file_round_trip(self, tmp_path):
        table = make_table(vocab=7, dim=3)
        path = tmp_path / "table.emb"
        table.save(path)
        loaded = EmbeddingTable.load(path)
        assert loaded.vocab_size == 7 and loaded.dim == 3
        np.testing.assert_array_equal(loaded.rows, table.rows)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.emb"
        path.write_bytes(b"NOPE" + b"\x00" * 32)
        with pytest.raises(fileio.DataError):
            EmbeddingTable.load(path)

    def test_vocab_file_round_trip(self, tmp_path):
        tokens = ["<pad>", "what", "color"]
        path = tmp_path / "vocab.txt"
        fileio.write_vocab(path, tokens)
        assert fileio.read_vocab(path) == tokens


class TestEncodeQuestion:
    def test_all_pad_with_zero_weights_gives_zero_vector(self):
        table = make_table(dim=4)
        zeros = lambda shape: np.zeros(shape)
        from hvqa.tensor import parameter
        lstm = LstmParams(
            w_i=parameter(zeros((3, 7)), dtype=np.float64),
            w_f=parameter(zeros((3, 7)), dtype=np.float64),
            w_c=parameter(zeros((3, 7)), dtype=np.float64),
            w_o=parameter(zeros((3, 7)), dtype=np.float64),
            b_i=parameter(zeros(3), dtype=np.float64),
            b_f=parameter(zeros(3), dtype=np.float64),
            b_c=parameter(zeros(3), dtype=np.float64),
            b_o=parameter(zeros(3), dtype=np.float64),
        )
        out = encode_question([0, 0, 0, 0], table, lstm)
        np.testing.assert_array_equal(out.data, np.zeros(3))

    def test_recurrence_is_step_sensitive(self):
        rng = np.random.default_rng(1)
        table = make_table(seed=2)
        lstm = LstmParams.create(rng, d_w=4, d_q=3, dtype=np.float64)
        repeated = encode_question([5, 5, 5], table, lstm)
        once_then_pad = encode_question([5, 0, 0], table, lstm)
        assert not np.allclose(repeated.data, once_then_pad.data)

    def test_deterministic(self):
        rng = np.random.default_rng(3)
        table = make_table(seed=4)
        lstm = LstmParams.create(rng, d_w=4, d_q=3, dtype=np.float64)
        a = encode_question([1, 2, 3], table, lstm)
        b = encode_question([1, 2, 3], table, lstm)
        np.testing.assert_array_equal(a.data, b.data)

    def test_token_beyond_truncation_cannot_change_output(self):
        rng = np.random.default_rng(5)
        table = make_table(vocab=20, seed=6)
        lstm = LstmParams.create(rng, d_w=4, d_q=3, dtype=np.float64)
        n_w = 4
        base = [1, 2, 3, 4, 5, 6]
        for swap in (7, 11, 19):
            other = base[:4] + [swap, swap]
            a = encode_question(pad_or_truncate(base, n_w), table, lstm)
            b = encode_question(pad_or_truncate(other, n_w), table, lstm)
            np.testing.assert_array_equal(a.data, b.data)

    def test_out_of_vocab_token_rejected(self):
        rng = np.random.default_rng(7)
        table = make_table(vocab=6)
        lstm = LstmParams.create(rng, d_w=4, d_q=3, dtype=np.float64)
        with pytest.raises(ValueError):
            encode_question([1, 6], table, lstm)

    def test_gradients_of_every_lstm_matrix_match_finite_differences(self):
        rng = np.random.default_rng(8)
        table = make_table(seed=9)
        lstm = LstmParams.create(rng, d_w=4, d_q=3, dtype=np.float64)
        tokens = [1, 2, 3]

        def build():
            return tensor_sum(encode_question(tokens, table, lstm))

        with Tape() as tape:
            loss = build()
        tape.backward(loss)
        for name, p in lstm.named_parameters():
            numeric = fd_gradient(lambda: build().item(), p.data)
            assert rel_error(p.grad, numeric) < 1e-4, name

    def test_embedding_rows_receive_no_gradient(self):
        rng = np.random.default_rng(10)
        table = make_table(seed=11)
        before = table.rows.copy()
        lstm = LstmParams.create(rng, d_w=4, d_q=3, dtype=np.float64)
        with Tape() as tape:
            loss = tensor_sum(encode_question([1, 2], table, lstm))
        tape.backward(loss)
        np.testing.assert_array_equal(table.rows, before)


class TestLstmParams:
    def test_forget_bias_is_one(self):
        lstm = LstmParams.create(np.random.default_rng(0), d_w=4, d_q=3)
        np.testing.assert_array_equal(lstm.b_f.data, np.ones(3, dtype=np.float32))
        np.testing.assert_array_equal(lstm.b_i.data, np.zeros(3, dtype=np.float32))

    def test_shape_validation(self):
        from hvqa.tensor import parameter
        good = LstmParams.create(np.random.default_rng(0), d_w=4, d_q=3)
        with pytest.raises(ValueError):
            LstmParams(good.w_i, good.w_f, good.w_c, parameter(np.zeros((2, 7))),
                       good.b_i, good.b_f, good.b_c, good.b_o)


class TestRegionFeatures:
    def test_wraps_matrix(self):
        rf = RegionFeatures(np.ones((4, 8)))
        assert rf.k == 4 and rf.d_v == 8

    def test_rejects_non_finite(self):
        bad = np.ones((2, 3))
        bad[1, 1] = np.nan
        with pytest.raises(ValueError):
            RegionFeatures(bad)

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            RegionFeatures(np.ones((0, 3)))


class TestLoadRegionFeatures:
    def test_paper_scale_shape(self, tmp_path):
        rng = np.random.default_rng(1)
        path = tmp_path / "features.bin"
        fileio.write_features(path, rng.normal(size=(2, 36, 2048)).astype(np.float32))
        rf = load_region_features(path, 1, k=36, d_v=2048)
        assert rf.features.shape == (36, 2048)

    def test_toy_record_is_bit_equal(self, tmp_path):
        rng = np.random.default_rng(2)
        recs = rng.normal(size=(3, 1, 8))
        path = tmp_path / "features.bin"
        fileio.write_features(path, recs)
        rf = load_region_features(path, 2, k=1, d_v=8)
        np.testing.assert_array_equal(rf.features, recs[2])

    def test_rows_preserve_file_order(self, tmp_path):
        recs = np.arange(2 * 3 * 4, dtype=np.float64).reshape(2, 3, 4)
        path = tmp_path / "features.bin"
        fileio.write_features(path, recs)
        np.testing.assert_array_equal(load_region_features(path, 0, 3, 4).features, recs[0])

    def test_dimension_mismatch_vs_configuration(self, tmp_path):
        path = tmp_path / "features.bin"
        fileio.write_features(path, np.zeros((1, 4, 2048)))
        with pytest.raises(fileio.DataError) as err:
            load_region_features(path, 0, k=4, d_v=64)
        assert "2048" in str(err.value) and "64" in str(err.value)

    def test_offset_out_of_range(self, tmp_path):
        path = tmp_path / "features.bin"
        fileio.write_features(path, np.zeros((2, 2, 2)))
        with pytest.raises(fileio.DataError):
            load_region_features(path, 5, k=2, d_v=2)
