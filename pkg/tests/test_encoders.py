"""Value-encoder behavior: BOW invariances and the LSTM against a
plain-numpy reference cell, plus finite-difference gradient checks."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import kane.autodiff as ad
from kane.encoders import bow_encode, init_lstm_params, lstm_encode

from helpers import check_gradients, reference_lstm_final_state, relative_error


def make_table(rng: np.random.Generator, vocab: int = 12, dim: int = 5) -> ad.Tensor:
    return ad.parameter(rng.standard_normal((vocab, dim)), "word")


# ---------------------------------------------------------------------------
# bag of words


class TestBow:
    def test_matches_plain_accumulation(self):
        rng = np.random.default_rng(0)
        table = make_table(rng)
        tokens = [3, 1, 4, 1, 5]
        out = bow_encode(tokens, table).data
        want = np.zeros(table.shape[1])
        for w in tokens:
            want = want + table.data[w]
        assert relative_error(out, want) < 1e-12

    def test_permutation_invariance_is_bit_exact(self):
        rng = np.random.default_rng(1)
        table = make_table(rng)
        for _ in range(200):
            k = int(rng.integers(1, 8))
            tokens = [int(rng.integers(table.shape[0])) for _ in range(k)]
            base = bow_encode(tokens, table).data
            shuffled = list(tokens)
            rng.shuffle(shuffled)
            assert np.array_equal(bow_encode(shuffled, table).data, base)

    @given(st.lists(st.integers(min_value=0, max_value=11), min_size=1, max_size=10),
           st.randoms(use_true_random=False))
    @settings(max_examples=100, deadline=None)
    def test_permutation_invariance_property(self, tokens, pyrandom):
        table = make_table(np.random.default_rng(7))
        shuffled = list(tokens)
        pyrandom.shuffle(shuffled)
        assert np.array_equal(bow_encode(shuffled, table).data,
                              bow_encode(tokens, table).data)

    def test_repeated_token_counts_per_occurrence(self):
        table = make_table(np.random.default_rng(2))
        single = bow_encode([4], table).data
        double = bow_encode([4, 4], table).data
        assert np.array_equal(double, 2.0 * single)

    def test_additive_over_concatenation(self):
        rng = np.random.default_rng(3)
        table = make_table(rng)
        a = [int(rng.integers(12)) for _ in range(4)]
        b = [int(rng.integers(12)) for _ in range(3)]
        joint = bow_encode(a + b, table).data
        split = bow_encode(a, table).data + bow_encode(b, table).data
        assert relative_error(joint, split) < 1e-12

    def test_gradient_is_occurrence_count(self):
        table = make_table(np.random.default_rng(4), vocab=6, dim=3)
        tokens = [2, 5, 2, 2]
        with ad.Tape() as tape:
            loss = ad.sum_all(bow_encode(tokens, table))
            grads = ad.backward(tape, loss)
        g = grads[table]
        want = np.zeros_like(table.data)
        want[2] = 3.0
        want[5] = 1.0
        assert np.array_equal(g, want)

    def test_rejects_empty_sequence(self):
        table = make_table(np.random.default_rng(5))
        with pytest.raises(ValueError):
            bow_encode([], table)

    def test_rejects_out_of_vocabulary_id(self):
        table = make_table(np.random.default_rng(6), vocab=4)
        with pytest.raises(IndexError):
            bow_encode([0, 4], table)
        with pytest.raises(IndexError):
            bow_encode([-1], table)


# ---------------------------------------------------------------------------
# LSTM


class TestLstm:
    def _setup(self, seed: int, dim: int = 4, vocab: int = 9):
        rng = np.random.default_rng(seed)
        table = make_table(rng, vocab=vocab, dim=dim)
        params = init_lstm_params(dim, rng)
        return table, params

    def test_matches_numpy_reference(self):
        for seed in range(5):
            table, params = self._setup(seed)
            rng = np.random.default_rng(100 + seed)
            tokens = [int(rng.integers(table.shape[0]))
                      for _ in range(int(rng.integers(1, 7)))]
            got = lstm_encode(tokens, table, params).data
            raw = {name.removeprefix("lstm."): t.data for name, t in params.named()}
            want = reference_lstm_final_state(tokens, table.data, raw)
            assert relative_error(got, want) < 1e-12

    def test_order_sensitivity(self):
        table, params = self._setup(42)
        rng = np.random.default_rng(43)
        differing = 0
        trials = 100
        for _ in range(trials):
            tokens = [int(rng.integers(table.shape[0])) for _ in range(4)]
            i, j = 0, 1 + int(rng.integers(3))
            while tokens[i] == tokens[j]:
                tokens[j] = int(rng.integers(table.shape[0]))
            swapped = list(tokens)
            swapped[i], swapped[j] = swapped[j], swapped[i]
            a = lstm_encode(tokens, table, params).data
            b = lstm_encode(swapped, table, params).data
            if not np.array_equal(a, b):
                differing += 1
        assert differing >= 0.99 * trials

    def test_init_shapes_and_forget_bias(self):
        rng = np.random.default_rng(8)
        params = init_lstm_params(5, rng)
        named = dict(params.named())
        assert len(named) == 12
        for name, t in named.items():
            if name.startswith("lstm.b_"):
                assert t.shape == (5,)
            else:
                assert t.shape == (5, 5)
        assert np.array_equal(named["lstm.b_forget"].data, np.ones(5))
        assert np.array_equal(named["lstm.b_input"].data, np.zeros(5))

    def test_rejects_empty_and_out_of_range(self):
        table, params = self._setup(9)
        with pytest.raises(ValueError):
            lstm_encode([], table, params)
        with pytest.raises(IndexError):
            lstm_encode([table.shape[0]], table, params)

    def test_gradients_match_finite_differences(self):
        table, params = self._setup(10, dim=3, vocab=5)
        tokens = [1, 4, 1, 2]
        tensors = [table] + [t for _, t in params.named()]

        def forward():
            return ad.sum_all(lstm_encode(tokens, table, params))

        worst = check_gradients(forward, tensors, step=1e-6)
        assert worst < 1e-5

    def test_gradient_reaches_every_gate(self):
        table, params = self._setup(11, dim=3, vocab=5)
        tensors = [t for _, t in params.named()]
        with ad.Tape() as tape:
            loss = ad.sum_all(lstm_encode([0, 3, 2], table, params))
            grads = ad.backward(tape, loss)
        for (name, t) in params.named():
            assert np.abs(grads[t]).max() > 0, f"no gradient reached {name}"


def test_bow_gradient_matches_finite_differences():
    table = make_table(np.random.default_rng(12), vocab=5, dim=3)

    def forward():
        return ad.sum_all(bow_encode([0, 2, 2, 4], table))

    assert check_gradients(forward, [table], step=1e-6) < 1e-7
