"""Attribute value encoders: token sequences -> embedding-space vectors.

Both encoders read rows of a trainable word embedding table, so gradients
flow back into the table. Encodings are rebuilt from the current table at
every use; nothing is cached across optimization steps.

* ``bow_encode``  -- sum of the token embeddings; permutation-invariant.
* ``lstm_encode`` -- final hidden state of a standard LSTM cell run over
  the tokens in order; zero initial states; order-sensitive.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


def _check_tokens(tokens: Sequence[int], vocab_size: int) -> None:
    if len(tokens) == 0:
        raise ValueError("cannot encode an empty token sequence")
    for w in tokens:
        if not 0 <= w < vocab_size:
            raise IndexError(f"word id {w} outside vocabulary of size {vocab_size}")


def bow_encode(tokens: Sequence[int], word_table: Tensor) -> Tensor:
    """Sum of token embeddings. Repeated tokens count once per occurrence;
    reordered tokens encode identically.

    The sum runs over tokens in sorted order: float addition is not
    associative, so summing in arrival order would make two orderings of
    the same multiset differ in the last bits.
    """
    _check_tokens(tokens, word_table.shape[0])
    return ad.sum_rows(ad.rows(word_table, sorted(int(w) for w in tokens)))


@dataclass
class LstmParams:
    """Gate weights for one LSTM cell of width ``dim``.

    Each gate has an input path (dim x dim), a hidden path (dim x dim) and
    a bias (dim). The forget bias starts at 1 so early training does not
    erase the cell state.
    """

    w_in_input: Tensor
    w_hid_input: Tensor
    b_input: Tensor
    w_in_forget: Tensor
    w_hid_forget: Tensor
    b_forget: Tensor
    w_in_output: Tensor
    w_hid_output: Tensor
    b_output: Tensor
    w_in_cell: Tensor
    w_hid_cell: Tensor
    b_cell: Tensor

    def named(self) -> list[tuple[str, Tensor]]:
        return [
            ("lstm.w_in_input", self.w_in_input),
            ("lstm.w_hid_input", self.w_hid_input),
            ("lstm.b_input", self.b_input),
            ("lstm.w_in_forget", self.w_in_forget),
            ("lstm.w_hid_forget", self.w_hid_forget),
            ("lstm.b_forget", self.b_forget),
            ("lstm.w_in_output", self.w_in_output),
            ("lstm.w_hid_output", self.w_hid_output),
            ("lstm.b_output", self.b_output),
            ("lstm.w_in_cell", self.w_in_cell),
            ("lstm.w_hid_cell", self.w_hid_cell),
            ("lstm.b_cell", self.b_cell),
        ]


def init_lstm_params(dim: int, rng: np.random.Generator) -> LstmParams:
    bound = np.sqrt(6.0 / (2 * dim))  # fan-based: gate outputs stay O(input)

    def mat(name: str) -> Tensor:
        return ad.parameter(rng.uniform(-bound, bound, size=(dim, dim)), name)

    w_ii, w_hi = mat("lstm.w_in_input"), mat("lstm.w_hid_input")
    w_if, w_hf = mat("lstm.w_in_forget"), mat("lstm.w_hid_forget")
    w_io, w_ho = mat("lstm.w_in_output"), mat("lstm.w_hid_output")
    w_ic, w_hc = mat("lstm.w_in_cell"), mat("lstm.w_hid_cell")
    zeros = lambda name: ad.parameter(np.zeros(dim), name)
    return LstmParams(
        w_in_input=w_ii, w_hid_input=w_hi, b_input=zeros("lstm.b_input"),
        w_in_forget=w_if, w_hid_forget=w_hf, b_forget=ad.parameter(np.ones(dim), "lstm.b_forget"),
        w_in_output=w_io, w_hid_output=w_ho, b_output=zeros("lstm.b_output"),
        w_in_cell=w_ic, w_hid_cell=w_hc, b_cell=zeros("lstm.b_cell"),
    )


def _gate(x: Tensor, h: Tensor, w_in: Tensor, w_hid: Tensor, b: Tensor) -> Tensor:
    return ad.add(ad.add(ad.matvec(w_in, x), ad.matvec(w_hid, h)), b)


def lstm_encode(tokens: Sequence[int], word_table: Tensor, params: LstmParams) -> Tensor:
    """Final hidden state after feeding the token embeddings in order."""
    _check_tokens(tokens, word_table.shape[0])
    dim = word_table.shape[1]
    h = ad.constant(np.zeros(dim))
    c = ad.constant(np.zeros(dim))
    for w in tokens:
        x = ad.row(word_table, int(w))
        gate_i = ad.sigmoid(_gate(x, h, params.w_in_input, params.w_hid_input, params.b_input))
        gate_f = ad.sigmoid(_gate(x, h, params.w_in_forget, params.w_hid_forget, params.b_forget))
        gate_o = ad.sigmoid(_gate(x, h, params.w_in_output, params.w_hid_output, params.b_output))
        cand = ad.tanh(_gate(x, h, params.w_in_cell, params.w_hid_cell, params.b_cell))
        c = ad.add(ad.elementwise_mul(gate_f, c), ad.elementwise_mul(gate_i, cand))
        h = ad.elementwise_mul(gate_o, ad.tanh(c))
    return h
