"""
Per-view convolutional sentence encoder.

For every window size ``h`` a filter bank slides over the word vectors of a
sentence (valid convolution), a ReLU follows, and max-over-time pooling keeps
one value per feature map. The pooled vectors of all window sizes are
concatenated into the sentence vector.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .Data import MIN_PADDED_LENGTH, EmbeddingTable
from .Numerics import (
    Activation,
    BoolArray,
    DimensionError,
    FloatArray,
    GradTape,
    IntArray,
    Tensor,
    activation,
    add,
    concat,
    dropout,
    gather_rows,
    glorot_uniform,
    matmul,
    max_over_time,
    unfold,
)


@dataclass
class EncoderParams:
    view: str
    # window size -> filter bank (n_maps, h * d_word) and bias (n_maps,)
    filters: dict[int, Tensor]
    biases: dict[int, Tensor]

    @classmethod
    def init(
        cls,
        view: str,
        d_word: int,
        n_maps: int,
        windows: Sequence[int],
        rng: np.random.Generator,
    ) -> EncoderParams:
        filters, biases = {}, {}
        for h in windows:
            filters[h] = Tensor.parameter(
                glorot_uniform(rng, (n_maps, h * d_word), fan_in=h * d_word, fan_out=n_maps),
                f"enc.{view}.W{h}",
            )
            biases[h] = Tensor.parameter(np.zeros(n_maps), f"enc.{view}.b{h}")
        return cls(view, filters, biases)

    @property
    def windows(self) -> list[int]:
        return list(self.filters)

    @property
    def n_maps(self) -> int:
        return next(iter(self.biases.values())).shape[0]

    @property
    def output_width(self) -> int:
        return self.n_maps * len(self.filters)

    def parameters(self) -> list[Tensor]:
        params = []
        for h in self.filters:
            params += [self.filters[h], self.biases[h]]
        return params


@dataclass
class SentenceVector:
    view: str
    # (d,) for one sentence or (B, d) for a batch; entries are >= 0.
    vector: Tensor


def window_mask(
    lengths: IntArray, padded_length: int, h: int, min_length: int = MIN_PADDED_LENGTH
) -> BoolArray:
    """
    ``(B, T, 1)`` mask of windows that start inside each example's own
    length, after that length is raised to ``min_length``.
    """
    steps = padded_length - h + 1
    effective = np.maximum(np.asarray(lengths), min_length)
    mask: BoolArray = np.arange(steps)[None, :] <= (effective[:, None] - h)
    return mask[:, :, None]


def conv_feature_map(
    tokens: IntArray,
    emb: EmbeddingTable,
    W_h: Tensor,
    b_h: Tensor,
    tape: GradTape | None = None,
) -> Tensor:
    """
    ReLU feature maps of one filter bank, time-major: ``(..., L - h + 1, n_maps)``.
    """
    if W_h.shape[1] % emb.d_word:
        raise DimensionError(f"filter width {W_h.shape[1]} is not a multiple of d_word {emb.d_word}")
    h = W_h.shape[1] // emb.d_word
    length = np.asarray(tokens).shape[-1]
    if length < h:
        raise DimensionError(f"padded length {length} is shorter than window {h}")
    words = gather_rows(emb.matrix, tokens, tape=tape)
    windows = unfold(words, h, tape=tape)
    pre = add(matmul(windows, W_h, tape=tape, transpose_b=True), b_h, tape=tape)
    return activation(pre, Activation.RELU, tape=tape)


def encode(
    tokens: IntArray,
    emb: EmbeddingTable,
    params: EncoderParams,
    lengths: IntArray | None = None,
    dropout_mask: FloatArray | None = None,
    tape: GradTape | None = None,
    min_length: int = MIN_PADDED_LENGTH,
) -> SentenceVector:
    """
    Encodes one padded sentence ``(L,)`` or a padded batch ``(B, L)``.

    With ``lengths``, windows starting past an example's own length are
    ignored by the pooling, so extra batch padding changes a vector by at
    most matmul rounding.
    The dropout mask, when given, is applied to the pooled concatenation.
    """
    pooled = []
    for h in params.windows:
        fmap = conv_feature_map(tokens, emb, params.filters[h], params.biases[h], tape=tape)
        mask = None
        if lengths is not None:
            mask = window_mask(lengths, np.asarray(tokens).shape[-1], h, min_length)
        pooled.append(max_over_time(fmap, axis=-2, mask=mask, tape=tape))
    vector = concat(pooled, axis=-1, tape=tape)
    if dropout_mask is not None:
        vector = dropout(vector, dropout_mask, tape=tape)
    return SentenceVector(params.view, vector)
