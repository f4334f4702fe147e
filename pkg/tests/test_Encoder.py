import numpy as np
import pytest

from mcfa.modules.Data import PAD_ID, EmbeddingTable
from mcfa.modules.Encoder import EncoderParams, conv_feature_map, encode, window_mask
from mcfa.modules.Numerics import (
    DimensionError,
    GradTape,
    Tensor,
    backward,
    finite_difference_gradient,
    hadamard,
    relative_error,
    total,
)


def table(values, view="en"):
    return EmbeddingTable(view, Tensor.parameter(values, f"emb.{view}"))


def brute_force_encode(tokens, emb, params):
    """Pooled vector by enumerating every window explicitly."""
    out = []
    for h in params.windows:
        W, b = params.filters[h].values, params.biases[h].values
        best = None
        for start in range(len(tokens) - h + 1):
            window = np.concatenate([emb[t] for t in tokens[start : start + h]])
            value = np.maximum(W @ window + b, 0.0)
            best = value if best is None else np.maximum(best, value)
        out.append(best)
    return np.concatenate(out)


@pytest.fixture
def rng():
    return np.random.default_rng(7)


class TestFeatureMap:
    def test_all_pad_zero_bias_gives_zero_map(self, rng):
        emb = table(np.vstack([np.zeros(3), rng.uniform(-1, 1, (4, 3))]))
        params = EncoderParams.init("en", 3, 2, [3], rng)
        fmap = conv_feature_map(np.full(6, PAD_ID), emb, params.filters[3], params.biases[3])
        np.testing.assert_array_equal(fmap.values, np.zeros((4, 2)))

    def test_bias_only_gives_relu_of_bias(self, rng):
        emb = table(np.zeros((5, 3)))
        params = EncoderParams.init("en", 3, 2, [3], rng)
        params.biases[3].values[:] = 1.0
        fmap = conv_feature_map(np.array([1, 2, 3, 4, 2, 1]), emb, params.filters[3], params.biases[3])
        np.testing.assert_array_equal(fmap.values, np.ones((4, 2)))

    def test_column_count(self, rng):
        emb = table(rng.uniform(-1, 1, (5, 3)))
        params = EncoderParams.init("en", 3, 2, [3], rng)
        fmap = conv_feature_map(np.arange(6) % 5, emb, params.filters[3], params.biases[3])
        assert fmap.shape == (4, 2)

    def test_too_short_raises(self, rng):
        emb = table(rng.uniform(-1, 1, (5, 3)))
        params = EncoderParams.init("en", 3, 2, [4], rng)
        with pytest.raises(DimensionError):
            conv_feature_map(np.array([1, 2, 3]), emb, params.filters[4], params.biases[4])


class TestEncode:
    def test_default_width(self, rng):
        params = EncoderParams.init("en", 300, 100, [3, 4, 5], rng)
        assert params.output_width == 300

    def test_zero_embeddings_and_biases_give_zero_vector(self, rng):
        emb = table(np.zeros((6, 4)))
        params = EncoderParams.init("en", 4, 3, [3, 4, 5], rng)
        vec = encode(np.array([1, 2, 3, 4, 5]), emb, params).vector
        np.testing.assert_array_equal(vec.values, np.zeros(9))

    def test_matches_window_enumeration_and_is_non_negative(self, rng):
        matrix = np.vstack([np.zeros(4), rng.uniform(-1, 1, (7, 4))])
        emb = table(matrix)
        params = EncoderParams.init("en", 4, 3, [2, 3, 5], rng)
        tokens = np.array([3, 1, 6, 2, 7, 4])
        vec = encode(tokens, emb, params).vector.values
        np.testing.assert_allclose(vec, brute_force_encode(tokens, matrix, params), rtol=0, atol=1e-14)
        assert np.all(vec >= 0)

    def test_duplicated_sentence_keeps_pooled_values(self, rng):
        matrix = np.vstack([np.zeros(4), rng.uniform(-1, 1, (7, 4))])
        emb = table(matrix)
        params = EncoderParams.init("en", 4, 3, [2, 3], rng)
        tokens = np.array([3, 1, 6, 2, 7])
        once = encode(tokens, emb, params).vector.values
        twice = encode(np.concatenate([tokens, tokens]), emb, params).vector.values
        # The doubled sentence adds windows that straddle the seam, never removes any.
        assert np.all(twice >= once)
        doubled = brute_force_encode(np.concatenate([tokens, tokens]), matrix, params)
        np.testing.assert_allclose(twice, doubled, atol=1e-14)

    def test_pad_extension_with_zero_bias_is_invariant(self, rng):
        matrix = np.vstack([np.zeros(4), rng.uniform(-1, 1, (7, 4))])
        emb = table(matrix)
        params = EncoderParams.init("en", 4, 3, [3, 4, 5], rng)
        tokens = np.array([3, 1, 6, 2, 7])
        lengths = np.array([5])
        base = encode(tokens[None, :], emb, params, lengths=lengths).vector.values
        padded_tokens = np.concatenate([tokens, [PAD_ID] * 4])[None, :]
        padded = encode(padded_tokens, emb, params, lengths=lengths).vector.values
        # Equal up to matmul rounding on the longer window array.
        np.testing.assert_allclose(padded, base, rtol=0, atol=1e-14)

    def test_batch_padding_never_changes_a_vector(self, rng):
        matrix = np.vstack([np.zeros(4), rng.uniform(-1, 1, (7, 4))])
        emb = table(matrix)
        params = EncoderParams.init("en", 4, 3, [2, 3], rng)
        for h in params.windows:
            params.biases[h].values[:] = rng.uniform(-1, 1, 3)
        short = np.array([[3, 1, 6, 0, 0]])
        alone = encode(short, emb, params, lengths=np.array([3])).vector.values
        batch = np.array([[3, 1, 6, 0, 0, 0, 0, 0], [1, 2, 3, 4, 5, 6, 7, 1]])
        together = encode(batch, emb, params, lengths=np.array([3, 8])).vector.values
        np.testing.assert_allclose(together[0], alone[0], rtol=0, atol=1e-14)

    def test_window_mask_respects_min_length(self):
        mask = window_mask(np.array([2, 7]), 8, 3, min_length=5)
        assert mask.shape == (2, 6, 1)
        assert mask[0, :, 0].tolist() == [True, True, True, False, False, False]
        assert mask[1, :, 0].tolist() == [True] * 5 + [False]

    def test_dropout_mask_is_applied(self, rng):
        emb = table(rng.uniform(0, 1, (6, 2)))
        params = EncoderParams.init("en", 2, 2, [2], rng)
        tokens = np.array([1, 2, 3, 4, 5])
        plain = encode(tokens, emb, params).vector.values
        dropped = encode(tokens, emb, params, dropout_mask=np.array([2.0, 0.0])).vector.values
        np.testing.assert_array_equal(dropped, plain * np.array([2.0, 0.0]))


class TestEncoderGradients:
    @pytest.mark.parametrize("trial", range(3))
    def test_finite_differences(self, trial):
        rng = np.random.default_rng(50 + trial)
        emb = table(np.vstack([np.zeros(3), rng.uniform(-1, 1, (6, 3))]))
        params = EncoderParams.init("en", 3, 2, [2, 3], rng)
        for h in params.windows:
            params.biases[h].values[:] = rng.uniform(0.1, 0.5, 2)
        tokens = rng.integers(1, 7, size=(2, 6))
        lengths = np.array([4, 6])
        weights = rng.uniform(-1, 1, (2, 4))

        def build(tape):
            vec = encode(tokens, emb, params, lengths=lengths, tape=tape).vector
            return total(hadamard(vec, Tensor(weights), tape=tape), tape=tape)

        tape = GradTape()
        grads = backward(tape, build(tape), [emb.matrix, *params.parameters()])
        for p in [emb.matrix, *params.parameters()]:
            numeric = finite_difference_gradient(lambda: build(None).item(), p)
            assert relative_error(grads[p.name], numeric) < 1e-4, p.name
