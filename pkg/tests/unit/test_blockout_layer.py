"""
Unit tests for the Blockout layer.
Tests mask construction, the training and inference passes, gradients and
the sequencing contract of shared cluster assignments.
"""
import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from blockout import tensor_core as tc
from blockout.blockout_layer import (
    BlockoutLayer,
    ClusterParameters,
    build_mask,
    init_layer,
    prob_gradient,
)
from blockout.exceptions import DomainError, LogicError, ShapeError
from blockout.tensor_core import RngStream


def _random_binary(generator: np.random.Generator, shape) -> np.ndarray:
    return (generator.random(shape) < 0.5).astype(np.float64)


def _layer_with_probabilities(d_in, d_out, k, seed, logits_scale=1.0) -> BlockoutLayer:
    """Layer with random cluster logits so assignments vary across nodes."""
    rng = RngStream(seed)
    layer = init_layer(d_in, d_out, k, rng.child("init"))
    layer.cluster_out.logits[:] = rng.child("theta_out").normal((d_out, k), std=logits_scale)
    layer.cluster_in.logits[:] = rng.child("theta_in").normal((d_in, k), std=logits_scale)
    layer.bias[:] = rng.child("bias").normal((d_out,))
    return layer


@pytest.mark.unit
class TestBuildMask:
    """Test build_mask function."""

    def test_single_shared_cluster(self):
        """Verify k=1 with every node in the cluster gives an all-ones mask."""
        assert_array_equal(build_mask(np.ones((2, 1)), np.ones((3, 1)), 1), np.ones((2, 3)))

    def test_identity_assignments_scaled_by_k(self):
        """Verify a single shared cluster contributes 1/k, not 1."""
        assert_array_equal(build_mask(np.eye(2), np.eye(2), 2), [[0.5, 0.0], [0.0, 0.5]])

    def test_shared_in_all_clusters(self):
        """Verify nodes sharing every cluster get mask entry 1."""
        assert build_mask(np.array([[1.0, 1.0]]), np.array([[1.0, 1.0]]), 2)[0, 0] == 1.0

    def test_matches_entrywise_count(self):
        """Verify the mask equals shared-cluster counts over k for 1000 random pairs."""
        generator = np.random.default_rng(2024)
        for _ in range(1000):
            k = int(generator.integers(1, 5))
            d_out, d_in = int(generator.integers(1, 6)), int(generator.integers(1, 6))
            c_out, c_in = _random_binary(generator, (d_out, k)), _random_binary(generator, (d_in, k))
            expected = np.zeros((d_out, d_in))
            for t in range(d_out):
                for s in range(d_in):
                    expected[t, s] = sum(c_out[t, l] * c_in[s, l] for l in range(k)) / k
            assert_array_equal(build_mask(c_out, c_in, k), expected)

    def test_entries_are_multiples_of_one_over_k(self):
        """Verify every entry lies in {0, 1/k, ..., 1}."""
        generator = np.random.default_rng(3)
        mask = build_mask(_random_binary(generator, (6, 4)), _random_binary(generator, (5, 4)), 4)
        assert set(np.unique(mask * 4)) <= {0.0, 1.0, 2.0, 3.0, 4.0}

    def test_rank_bounded_by_k(self):
        """Verify rank(mask) <= k on random instances."""
        generator = np.random.default_rng(4)
        for k in (1, 2, 3):
            for _ in range(50):
                mask = build_mask(_random_binary(generator, (7, k)), _random_binary(generator, (6, k)), k)
                assert np.linalg.matrix_rank(mask) <= k

    def test_k1_is_outer_product(self):
        """Verify k=1 masks are the outer product of the two assignment vectors."""
        generator = np.random.default_rng(5)
        c_out, c_in = _random_binary(generator, (5, 1)), _random_binary(generator, (4, 1))
        mask = build_mask(c_out, c_in, 1)
        assert_array_equal(mask, np.outer(c_out[:, 0], c_in[:, 0]))
        assert np.linalg.matrix_rank(mask) <= 1

    def test_any_support_pattern_is_reachable(self):
        """Verify k = d_out, C_out = I and C_in = Mᵀ reproduce an arbitrary support M."""
        generator = np.random.default_rng(6)
        for _ in range(100):
            d_out, d_in = int(generator.integers(1, 13)), int(generator.integers(1, 13))
            support = _random_binary(generator, (d_out, d_in))
            mask = build_mask(np.eye(d_out), support.T.copy(), d_out)
            assert_array_equal(mask != 0.0, support == 1.0)

    def test_non_binary_rejected(self):
        """Verify a fractional assignment raises DomainError."""
        with pytest.raises(DomainError):
            build_mask(np.array([[0.5]]), np.array([[1.0]]), 1)

    def test_k_mismatch_rejected(self):
        """Verify k must equal the column count of both matrices."""
        with pytest.raises(ShapeError):
            build_mask(np.ones((2, 2)), np.ones((3, 2)), 3)


@pytest.mark.unit
class TestProbGradient:
    """Test prob_gradient function."""

    def test_unselected_clusters_get_zero(self):
        """Verify [[0.2, -0.1]] masked by [[1, 0]]."""
        assert_array_equal(prob_gradient(np.array([[0.2, -0.1]]), np.array([[1.0, 0.0]])), [[0.2, 0.0]])

    def test_all_selected_and_none_selected(self):
        """Verify ones pass the gradient and zeros block it."""
        grad = np.array([[0.3, -0.7], [1.1, 0.0]])
        assert_array_equal(prob_gradient(grad, np.ones((2, 2))), grad)
        assert_array_equal(prob_gradient(grad, np.zeros((2, 2))), np.zeros((2, 2)))

    def test_shape_mismatch(self):
        """Verify mismatched shapes raise ShapeError."""
        with pytest.raises(ShapeError):
            prob_gradient(np.ones((2, 2)), np.ones((2, 3)))


@pytest.mark.unit
class TestInitLayer:
    """Test init_layer function."""

    def test_probabilities_start_at_one_half(self, rng):
        """Verify theta = 0 so every P entry is exactly 0.5."""
        layer = init_layer(5, 3, 2, rng)
        assert_array_equal(layer.cluster_out.logits, np.zeros((3, 2)))
        assert_array_equal(layer.cluster_in.probabilities(), np.full((5, 2), 0.5))
        assert_array_equal(layer.bias, np.zeros(3))

    def test_same_seed_identical_layers(self):
        """Verify two inits from the same seed are bitwise identical."""
        first, second = init_layer(4, 6, 3, RngStream(9)), init_layer(4, 6, 3, RngStream(9))
        assert_array_equal(first.weights_tilde, second.weights_tilde)

    def test_weight_scale(self):
        """Verify W̃ has standard deviation close to sqrt(2 / d_in)."""
        layer = init_layer(50, 400, 4, RngStream(10))
        assert layer.weights_tilde.std() == pytest.approx(np.sqrt(2.0 / 50), rel=0.05)

    @pytest.mark.parametrize("k", [0, 7])
    def test_k_out_of_range(self, rng, k):
        """Verify k must lie in [1, max(d_in, d_out)]."""
        with pytest.raises(DomainError):
            init_layer(4, 6, k, rng)

    def test_shared_input_shape_checked(self, rng):
        """Verify a shared cluster object must match d_in and k."""
        lower = init_layer(4, 6, 2, rng)
        with pytest.raises(ShapeError):
            init_layer(5, 3, 2, rng, cluster_in=lower.cluster_out)
        upper = init_layer(6, 3, 2, rng, cluster_in=lower.cluster_out)
        assert upper.cluster_in is lower.cluster_out
        assert not upper.owns_input

    def test_initial_probability(self, rng):
        """Verify a chosen initial probability sets theta = logit(p)."""
        layer = init_layer(3, 3, 1, rng, probability=0.9, learnable=False)
        assert_allclose(layer.cluster_out.probabilities(), 0.9, atol=1e-15)
        assert not layer.cluster_out.learnable


@pytest.mark.unit
class TestForwardTrain:
    """Test the stochastic training pass."""

    def test_all_ones_assignments_recover_dense_layer(self, rng):
        """Verify P = 1 makes the mask all ones so the output is W̃x + b."""
        layer = init_layer(4, 3, 2, rng)
        layer.cluster_out.logits[:] = 40.0
        layer.cluster_in.logits[:] = 40.0
        layer.bias[:] = [0.1, -0.2, 0.3]
        x = rng.normal((4, 5))
        assert_allclose(layer.forward_train(x, rng), layer.weights_tilde @ x + layer.bias[:, None], rtol=1e-15)

    def test_zero_assignments_output_bias(self, rng):
        """Verify C = 0 leaves only the bias."""
        layer = init_layer(4, 3, 2, rng)
        layer.bias[:] = [1.0, 2.0, 3.0]
        layer.cluster_out.assign(np.zeros((3, 2)))
        layer.cluster_in.assign(np.zeros((4, 2)))
        output = layer.forward_train(rng.normal((4, 2)), draw=False)
        assert_array_equal(output, np.tile([[1.0], [2.0], [3.0]], (1, 2)))

    def test_matches_entrywise_evaluation(self):
        """Verify a seeded 4x4, k=2 pass against scripted entry-by-entry masking."""
        rng = RngStream(21)
        layer = _layer_with_probabilities(4, 4, 2, seed=21)
        x = rng.child("x").normal((4, 3))
        output = layer.forward_train(x, rng.child("draws"))
        c_out, c_in = layer.cluster_out.assignments, layer.cluster_in.assignments
        expected = np.zeros((4, 3))
        for t in range(4):
            for b in range(3):
                total = layer.bias[t]
                for s in range(4):
                    shared = sum(c_out[t, l] * c_in[s, l] for l in range(2))
                    total += layer.weights_tilde[t, s] * shared / 2 * x[s, b]
                expected[t, b] = total
        assert_allclose(output, expected, rtol=1e-12)

    def test_effective_weights_lie_in_masked_set(self):
        """Verify W ⊘ W̃ reproduces the cached mask wherever W̃ is nonzero."""
        layer = _layer_with_probabilities(6, 5, 4, seed=22)
        layer.forward_train(np.ones((6, 1)), RngStream(22))
        effective = layer.weights_tilde * layer.state.mask
        nonzero = layer.weights_tilde != 0.0
        assert_allclose(effective[nonzero] / layer.weights_tilde[nonzero], layer.state.mask[nonzero], rtol=1e-15)

    def test_sampling_requires_stream(self, rng):
        """Verify drawing without an RngStream is a logic error."""
        with pytest.raises(LogicError):
            init_layer(3, 3, 1, rng).forward_train(np.ones((3, 1)))

    def test_soft_assignments_use_probabilities(self, rng):
        """Verify sampling off installs C := P."""
        layer = init_layer(3, 2, 2, rng, sampling=False)
        layer.forward_train(np.ones((3, 1)), iteration=1)
        assert layer.cluster_out.relaxed
        assert_array_equal(layer.cluster_out.assignments, np.full((2, 2), 0.5))


@pytest.mark.unit
class TestForwardInfer:
    """Test the expected-mask inference pass."""

    @pytest.mark.parametrize("p", [0.3, 0.5, 0.9])
    @pytest.mark.parametrize("k", [1, 3])
    def test_uniform_probability_scales_weights_by_p_squared(self, rng, p, k):
        """Verify a shared constant p gives effective weights p² W̃."""
        layer = init_layer(4, 5, k, rng, probability=p, learnable=False)
        assert_allclose(layer.expected_weights(), p * p * layer.weights_tilde, rtol=1e-12, atol=1e-15)

    def test_binary_probabilities_match_training_pass(self, rng):
        """Verify saturated logits make inference equal the training pass."""
        layer = init_layer(5, 4, 2, rng)
        generator = np.random.default_rng(8)
        layer.cluster_out.logits[:] = np.where(generator.random((4, 2)) < 0.5, -40.0, 40.0)
        layer.cluster_in.logits[:] = np.where(generator.random((5, 2)) < 0.5, -40.0, 40.0)
        x = rng.normal((5, 3))
        assert_allclose(layer.forward_infer(x), layer.forward_train(x, rng), rtol=1e-12, atol=1e-12)

    def test_inference_is_deterministic_and_stateless(self, rng):
        """Verify repeated inference agrees and caches nothing."""
        layer = init_layer(3, 3, 2, rng)
        x = rng.normal((3, 2))
        assert_array_equal(layer.forward_infer(x), layer.forward_infer(x))
        assert layer.state is None
        assert layer.cluster_out.assignments is None

    @pytest.mark.slow
    @pytest.mark.parametrize("seed", range(5))
    def test_training_pass_averages_to_inference(self, seed):
        """Verify the Monte-Carlo mean of 10^5 training passes is within 3 standard errors of inference."""
        layer = _layer_with_probabilities(3, 2, 2, seed=100 + seed)
        x = RngStream(seed).child("x").normal((3, 1))
        draws = RngStream(seed).child("draws")
        samples = np.array([layer.forward_train(x, draws)[:, 0] for _ in range(100_000)])
        standard_error = samples.std(axis=0, ddof=1) / np.sqrt(len(samples))
        assert np.all(np.abs(samples.mean(axis=0) - layer.forward_infer(x)[:, 0]) <= 3.0 * standard_error + 1e-12)


@pytest.mark.unit
class TestBackward:
    """Test gradients of the Blockout layer."""

    def test_full_mask_reduces_to_dense_gradient(self, rng):
        """Verify k=1 with every node selected gives grad W̃ = δ aᵀ."""
        layer = init_layer(4, 3, 1, rng)
        layer.cluster_out.assign(np.ones((3, 1)))
        layer.cluster_in.assign(np.ones((4, 1)))
        x, delta = rng.normal((4, 2)), rng.normal((3, 2))
        layer.forward_train(x, draw=False)
        grads = layer.backward(delta)
        assert_allclose(grads.grad_weights_tilde, delta @ x.T, rtol=1e-15)
        assert_allclose(grads.delta_prev, layer.weights_tilde.T @ delta, rtol=1e-12)

    def test_zero_output_assignments_pass_no_gradient(self, rng):
        """Verify C_out = 0 zeroes grad W̃ and delta_prev."""
        layer = init_layer(4, 3, 2, rng)
        layer.cluster_out.assign(np.zeros((3, 2)))
        layer.cluster_in.assign(np.ones((4, 2)))
        layer.forward_train(rng.normal((4, 2)), draw=False)
        grads = layer.backward(rng.normal((3, 2)))
        assert_array_equal(grads.grad_weights_tilde, np.zeros((3, 4)))
        assert_array_equal(grads.delta_prev, np.zeros((4, 2)))

    def test_backward_without_forward(self, rng):
        """Verify backward with no cached state is a logic error."""
        with pytest.raises(LogicError):
            init_layer(3, 3, 1, rng).backward(np.ones((3, 1)))

    def test_state_is_consumed_once(self, rng):
        """Verify a second backward for one forward pass is rejected."""
        layer = init_layer(3, 3, 1, rng)
        layer.forward_train(np.ones((3, 1)), rng)
        layer.backward(np.ones((3, 1)))
        with pytest.raises(LogicError):
            layer.backward(np.ones((3, 1)))

    def test_stale_state_rejected(self, rng):
        """Verify redrawing assignments after forward invalidates the state."""
        layer = init_layer(3, 3, 1, rng)
        layer.forward_train(np.ones((3, 1)), rng)
        layer.cluster_out.draw(rng)
        with pytest.raises(LogicError):
            layer.backward(np.ones((3, 1)))

    @pytest.mark.parametrize("seed", range(24))
    def test_gradients_match_finite_differences(self, seed, finite_difference, relative_error):
        """Verify grad W̃, bias, C_out, C_in, delta_prev and theta against central differences (C fixed)."""
        generator = np.random.default_rng(seed)
        k = int(generator.choice([1, 2, 4]))
        d_in, d_out = int(generator.integers(max(2, k), 9)), int(generator.integers(max(2, k), 9))
        batch = int(generator.integers(1, 9))
        layer = _layer_with_probabilities(d_in, d_out, k, seed=seed)
        rng = RngStream(seed)
        x = rng.child("x").normal((d_in, batch))
        upstream = rng.child("upstream").normal((d_out, batch))

        layer.forward_train(x, rng.child("draws"))
        c_out, c_in = layer.cluster_out.assignments.copy(), layer.cluster_in.assignments.copy()
        grads = layer.backward(upstream)
        layer.forward_train(x, draw=False)
        layer.backpropagate(upstream)
        theta_grad_out = layer.cluster_out.logit_gradient()
        theta_grad_in = layer.cluster_in.logit_gradient()

        def loss_with(c_o: np.ndarray, c_i: np.ndarray, inputs: np.ndarray) -> float:
            layer.cluster_out.assign(c_o)
            layer.cluster_in.assign(c_i)
            return float(np.sum(upstream * layer.forward_train(inputs, draw=False)))

        def loss() -> float:
            return loss_with(c_out, c_in, x)

        assert relative_error(grads.grad_weights_tilde, finite_difference(loss, layer.weights_tilde, 1e-5)) < 1e-4
        assert relative_error(grads.grad_bias, finite_difference(loss, layer.bias, 1e-5)) < 1e-4

        c_out_real, c_in_real, x_real = c_out.copy(), c_in.copy(), x.copy()
        assert relative_error(
            grads.grad_c_out, finite_difference(lambda: loss_with(c_out_real, c_in, x), c_out_real, 1e-5)
        ) < 1e-4
        assert relative_error(
            grads.grad_c_in, finite_difference(lambda: loss_with(c_out, c_in_real, x), c_in_real, 1e-5)
        ) < 1e-4
        assert relative_error(
            grads.delta_prev, finite_difference(lambda: loss_with(c_out, c_in, x_real), x_real, 1e-5)
        ) < 1e-4

        p_out0, p_in0 = layer.cluster_out.probabilities(), layer.cluster_in.probabilities()

        def surrogate_loss() -> float:
            shift_out = tc.logistic(layer.cluster_out.logits) - p_out0
            shift_in = tc.logistic(layer.cluster_in.logits) - p_in0
            return loss_with(c_out + c_out * shift_out, c_in + c_in * shift_in, x)

        assert relative_error(theta_grad_out, finite_difference(surrogate_loss, layer.cluster_out.logits, 1e-5)) < 1e-4
        assert relative_error(theta_grad_in, finite_difference(surrogate_loss, layer.cluster_in.logits, 1e-5)) < 1e-4


@pytest.mark.unit
class TestClusterParameters:
    """Test the shared cluster parameter object."""

    def test_double_draw_in_one_iteration_rejected(self, rng):
        """Verify an interface cannot be sampled twice for the same iteration."""
        cluster = ClusterParameters("shared", np.zeros((4, 2)))
        cluster.draw(rng, epoch=1)
        with pytest.raises(LogicError):
            cluster.draw(rng, epoch=1)
        cluster.draw(rng, epoch=2)
        assert cluster.epoch == 2

    def test_gradient_accumulates_from_both_layers(self, rng):
        """Verify adjacent layers add their dL/dC into the one shared object."""
        lower = init_layer(3, 4, 2, rng)
        upper = init_layer(4, 2, 2, rng, cluster_in=lower.cluster_out)
        x = rng.normal((3, 2))
        hidden = lower.forward_train(x, rng, iteration=1)
        upper.forward_train(hidden, rng, iteration=1)
        upper_grads = upper.backward(np.ones((2, 2)))
        upper.forward_train(hidden, draw=False)
        lower_delta = upper.backpropagate(np.ones((2, 2)))
        lower_grads = lower.backward(lower_delta)
        lower.forward_train(x, draw=False)
        lower.backpropagate(lower_delta)
        assert_allclose(lower.cluster_out.grad, upper_grads.grad_c_in + lower_grads.grad_c_out, rtol=1e-12)

    def test_logits_clamped(self):
        """Verify clamp keeps theta within [-8, 8]."""
        cluster = ClusterParameters("c", np.array([[-20.0, 3.0, 20.0]]))
        cluster.clamp()
        assert_array_equal(cluster.logits, [[-8.0, 3.0, 8.0]])

    def test_relaxed_gradient_is_exact(self, rng):
        """Verify soft assignments pass dL/dC through unmasked."""
        cluster = ClusterParameters("c", np.zeros((2, 2)))
        cluster.relax(epoch=1)
        cluster.accumulate_grad(np.array([[1.0, -2.0], [0.5, 0.0]]))
        assert_allclose(cluster.logit_gradient(), np.array([[1.0, -2.0], [0.5, 0.0]]) * 0.25)
