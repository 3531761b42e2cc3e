import unittest

import numpy as np

from redactseq.errors import ConfigError, DegenerateBatchError, DimensionError, OptimizerError, TracingError
from redactseq.model import init_params
from redactseq.numerics import (
    AdamState,
    GradientCheck,
    Tape,
    Tensor,
    adam_step,
    backward,
    check_gradients,
    clip_by_global_norm,
    dropout,
    embedding,
    gelu,
    global_norm,
    gradient_errors,
    layer_norm,
    matmul,
    softmax_rows,
    tsum,
    weighted_cross_entropy,
)
from redactseq.training import Batch, batch_loss
from tests.conftest import tiny_config


class Operations_Test(unittest.TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(3)

    def test_matmul(self):
        result = matmul([[1.0, 2.0], [3.0, 4.0]], [[1.0], [1.0]])
        np.testing.assert_array_equal(result.data, [[3.0], [7.0]])

    def test_matmul_batchedBroadcast(self):
        a = self.rng.normal(size=(2, 3, 4, 5))
        b = self.rng.normal(size=(5, 6))
        np.testing.assert_allclose(matmul(a, b).data, a @ b)

    def test_matmul_innerMismatch(self):
        with self.assertRaises(DimensionError) as ctx:
            matmul(np.ones((2, 3)), np.ones((4, 5)))
        self.assertIn("(2, 3)", str(ctx.exception))
        self.assertIn("(4, 5)", str(ctx.exception))

    def test_softmaxRows_sumToOne(self):
        x = self.rng.normal(scale=30, size=(7, 11))
        y = softmax_rows(x).data
        np.testing.assert_allclose(y.sum(axis=-1), 1.0, atol=1e-12)
        self.assertTrue((y >= 0).all())

    def test_softmaxRows_hugeValues_finite(self):
        y = softmax_rows([[1e300, 0.0, -1e300]]).data
        self.assertTrue(np.isfinite(y).all())
        np.testing.assert_allclose(y, [[1.0, 0.0, 0.0]])

    def test_layerNorm_normalizesRows(self):
        x = self.rng.normal(loc=5, scale=3, size=(4, 8))
        y = layer_norm(x, np.ones(8), np.zeros(8), eps=0.0).data
        np.testing.assert_allclose(y.mean(axis=-1), 0.0, atol=1e-12)
        np.testing.assert_allclose(y.var(axis=-1), 1.0, atol=1e-10)

    def test_layerNorm_affine(self):
        x = self.rng.normal(size=(3, 4))
        plain = layer_norm(x, np.ones(4), np.zeros(4)).data
        affine = layer_norm(x, np.full(4, 2.0), np.full(4, 1.0)).data
        np.testing.assert_allclose(affine, 2 * plain + 1)

    def test_layerNorm_widthMismatch(self):
        with self.assertRaises(DimensionError):
            layer_norm(np.ones((2, 4)), np.ones(3), np.zeros(3))

    def test_gelu_knownValues(self):
        y = gelu([0.0, 100.0, -100.0]).data
        np.testing.assert_allclose(y, [0.0, 100.0, 0.0], atol=1e-12)

    def test_dropout_notTraining_isIdentity(self):
        x = Tensor(self.rng.normal(size=(3, 3)))
        self.assertIs(dropout(x, 0.5, None, training=False), x)

    def test_dropout_training_keepsExpectation(self):
        x = np.ones((200, 200))
        y = dropout(x, 0.25, np.random.default_rng(0), training=True).data
        self.assertAlmostEqual(y.mean(), 1.0, delta=0.02)
        self.assertEqual(set(np.unique(y).round(6)), {0.0, round(1 / 0.75, 6)})

    def test_dropout_trainingWithoutGenerator(self):
        with self.assertRaises(ConfigError):
            dropout(np.ones(3), 0.5, None, training=True)


class WeightedCrossEntropy_Test(unittest.TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(5)

    def naive(self, logits, targets, weights):
        total = 0.0
        for row, target, weight in zip(logits, targets, weights):
            log_probs = row - np.log(np.exp(row - row.max()).sum()) - row.max()
            total += weight * -log_probs[target]
        return total / sum(weights)

    def test_weighted_matchesNaive(self):
        logits = self.rng.normal(size=(6, 9))
        targets = self.rng.integers(0, 9, size=6)
        weights = self.rng.uniform(0, 3, size=6)
        loss = weighted_cross_entropy(logits, targets, weights).item()
        self.assertAlmostEqual(loss, self.naive(logits, targets, weights), places=12)

    def test_unitWeights_equalsMean(self):
        logits = self.rng.normal(size=(2, 3, 5))
        targets = self.rng.integers(0, 5, size=(2, 3))
        flat = logits.reshape(-1, 5)
        log_probs = flat - np.log(np.exp(flat).sum(axis=-1, keepdims=True))
        expected = -log_probs[np.arange(6), targets.reshape(-1)].mean()
        loss = weighted_cross_entropy(logits, targets, np.ones((2, 3))).item()
        self.assertAlmostEqual(loss, expected, places=12)

    def test_zeroWeights_degenerate(self):
        with self.assertRaises(DegenerateBatchError):
            weighted_cross_entropy(np.zeros((2, 3)), [0, 1], [0.0, 0.0])

    def test_targetOutOfVocabulary(self):
        with self.assertRaises(DimensionError):
            weighted_cross_entropy(np.zeros((2, 3)), [0, 3], [1.0, 1.0])

    def test_negativeWeight(self):
        with self.assertRaises(ConfigError):
            weighted_cross_entropy(np.zeros((2, 3)), [0, 1], [1.0, -1.0])

    def test_zeroWeightPositions_getNoGradient(self):
        logits = Tensor(self.rng.normal(size=(3, 4)), requires_grad=True)
        with Tape():
            loss = weighted_cross_entropy(logits, [1, 2, 3], [1.0, 0.0, 2.0])
        grad = backward(loss, {"logits": logits})["logits"]
        np.testing.assert_array_equal(grad[1], 0.0)


class Backward_Test(unittest.TestCase):
    def test_product(self):
        a = Tensor([[1.0, 2.0]], requires_grad=True)
        b = Tensor([[3.0], [4.0]], requires_grad=True)
        with Tape():
            loss = tsum(matmul(a, b))
        grads = backward(loss, dict(a=a, b=b))
        np.testing.assert_array_equal(grads["a"], [[3.0, 4.0]])
        np.testing.assert_array_equal(grads["b"], [[1.0], [2.0]])

    def test_reusedValue_accumulates(self):
        x = Tensor([3.0], requires_grad=True)
        with Tape():
            loss = tsum(x * x + x)
        np.testing.assert_array_equal(backward(loss, dict(x=x))["x"], [7.0])

    def test_broadcastAdd_reduces(self):
        x = Tensor(np.ones((4, 3)), requires_grad=True)
        bias = Tensor(np.zeros(3), requires_grad=True)
        with Tape():
            loss = tsum(x + bias)
        np.testing.assert_array_equal(backward(loss, dict(bias=bias))["bias"], [4.0, 4.0, 4.0])

    def test_embedding_scatterAdds(self):
        table = Tensor(np.zeros((4, 2)), requires_grad=True)
        with Tape():
            loss = tsum(embedding(table, [[1, 1, 3]]))
        np.testing.assert_array_equal(backward(loss, dict(t=table))["t"], [[0, 0], [2, 2], [0, 0], [1, 1]])

    def test_nonContributing_getsZero(self):
        used = Tensor([1.0], requires_grad=True)
        unused = Tensor([[5.0, 6.0]], requires_grad=True)
        with Tape():
            loss = tsum(used * 2.0)
        np.testing.assert_array_equal(backward(loss, dict(unused=unused))["unused"], [[0.0, 0.0]])

    def test_untraced_raises(self):
        x = Tensor([1.0], requires_grad=True)
        loss = tsum(x * x)
        with self.assertRaises(TracingError):
            backward(loss, dict(x=x))

    def test_nonScalar_raises(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with Tape():
            loss = x * x
        with self.assertRaises(TracingError):
            backward(loss, dict(x=x))

    def test_constantsAreNotRecorded(self):
        with Tape() as tape:
            tsum(Tensor([1.0]) * 2.0)
        self.assertEqual(len(tape), 0)


class Adam_Test(unittest.TestCase):
    def setUp(self):
        self.params = dict(w=np.array([1.0, -2.0, 0.5]))
        self.grads = dict(w=np.array([0.1, -4.0, 0.0]))

    def test_firstStep_movesByLearningRate(self):
        state = AdamState.initial(self.params, learning_rate=0.01)
        new, state = adam_step(self.params, self.grads, state)
        np.testing.assert_allclose(new["w"], [0.99, -1.99, 0.5], atol=1e-6)
        self.assertEqual(state.step_count, 1)

    def test_doesNotMutateInputs(self):
        state = AdamState.initial(self.params)
        before = self.params["w"].copy()
        adam_step(self.params, self.grads, state)
        np.testing.assert_array_equal(self.params["w"], before)
        np.testing.assert_array_equal(state.first_moment["w"], 0.0)
        self.assertEqual(state.step_count, 0)

    def test_secondMoment_nonNegative(self):
        state = AdamState.initial(self.params)
        for _ in range(3):
            self.params, state = adam_step(self.params, self.grads, state)
        self.assertTrue((state.second_moment["w"] >= 0).all())
        self.assertEqual(state.step_count, 3)

    def test_nonFiniteGradient_namesParameter(self):
        state = AdamState.initial(self.params)
        with self.assertRaises(OptimizerError) as ctx:
            adam_step(self.params, dict(w=np.array([np.nan, 0.0, 0.0])), state)
        self.assertEqual(ctx.exception.parameter, "w")

    def test_nonPositiveLearningRate(self):
        with self.assertRaises(ConfigError):
            AdamState(learning_rate=0.0)
        state = AdamState.initial(self.params)
        with self.assertRaises(ConfigError):
            adam_step(self.params, self.grads, state, learning_rate=-1.0)

    def test_defaults(self):
        state = AdamState()
        self.assertEqual(
            (state.learning_rate, state.beta1, state.beta2, state.epsilon),
            (0.002, 0.9, 0.999, 1e-8),
        )

    def test_clipByGlobalNorm(self):
        grads = dict(a=np.array([3.0]), b=np.array([[4.0]]))
        clipped, norm = clip_by_global_norm(grads, 1.0)
        self.assertEqual(norm, 5.0)
        self.assertAlmostEqual(global_norm(clipped), 1.0, places=12)
        unchanged, _ = clip_by_global_norm(grads, None)
        np.testing.assert_array_equal(unchanged["a"], [3.0])


class GradientCheck_Test(unittest.TestCase):
    def assertGradientsMatch(self, checks):
        for name, error in gradient_errors(checks).items():
            entries = [(check.index, check.analytic, check.numeric) for check in checks if check.name == name]
            self.assertLess(error, 1e-4, f"{name}: {entries}")

    def test_gradientErrors_perTensor(self):
        checks = [
            GradientCheck("w", (0,), 1.0, 1.0),
            GradientCheck("w", (1,), 2e-4, 2.0003e-4),
            GradientCheck("b", (0,), 3.0, 4.0),
        ]
        errors = gradient_errors(checks)
        self.assertLess(errors["w"], 1e-4)
        self.assertGreater(checks[1].error, 1e-4)
        self.assertAlmostEqual(errors["b"], 0.25)

    def test_gradientErrors_zeroGradients(self):
        checks = [GradientCheck("w", (0,), 0.0, 1e-12), GradientCheck("b", (0,), 0.0, 0.0)]
        self.assertEqual(gradient_errors(checks), dict(w=0.0, b=0.0))

    def test_layerNormSoftmaxGelu(self):
        rng = np.random.default_rng(1)
        params = dict(
            x=rng.normal(size=(3, 5)),
            w=rng.normal(size=(5, 4)),
            gain=rng.normal(size=4),
            bias=rng.normal(size=4),
        )

        def loss_fn(p):
            h = gelu(matmul(p["x"], p["w"]))
            return tsum(softmax_rows(layer_norm(h, p["gain"], p["bias"])) * np.arange(4.0))

        self.assertGradientsMatch(check_gradients(loss_fn, params))

    def test_transformerLoss(self):
        config = tiny_config(50)
        params = init_params(config, seed=11)
        rng = np.random.default_rng(2)
        mask = np.array([[True] * 6, [True] * 4 + [False] * 2])
        src = np.where(mask, rng.integers(4, 50, size=(2, 6)), 0)
        tgt = np.where(mask & (rng.random((2, 6)) < 0.7), src, 4)
        tgt = np.where(mask, tgt, 0)
        dec_in = np.concatenate([np.ones((2, 1), dtype=np.int64), tgt[:, :-1]], axis=1)
        weights = np.where(mask, np.where(tgt == 4, 5.0, 1.0), 0.0)
        batch = Batch(src, tgt, dec_in, mask, weights, (0, 1), 0)

        checks = check_gradients(lambda p: batch_loss(batch, p, config), dict(params), step=1e-5)
        self.assertEqual({check.name for check in checks}, set(params))
        self.assertGradientsMatch(checks)


# vim: et ts=4 sw=4
