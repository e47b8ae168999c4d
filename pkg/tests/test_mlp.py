import numpy as np
import numpy.testing as npt
import pytest

from grand.augmentation import drop_node
from grand.errors import InvalidParam, NumericalError, ShapeError, StateError
from grand.losses import fused_softmax_ce_grad, probs_grad_to_logits_grad, supervised_loss
from grand.mlp import (AdamState, DropoutMasks, ModelParams, adam_step, backward,
                       forward, glorot_init, load_params, save_params)
from grand.rng import Rng
from grand.sparse import mixed_order_propagate
from grand.trainer import onehot

from conftest import random_normalized_graph


def zero_params(d, h, c, use_bn=False):
    p = glorot_init(d, h, c, Rng(0), use_bn)
    p.w1[:] = 0
    p.w2[:] = 0
    return p


def numerical_grad(loss_fn, arr, eps=1e-5):
    """Central finite differences over one parameter array, in place."""
    g = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        orig = arr[idx]
        arr[idx] = orig + eps
        f_plus = loss_fn()
        arr[idx] = orig - eps
        f_minus = loss_fn()
        arr[idx] = orig
        g[idx] = (f_plus - f_minus) / (2 * eps)
        it.iternext()
    return g


def max_rel_error(analytic, numeric):
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-4)
    return float(np.max(np.abs(analytic - numeric) / denom))


class TestGlorotInit:
    def test_unit_fan_variance_target(self):
        # d = h = 1 makes the target variance 2/(1+1) = 1.
        p = glorot_init(1, 1, 1, Rng(0))
        assert p.w1.shape == (1, 1)

    def test_biases_zero(self):
        p = glorot_init(4, 3, 2, Rng(1), use_bn=True)
        assert np.all(p.b1 == 0) and np.all(p.b2 == 0)
        assert np.all(p.bn.gamma == 1) and np.all(p.bn.beta == 0)

    def test_empirical_variance(self):
        d = h = 316  # ~1e5 samples in w1
        p = glorot_init(d, h, 2, Rng(2))
        target = 2.0 / (d + h)
        assert abs(p.w1.var() - target) < 0.05 * target

    def test_invalid_sizes(self):
        with pytest.raises(InvalidParam):
            glorot_init(0, 3, 2, Rng(0))


class TestForward:
    def test_zero_weights_uniform(self):
        p = zero_params(3, 4, 5)
        x = np.random.default_rng(0).standard_normal((6, 3))
        probs, _ = forward(x, p, "eval", 0.0, 0.0, False)
        npt.assert_allclose(probs, np.full((6, 5), 0.2), atol=1e-15)

    def test_eval_deterministic_and_pure(self):
        p = glorot_init(3, 4, 2, Rng(0), use_bn=True)
        rm = p.bn.running_mean.copy()
        x = np.random.default_rng(1).standard_normal((5, 3))
        one, cache = forward(x, p, "eval", 0.5, 0.5, True)
        two, _ = forward(x, p, "eval", 0.5, 0.5, True)
        npt.assert_array_equal(one, two)
        assert cache is None
        npt.assert_array_equal(p.bn.running_mean, rm)

    def test_hand_forward_single_node(self):
        # Pencil-and-paper chain: x=[1,-1] through fixed weights.
        p = zero_params(2, 2, 2)
        p.w1[:] = [[0.5, -0.25], [0.75, 0.5]]
        p.b1[:] = [0.3, 0.8]
        p.w2[:] = [[1.0, 2.0], [3.0, -1.0]]
        x = np.array([[1.0, -1.0]])
        # z1 = [-0.25, -0.75] + [0.3, 0.8] = [0.05, 0.05]; relu keeps it;
        # logits = [0.2, 0.05]; softmax by explicit scalars:
        e0, e1 = np.exp(0.2), np.exp(0.05)
        expected = np.array([[e0 / (e0 + e1), e1 / (e0 + e1)]])
        probs, _ = forward(x, p, "eval", 0.0, 0.0, False)
        npt.assert_allclose(probs, expected, atol=1e-15)

    def test_rows_sum_to_one_strictly_positive(self):
        p = glorot_init(4, 8, 3, Rng(3))
        x = 10 * np.random.default_rng(2).standard_normal((50, 4))
        probs, _ = forward(x, p, "eval", 0.0, 0.0, False)
        npt.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-9)
        assert np.all(probs > 0)

    def test_train_mode_returns_cache_and_replays(self):
        p = glorot_init(3, 4, 2, Rng(4))
        x = np.random.default_rng(3).standard_normal((6, 3))
        probs, cache = forward(x, p, "train", 0.5, 0.5, False, Rng(11))
        replay, _ = forward(x, p, "train", 0.5, 0.5, False, masks=cache.masks)
        npt.assert_array_equal(probs, replay)

    def test_batchnorm_normalizes_batch(self):
        p = glorot_init(5, 4, 2, Rng(5), use_bn=True)
        x = np.random.default_rng(4).standard_normal((40, 5))
        _, cache = forward(x, p, "train", 0.0, 0.0, True, Rng(0))
        assert np.all(np.abs(cache.bn_x_hat.mean(axis=0)) < 1e-8)
        assert np.all(np.abs(cache.bn_x_hat.var(axis=0) - 1.0) < 1e-6)

    def test_non_finite_raises(self):
        p = glorot_init(2, 2, 2, Rng(6))
        p.w1[0, 0] = 1e308
        x = np.full((2, 2), 1e308)
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(NumericalError):
                forward(x, p, "eval", 0.0, 0.0, False)

    def test_shape_mismatch(self):
        p = glorot_init(3, 2, 2, Rng(7))
        with pytest.raises(ShapeError):
            forward(np.ones((2, 5)), p, "eval", 0.0, 0.0, False)

    def test_bad_mode(self):
        p = glorot_init(2, 2, 2, Rng(8))
        with pytest.raises(InvalidParam):
            forward(np.ones((1, 2)), p, "test", 0.0, 0.0, False)


class TestBackward:
    def test_zero_upstream_zero_grads(self):
        p = glorot_init(3, 4, 2, Rng(0))
        x = np.random.default_rng(0).standard_normal((5, 3))
        _, cache = forward(x, p, "train", 0.0, 0.0, False, Rng(1))
        g = backward(cache, np.zeros((5, 2)), p)
        for arr in g.named().values():
            assert np.all(arr == 0)

    def test_softmax_ce_identity(self):
        # d(CE)/d(logits) on one labeled row is probs - onehot.
        probs = np.array([[0.2, 0.5, 0.3]])
        y = np.array([[0.0, 1.0, 0.0]])
        g = fused_softmax_ce_grad(probs, y, np.array([0]), s=1)
        npt.assert_allclose(g, probs - y, atol=1e-15)

    def test_cache_params_mismatch(self):
        p = glorot_init(2, 2, 2, Rng(0))
        q = glorot_init(2, 2, 2, Rng(1))
        x = np.ones((3, 2))
        _, cache = forward(x, p, "train", 0.0, 0.0, False, Rng(2))
        with pytest.raises(StateError):
            backward(cache, np.zeros((3, 2)), q)

    @pytest.mark.parametrize("use_bn", [False, True])
    def test_finite_difference_ce_only(self, use_bn):
        # 5-node toy, no dropout: cross-entropy against fixed labels.
        gen = np.random.default_rng(10)
        p = glorot_init(4, 3, 3, Rng(20), use_bn=use_bn)
        x = gen.standard_normal((5, 4))
        labels = np.array([0, 2, 1, 0, 1])
        y1h = onehot(labels, 3)
        lab = np.arange(5)

        def loss():
            probs, _ = forward(x, p, "train", 0.0, 0.0, use_bn, Rng(0))
            return supervised_loss([probs], y1h, lab)[0]

        probs, cache = forward(x, p, "train", 0.0, 0.0, use_bn, Rng(0))
        analytic = backward(cache, fused_softmax_ce_grad(probs, y1h, lab, 1), p)
        for name, arr in p.trainable():
            fd = numerical_grad(loss, arr)
            assert max_rel_error(analytic.named()[name], fd) < 1e-4, name


@pytest.mark.parametrize("use_bn", [False, True])
def test_full_pipeline_gradient_check(use_bn):
    """Frozen-mask objective: S=2 augmentations, both losses, all params."""
    n, d, h, c, s_aug, delta, lam, temp = 6, 4, 3, 3, 2, 0.5, 0.8, 0.5
    k = 2
    a_hat = random_normalized_graph(n, 0.5, 0)
    gen = np.random.default_rng(1)
    x = gen.standard_normal((n, d))
    labels = np.array([0, 1, 2, -1, -1, -1])
    y1h = onehot(labels, c)
    lab = np.array([0, 1, 2])
    params = glorot_init(d, h, c, Rng(2), use_bn=use_bn)
    # Keep every ReLU input away from the kink at 0: fully masked rows
    # would otherwise sit exactly on it, where finite differences and the
    # fixed subgradient legitimately disagree.
    params.b1[:] = 0.1 * np.random.default_rng(5).standard_normal(h)

    seed_rng = Rng(3)
    node_masks = [seed_rng.bernoulli(1 - delta, n) for _ in range(s_aug)]
    in_masks = [seed_rng.bernoulli(0.5, (n, d)) for _ in range(s_aug)]
    hid_masks = [seed_rng.bernoulli(0.5, (n, h)) for _ in range(s_aug)]

    def predictions():
        preds, caches = [], []
        for s in range(s_aug):
            x_bar = mixed_order_propagate(a_hat, drop_node(x, delta, mask=node_masks[s]), k)
            probs, cache = forward(x_bar, params, "train", 0.5, 0.5, use_bn,
                                   masks=DropoutMasks(in_masks[s], hid_masks[s]))
            preds.append(probs)
            caches.append(cache)
        return preds, caches

    # The consistency target is a stop-gradient: freeze it at the base point.
    base_preds, _ = predictions()
    center0 = sum(base_preds) / s_aug
    center0 = center0 ** (1 / temp)
    center0 = center0 / center0.sum(axis=1, keepdims=True)

    def loss():
        preds, _ = predictions()
        sup = supervised_loss(preds, y1h, lab)[0]
        con = sum(float(np.square(p - center0).sum()) for p in preds) / (s_aug * n)
        return sup + lam * con

    preds, caches = predictions()
    for cache in caches:
        assert np.abs(cache.relu_in).min() > 1e-4  # FD step stays on one side
    analytic = None
    for probs, cache in zip(preds, caches):
        dlogits = fused_softmax_ce_grad(probs, y1h, lab, s_aug)
        dcon = (2.0 / (s_aug * n)) * (probs - center0)
        dlogits += probs_grad_to_logits_grad(probs, lam * dcon)
        g = backward(cache, dlogits, params)
        if analytic is None:
            analytic = g
        else:
            analytic.add_(g)

    worst = 0.0
    for name, arr in params.trainable():
        fd = numerical_grad(loss, arr)
        worst = max(worst, max_rel_error(analytic.named()[name], fd))
    assert worst < 1e-4


class TestAdam:
    def test_zero_grads_no_change(self):
        p = glorot_init(2, 3, 2, Rng(0))
        w1_before = p.w1.copy()
        state = AdamState.for_params(p)
        g = backward_zero_grads(p)
        adam_step(p, g, state, lr=0.1, weight_decay=0.0)
        npt.assert_array_equal(p.w1, w1_before)
        assert state.t == 1

    def test_single_scalar_first_step(self):
        # One parameter, gradient 1: bias-corrected ratio is exactly 1,
        # so the step is lr / (1 + eps).
        p = glorot_init(1, 1, 1, Rng(0))
        p.w1[:] = 0.5
        state = AdamState.for_params(p)
        g = backward_zero_grads(p)
        g.w1[:] = 1.0
        adam_step(p, g, state, lr=0.1)
        expected = 0.5 - 0.1 * 1.0 / (1.0 + 1e-8)
        npt.assert_allclose(p.w1[0, 0], expected, atol=1e-16)

    def test_weight_decay_equals_grad_on_scaled_param(self):
        # wd-only update must match an explicit gradient of wd * W.
        p1 = glorot_init(2, 2, 2, Rng(1))
        p2 = ModelParams(p1.w1.copy(), p1.b1.copy(), p1.w2.copy(), p1.b2.copy())
        s1, s2 = AdamState.for_params(p1), AdamState.for_params(p2)
        g1 = backward_zero_grads(p1)
        g2 = backward_zero_grads(p2)
        g2.w1[:] = 5e-4 * p2.w1
        g2.w2[:] = 5e-4 * p2.w2
        adam_step(p1, g1, s1, lr=0.01, weight_decay=5e-4)
        adam_step(p2, g2, s2, lr=0.01, weight_decay=0.0)
        npt.assert_array_equal(p1.w1, p2.w1)
        npt.assert_array_equal(p1.w2, p2.w2)

    def test_decay_never_touches_biases(self):
        p = glorot_init(2, 2, 2, Rng(2))
        p.b1[:] = 3.0
        state = AdamState.for_params(p)
        adam_step(p, backward_zero_grads(p), state, lr=0.1, weight_decay=0.5)
        npt.assert_array_equal(p.b1, np.full(2, 3.0))


def backward_zero_grads(p: ModelParams):
    from grand.mlp import ParamGrads
    gamma = beta = None
    if p.bn is not None:
        gamma, beta = np.zeros_like(p.bn.gamma), np.zeros_like(p.bn.beta)
    return ParamGrads(np.zeros_like(p.w1), np.zeros_like(p.b1),
                      np.zeros_like(p.w2), np.zeros_like(p.b2), gamma, beta)


class TestCheckpoint:
    @pytest.mark.parametrize("use_bn", [False, True])
    def test_roundtrip_value_exact(self, tmp_path, use_bn):
        p = glorot_init(3, 4, 2, Rng(9), use_bn=use_bn)
        if use_bn:
            p.bn.running_mean[:] = np.random.default_rng(0).standard_normal(4)
        path = tmp_path / "model.json"
        save_params(p, path)
        q = load_params(path)
        npt.assert_array_equal(p.w1, q.w1)
        npt.assert_array_equal(p.b1, q.b1)
        npt.assert_array_equal(p.w2, q.w2)
        npt.assert_array_equal(p.b2, q.b2)
        if use_bn:
            npt.assert_array_equal(p.bn.running_mean, q.bn.running_mean)
            npt.assert_array_equal(p.bn.running_var, q.bn.running_var)
