"""Gradient-engine tests: closed-form oracles plus central finite differences."""

import numpy as np
import pytest

from tabcf import gradcore as gc
from tabcf.layers import BatchNorm, Dropout, Linear


def numeric_grad(build_loss, param, h=1e-4):
    """Central-difference gradient of a scalar loss wrt one tensor."""
    flat = param.data.reshape(-1)
    out = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = float(build_loss().data)
        flat[i] = orig - h
        down = float(build_loss().data)
        flat[i] = orig
        out[i] = (up - down) / (2.0 * h)
    return out.reshape(param.data.shape)


def analytic_grad(build_loss, param):
    with gc.Tape() as tape:
        loss = build_loss()
    return gc.differentiate(tape, loss, [param])[param].data


def rel_err(a, b):
    return np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1.0))


# ---------------------------------------------------------------------------
# closed-form cases

def test_relu_gradient_both_sides():
    x = gc.parameter(np.array([[2.0, -1.0, 3.5]]))
    with gc.Tape() as tape:
        loss = gc.tsum(gc.relu(x))
    g = gc.differentiate(tape, loss, [x])[x].data
    assert np.array_equal(g, np.array([[1.0, 0.0, 1.0]]))


def test_half_squared_norm_gradient_is_identity():
    rng = np.random.default_rng(3)
    x = gc.parameter(rng.normal(size=(4, 6)))
    with gc.Tape() as tape:
        loss = gc.scale(gc.sq_l2(x), 0.5)
    g = gc.differentiate(tape, loss, [x])[x].data
    np.testing.assert_array_equal(g, x.data)


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(7)
    z = gc.Tensor(rng.normal(scale=5.0, size=(50, 7)))
    s = gc.softmax(z)
    np.testing.assert_allclose(s.data.sum(axis=1), np.ones(50), atol=1e-9)
    assert np.all(s.data >= 0.0)


def test_fused_cross_entropy_matches_logsumexp_identity():
    rng = np.random.default_rng(11)
    z = rng.normal(scale=8.0, size=(40, 5))
    labels = rng.integers(0, 5, size=40)
    ce = gc.softmax_cross_entropy(gc.Tensor(z), labels).data
    lse = gc.logsumexp(gc.Tensor(z)).data
    picked = z[np.arange(40), labels]
    np.testing.assert_allclose(ce, lse - picked, atol=1e-9)


def test_fused_cross_entropy_stable_for_huge_logits():
    z = gc.Tensor(np.array([[1000.0, 0.0], [-1000.0, -999.0]]))
    ce = gc.softmax_cross_entropy(z, np.array([0, 1])).data
    assert np.all(np.isfinite(ce))
    np.testing.assert_allclose(ce[0], 0.0, atol=1e-9)
    np.testing.assert_allclose(ce[1], np.log1p(np.exp(-1.0)), atol=1e-9)


def test_unsupported_op_rejected_at_record_time():
    tape = gc.Tape()
    with pytest.raises(gc.GradError, match="unsupported op"):
        tape.record("matrix_inverse", (), gc.Tensor(0.0), lambda g: ())


def test_unused_parameter_gets_zero_gradient():
    x = gc.parameter(np.ones((2, 2)))
    unused = gc.parameter(np.ones(3))
    with gc.Tape() as tape:
        loss = gc.tsum(x)
    grads = gc.differentiate(tape, loss, [x, unused])
    np.testing.assert_array_equal(grads[unused].data, np.zeros(3))


def test_non_scalar_loss_rejected():
    x = gc.parameter(np.ones((2, 2)))
    with gc.Tape() as tape:
        y = gc.relu(x)
    with pytest.raises(gc.GradError, match="scalar"):
        gc.differentiate(tape, y, [x])


def test_reused_tensor_accumulates_gradient():
    x = gc.parameter(np.array([[3.0]]))
    with gc.Tape() as tape:
        loss = gc.tsum(gc.add(gc.mul(x, x), x))  # x^2 + x -> 2x + 1
    g = gc.differentiate(tape, loss, [x])[x].data
    np.testing.assert_allclose(g, [[7.0]])


# ---------------------------------------------------------------------------
# per-op finite differences

def _fd_case(name, make):
    rng = np.random.default_rng(abs(hash(name)) % (2**32))
    return make(rng)


OP_CASES = {}


def op_case(fn):
    OP_CASES[fn.__name__[len("case_"):]] = fn
    return fn


@op_case
def case_affine(rng):
    x = gc.parameter(rng.normal(size=(5, 4)))
    w = gc.parameter(rng.normal(size=(4, 3)))
    b = gc.parameter(rng.normal(size=3))
    return [x, w, b], lambda: gc.tsum(gc.tanh(gc.affine(x, w, b)))


@op_case
def case_masked_affine(rng):
    x = gc.parameter(rng.normal(size=(5, 4)))
    w = gc.parameter(rng.normal(size=(4, 6)))
    b = gc.parameter(rng.normal(size=6))
    mask = (rng.random((4, 6)) < 0.5).astype(float)
    return [x, w, b], lambda: gc.sq_l2(gc.masked_affine(x, w, b, mask))


@op_case
def case_mul_broadcast(rng):
    a = gc.parameter(rng.normal(size=(4, 3)))
    b = gc.parameter(rng.normal(size=(1, 3)))
    return [a, b], lambda: gc.tsum(gc.mul(a, b))


@op_case
def case_sub_broadcast(rng):
    a = gc.parameter(rng.normal(size=(4, 3)))
    b = gc.parameter(rng.normal(size=3))
    return [a, b], lambda: gc.sq_l2(gc.sub(a, b))


@op_case
def case_sigmoid_exp_sqrt(rng):
    x = gc.parameter(rng.uniform(0.5, 2.0, size=(3, 3)))
    return [x], lambda: gc.tsum(gc.sigmoid(gc.exp(gc.sqrt(x))))


@op_case
def case_hinge(rng):
    # keep points away from the kink so finite differences are valid
    a = gc.parameter(rng.normal(size=(6,)) + np.where(rng.random(6) < 0.5, 2.0, -2.0))
    b = gc.parameter(np.zeros(6))
    return [a, b], lambda: gc.tsum(gc.hinge(a, b))


@op_case
def case_l1(rng):
    vals = rng.normal(size=(4, 3))
    vals = np.where(np.abs(vals) < 0.2, 0.5, vals)  # avoid the kink at 0
    x = gc.parameter(vals)
    return [x], lambda: gc.l1(x)


@op_case
def case_logsumexp(rng):
    x = gc.parameter(rng.normal(size=(5, 4)))
    return [x], lambda: gc.tsum(gc.logsumexp(x))


@op_case
def case_softmax(rng):
    x = gc.parameter(rng.normal(size=(5, 4)))
    c = gc.Tensor(rng.normal(size=(5, 4)))
    return [x], lambda: gc.tsum(gc.mul(gc.softmax(x), c))


@op_case
def case_cross_entropy(rng):
    x = gc.parameter(rng.normal(size=(6, 4)))
    labels = rng.integers(0, 4, size=6)
    return [x], lambda: gc.tmean(gc.softmax_cross_entropy(x, labels))


@op_case
def case_mean_axis(rng):
    x = gc.parameter(rng.normal(size=(5, 4)))
    return [x], lambda: gc.tsum(gc.tanh(gc.tmean(x, axis=1)))


@op_case
def case_sq_l2_axis(rng):
    x = gc.parameter(rng.normal(size=(5, 4)))
    return [x], lambda: gc.tsum(gc.sqrt(gc.sq_l2(x, axis=1)))


@op_case
def case_concat(rng):
    a = gc.parameter(rng.normal(size=(3, 2)))
    b = gc.parameter(rng.normal(size=(3, 4)))
    return [a, b], lambda: gc.sq_l2(gc.tanh(gc.concat([a, b], axis=1)))


@op_case
def case_select_rows(rng):
    x = gc.parameter(rng.normal(size=(6, 3)))
    idx = np.array([0, 2, 2, 5])  # repeated row exercises accumulation
    return [x], lambda: gc.sq_l2(gc.select_rows(x, idx))


@op_case
def case_slice_cols(rng):
    x = gc.parameter(rng.normal(size=(4, 6)))
    return [x], lambda: gc.sq_l2(gc.slice_cols(x, 1, 4))


@op_case
def case_batchnorm_train(rng):
    x = gc.parameter(rng.normal(size=(8, 3)))
    bn = BatchNorm(3, "bn")
    return [x, bn.gamma, bn.beta], lambda: gc.sq_l2(gc.tanh(bn(x, training=True)))


@op_case
def case_batchnorm_eval(rng):
    x = gc.parameter(rng.normal(size=(8, 3)))
    bn = BatchNorm(3, "bn")
    bn.state.running_mean = rng.normal(size=3)
    bn.state.running_var = rng.uniform(0.5, 2.0, size=3)
    return [x, bn.gamma, bn.beta], lambda: gc.sq_l2(bn(x, training=False))


@op_case
def case_dropout(rng):
    x = gc.parameter(rng.normal(size=(6, 4)))

    def loss():
        keyed = np.random.Generator(np.random.Philox(key=[9, 1]))
        return gc.sq_l2(gc.dropout(x, 0.25, keyed))

    return [x], loss


@pytest.mark.parametrize("name", sorted(OP_CASES))
def test_op_matches_finite_differences(name):
    params, build_loss = _fd_case(name, OP_CASES[name])
    for p in params:
        a = analytic_grad(build_loss, p)
        n = numeric_grad(build_loss, p)
        assert rel_err(a, n) < 1e-4, f"{name}: grad mismatch for {p.name or p.uid}"


def test_two_layer_network_fd_many_seeds():
    worst = 0.0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        lin1 = Linear(4, 8, rng, "l1")
        lin2 = Linear(8, 3, rng, "l2")
        x = gc.Tensor(rng.normal(size=(5, 4)))
        labels = rng.integers(0, 3, size=5)
        params = lin1.parameters() + lin2.parameters()

        def build_loss():
            return gc.tmean(gc.softmax_cross_entropy(lin2(gc.relu(lin1(x))), labels))

        worst = max(worst, gc.finite_diff_check(build_loss, params))
    assert worst < 1e-4


# ---------------------------------------------------------------------------
# optimizer

def test_adam_zero_gradient_is_fixed_point():
    p = gc.parameter(np.array([1.5, -2.0]), name="p")
    state = gc.AdamState([p])
    before = p.data.copy()
    gc.adam_step([p], {p: gc.Tensor(np.zeros(2))}, state, lr=0.1)
    np.testing.assert_array_equal(p.data, before)


def test_adam_first_step_closed_form():
    p = gc.parameter(np.array([0.0]), name="p")
    state = gc.AdamState([p])
    gc.adam_step([p], {p: gc.Tensor(np.array([1.0]))}, state, lr=0.1)
    expected = -0.1 * (1.0 / (1.0 + 1e-8))
    np.testing.assert_allclose(p.data, [expected], rtol=0, atol=1e-15)


def test_adam_constant_gradient_moves_lr_per_step():
    # with g == 1 every step, bias correction cancels and each step is lr/(1+eps)
    p = gc.parameter(np.array([0.0]), name="p")
    state = gc.AdamState([p])
    for _ in range(3):
        gc.adam_step([p], {p: gc.Tensor(np.array([1.0]))}, state, lr=0.1)
    np.testing.assert_allclose(p.data, [-3 * 0.1 / (1.0 + 1e-8)], atol=1e-12)


def test_adam_aborts_on_nonfinite_update():
    p = gc.parameter(np.array([0.0]), name="theta.w")
    state = gc.AdamState([p])
    with pytest.raises(gc.GradError, match="theta.w"):
        gc.adam_step([p], {p: gc.Tensor(np.array([np.inf]))}, state, lr=0.1)


def test_cosine_schedule_endpoints_and_midpoint():
    assert gc.cosine_lr(0, 100, 1e-3, 1e-5) == pytest.approx(1e-3)
    assert gc.cosine_lr(100, 100, 1e-3, 1e-5) == pytest.approx(1e-5)
    assert gc.cosine_lr(50, 100, 1e-3, 1e-5) == pytest.approx((1e-3 + 1e-5) / 2)
    # past the horizon the rate stays clamped at the floor
    assert gc.cosine_lr(150, 100, 1e-3, 1e-5) == pytest.approx(1e-5)


def test_adam_trajectory_is_bit_identical_across_runs():
    def run():
        rng = np.random.default_rng(42)
        lin = Linear(3, 2, rng, "l")
        x = gc.Tensor(rng.normal(size=(8, 3)))
        labels = rng.integers(0, 2, size=8)
        state = gc.AdamState(lin.parameters())
        for step in range(5):
            with gc.Tape() as tape:
                loss = gc.tmean(gc.softmax_cross_entropy(lin(x), labels))
            grads = gc.differentiate(tape, loss, lin.parameters())
            gc.adam_step(lin.parameters(), grads, state,
                         gc.cosine_lr(step, 5, 1e-3, 1e-5))
        return lin.w.data.copy(), lin.b.data.copy()

    w1, b1 = run()
    w2, b2 = run()
    assert np.array_equal(w1, w2) and np.array_equal(b1, b2)


# ---------------------------------------------------------------------------
# layer behaviors

def test_batchnorm_train_output_is_standardized():
    rng = np.random.default_rng(0)
    bn = BatchNorm(4, "bn")
    x = gc.Tensor(rng.normal(loc=3.0, scale=2.0, size=(256, 4)))
    out = bn(x, training=True).data
    np.testing.assert_allclose(out.mean(axis=0), 0.0, atol=1e-9)
    np.testing.assert_allclose(out.var(axis=0), 1.0, atol=1e-3)


def test_batchnorm_running_stats_converge_to_batch_stats():
    rng = np.random.default_rng(1)
    bn = BatchNorm(2, "bn")
    x = gc.Tensor(rng.normal(loc=-1.0, scale=0.5, size=(512, 2)))
    for _ in range(200):
        bn(x, training=True)
    np.testing.assert_allclose(bn.state.running_mean, x.data.mean(axis=0), atol=1e-6)
    np.testing.assert_allclose(bn.state.running_var, x.data.var(axis=0), atol=1e-6)


def test_dropout_mask_depends_only_on_seed_layer_step():
    x = gc.Tensor(np.ones((4, 4)))

    def mask_at(seed, layer, step):
        d = Dropout(0.5, seed=seed, layer_id=layer)
        d.step = step
        return d(x, training=True).data

    np.testing.assert_array_equal(mask_at(1, 2, 3), mask_at(1, 2, 3))
    assert not np.array_equal(mask_at(1, 2, 3), mask_at(1, 2, 4))
    assert not np.array_equal(mask_at(1, 2, 3), mask_at(1, 3, 3))
    assert not np.array_equal(mask_at(1, 2, 3), mask_at(2, 2, 3))


def test_dropout_eval_mode_is_identity():
    x = gc.Tensor(np.full((3, 3), 2.5))
    d = Dropout(0.5, seed=0, layer_id=0)
    np.testing.assert_array_equal(d(x, training=False).data, x.data)


def test_dropout_preserves_expectation():
    x = gc.Tensor(np.ones((2000, 50)))
    d = Dropout(0.25, seed=7, layer_id=0)
    out = d(x, training=True).data
    assert abs(out.mean() - 1.0) < 0.01
