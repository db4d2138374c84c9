import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gtattack import autodiff as ad
from gtattack.autodiff import Tensor, backward, finite_difference
from gtattack.optim import AdamState, adam_step


def grad_of(loss, leaf):
    return backward(loss)[leaf].data


# ---------------------------------------------------------------------------
# forward examples


def test_softmax_symmetric():
    y = ad.softmax(Tensor([0.0, 0.0]))
    np.testing.assert_allclose(y.data, [0.5, 0.5], atol=1e-15)


def test_log_one():
    assert ad.tlog(Tensor(1.0)).item() == 0.0


def test_matmul_shape():
    out = ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 1))))
    assert out.shape == (2, 1)


def test_matmul_shape_mismatch_names_primitive():
    with pytest.raises(ad.ShapeError, match=r"matmul.*\(2, 3\).*\(2, 1\)"):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 1))))


def test_log_negative_rejected():
    with pytest.raises(ValueError, match="log"):
        ad.tlog(Tensor(-0.5))


def test_softmax_all_neg_inf_row_is_zero():
    x = np.array([[0.0, 1.0], [-np.inf, -np.inf]])
    y = ad.softmax(Tensor(x))
    assert np.isfinite(y.data).all()
    np.testing.assert_allclose(y.data[1], [0.0, 0.0])
    np.testing.assert_allclose(y.data[0].sum(), 1.0)


def test_exp_of_neg_inf_is_zero():
    assert ad.texp(Tensor(-np.inf)).item() == 0.0


# ---------------------------------------------------------------------------
# backward examples


def test_square_gradient():
    x = Tensor(3.0, requires_grad=True)
    loss = ad.mul(x, x)
    assert grad_of(loss, x) == pytest.approx(6.0)


def test_softmax_sum_gradient_is_zero():
    x = Tensor(np.array([0.3, -1.2, 2.0]), requires_grad=True)
    loss = ad.tsum(ad.softmax(x))
    np.testing.assert_allclose(grad_of(loss, x), np.zeros(3), atol=1e-12)


def test_log_gradient():
    x = Tensor(2.0, requires_grad=True)
    assert grad_of(ad.tlog(x), x) == pytest.approx(0.5)


def test_non_scalar_loss_rejected():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ad.ShapeError, match="scalar"):
        backward(ad.mul(x, x))


def test_unreachable_leaf_absent_from_map():
    x = Tensor(1.0, requires_grad=True)
    y = Tensor(1.0, requires_grad=True)
    gmap = backward(ad.mul(x, x))
    assert y not in gmap


def test_log_zero_with_zero_upstream_gradient_is_zero():
    # log(0) = -inf feeding a softmax that ignores the coordinate: the
    # gradient must come back zero, not NaN.
    a = Tensor(np.array([1.0, 0.0]), requires_grad=True)
    y = ad.softmax(ad.tlog(a))
    loss = ad.tsum(ad.mul(y, Tensor(np.array([1.0, 3.0]))))
    g = grad_of(loss, a)
    assert np.isfinite(g).all()


# ---------------------------------------------------------------------------
# finite-difference oracle


def test_fd_square():
    g = finite_difference(lambda x: float(x[0] ** 2), np.array([3.0]), 1e-4)
    assert g[0] == pytest.approx(6.0, abs=1e-6)


def test_fd_constant():
    g = finite_difference(lambda x: 1.5, np.array([0.3, -2.0]), 1e-4)
    np.testing.assert_allclose(g, np.zeros(2))


def test_fd_tanh_at_zero():
    g = finite_difference(lambda x: float(np.tanh(x[0])), np.array([0.0]), 1e-5)
    assert g[0] == pytest.approx(1.0, abs=1e-8)


def test_fd_epsilon_validation():
    with pytest.raises(ValueError):
        finite_difference(lambda x: 0.0, np.array([1.0]), 0.0)


# ---------------------------------------------------------------------------
# gradcheck of every differentiable primitive against the oracle

RNG = np.random.default_rng(7)


def _gradcheck(build, x0, rel=1e-4, eps=1e-5):
    """Compare reverse-mode gradient with central differences at x0."""
    x0 = np.asarray(x0, dtype=np.float64)

    def loss_np(arr):
        leaf = Tensor(arr.copy(), requires_grad=True)
        return build(leaf).item()

    leaf = Tensor(x0.copy(), requires_grad=True)
    got = grad_of(build(leaf), leaf)
    want = finite_difference(loss_np, x0, eps)
    scale = np.maximum(np.abs(want), 1.0)
    np.testing.assert_allclose(got, want, atol=0, rtol=0, err_msg="gradcheck") if False else None
    assert np.max(np.abs(got - want) / scale) <= rel, (got, want)


def _rand(shape, low=-2.0, high=2.0):
    return RNG.uniform(low, high, size=shape)


def _mix(t):
    # deterministic weights so the loss mixes all coordinates
    w = np.linspace(0.5, 1.5, num=int(np.prod(t.shape)) or 1).reshape(t.shape)
    return ad.tsum(ad.mul(t, Tensor(w)))


# constants are frozen via default args so each loss is deterministic
PRIMITIVE_CASES = [
    ("add", lambda x, c=Tensor(_rand((3, 4))): _mix(ad.add(x, c)), (3, 4)),
    ("add_bcast", lambda x, c=Tensor(_rand((1, 4))): _mix(ad.add(x, c)), (3, 4)),
    ("sub", lambda x, c=Tensor(_rand((3, 4))): _mix(ad.sub(c, x)), (3, 4)),
    ("mul", lambda x, c=Tensor(_rand((3, 4))): _mix(ad.mul(x, c)), (3, 4)),
    ("div", lambda x, c=Tensor(_rand((3, 4))): _mix(ad.div(c, ad.add(x, Tensor(np.full((3, 4), 3.0))))), (3, 4)),
    ("neg", lambda x: _mix(ad.neg(x)), (5,)),
    ("matmul", lambda x, c=Tensor(_rand((4, 2))): _mix(ad.matmul(x, c)), (3, 4)),
    ("bmm", lambda x, c=Tensor(_rand((2, 4, 3))): _mix(ad.bmm(x, c)), (2, 3, 4)),
    ("transpose", lambda x: _mix(ad.transpose(x)), (3, 4)),
    ("reshape", lambda x: _mix(ad.reshape(x, (4, 3))), (3, 4)),
    ("concat", lambda x, c=Tensor(_rand((2, 4))): _mix(ad.concat([x, c], axis=0)), (3, 4)),
    ("sum_axis", lambda x: _mix(ad.tsum(x, axis=1)), (3, 4)),
    ("mean", lambda x: _mix(ad.tmean(x, axis=0)), (3, 4)),
    ("exp", lambda x: _mix(ad.texp(x)), (3, 4)),
    ("log", lambda x: _mix(ad.tlog(ad.add(x, Tensor(np.full((3, 4), 4.0))))), (3, 4)),
    ("tanh", lambda x: _mix(ad.ttanh(x)), (3, 4)),
    ("softmax", lambda x: _mix(ad.softmax(x)), (3, 4)),
    ("rsqrt_safe", lambda x: _mix(ad.rsqrt_safe(ad.add(x, Tensor(np.full((6,), 4.0))))), (6,)),
    ("prod_lastdim", lambda x: _mix(ad.prod_lastdim(x)), (3, 4)),
    ("gather_rows", lambda x: _mix(ad.gather_rows(x, np.array([0, 2, 2]))), (3, 4)),
    ("take_pairs", lambda x: _mix(ad.take_pairs(x, np.array([0, 1, 2]), np.array([1, 1, 3]))), (3, 4)),
    ("scatter_pairs", lambda x: _mix(ad.scatter_pairs(x, (4, 4), np.array([0, 1, 2]), np.array([1, 2, 3]))), (3,)),
    ("submatrix", lambda x: _mix(ad.submatrix(x, np.array([0, 2]))), (4, 4)),
    ("where", lambda x, m=_rand((3, 4)) > 0: _mix(ad.where(m, x, ad.mul(x, x))), (3, 4)),
    ("masked_fill", lambda x, m=_rand((3, 4)) > 0.5: _mix(ad.masked_fill(x, m, 2.5)), (3, 4)),
    ("outer_add", lambda x, c=Tensor(_rand((5, 4))): _mix(ad.outer_add(x, c)), (3, 4)),
]


@pytest.mark.parametrize("name,build,shape", PRIMITIVE_CASES, ids=[c[0] for c in PRIMITIVE_CASES])
def test_primitive_gradients_match_finite_differences(name, build, shape):
    for _ in range(4):
        _gradcheck(build, _rand(shape))


def test_relu_gradient_away_from_kink():
    # sample |x| > 1e-2 to stay clear of the kink
    for _ in range(100):
        x0 = RNG.uniform(0.02, 2.0, size=(8,)) * RNG.choice([-1.0, 1.0], size=8)
        _gradcheck(lambda x: _mix(ad.relu(x)), x0)


def test_relu_kink_uses_left_derivative():
    x = Tensor(np.array([0.0]), requires_grad=True)
    assert grad_of(ad.tsum(ad.relu(x)), x)[0] == 0.0


def test_stop_gradient_blocks_backward():
    x = Tensor(np.array([2.0]), requires_grad=True)
    y = ad.tsum(ad.mul(ad.stop_gradient(x), x))
    assert grad_of(y, x)[0] == pytest.approx(2.0)  # only the live branch


# ---------------------------------------------------------------------------
# softmax properties


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.floats(min_value=-30, max_value=30), min_size=2, max_size=8),
    st.floats(min_value=-10, max_value=10),
)
def test_softmax_rows_sum_to_one_and_shift_invariant(row, shift):
    x = np.array(row)
    y1 = ad.softmax(Tensor(x)).data
    y2 = ad.softmax(Tensor(x + shift)).data
    assert abs(y1.sum() - 1.0) <= 1e-12
    assert np.max(np.abs(y1 - y2)) <= 1e-12


# ---------------------------------------------------------------------------
# tape determinism and clearing


def _run_tape_pass(seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.normal(size=(5, 5)), requires_grad=True)
    w = Tensor(rng.normal(size=(5, 3)), requires_grad=True)
    h = ad.relu(ad.matmul(x, w))
    loss = ad.tsum(ad.mul(ad.softmax(h), h))
    g = backward(loss)
    return loss.item(), g[x].data.copy(), g[w].data.copy()


def test_replay_is_bit_identical():
    l1, gx1, gw1 = _run_tape_pass(123)
    l2, gx2, gw2 = _run_tape_pass(123)
    assert l1 == l2
    assert (gx1 == gx2).all()
    assert (gw1 == gw2).all()


def test_tape_clear_invalidates_gradients():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    with ad.Tape():
        loss = ad.tsum(ad.mul(x, x))
    with pytest.raises(RuntimeError, match="cleared"):
        backward(loss)


def test_tape_scope_does_not_leak_outer_graph():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    outer = ad.tsum(ad.mul(x, x))
    with ad.Tape():
        ad.tsum(ad.mul(x, x))
    assert backward(outer)[x].data[1] == pytest.approx(4.0)


# ---------------------------------------------------------------------------
# adam


def _params(vals):
    return {k: Tensor(np.array(v), requires_grad=True) for k, v in vals.items()}


def test_adam_zero_grad_leaves_params_unchanged():
    p = _params({"w": [1.0, -2.0]})
    before = p["w"].data.copy()
    adam_step(p, {"w": np.zeros(2)}, AdamState(), lr=0.1)
    np.testing.assert_allclose(p["w"].data, before)


def test_adam_first_step_is_signed_lr():
    p = _params({"w": [0.0, 0.0]})
    adam_step(p, {"w": np.array([0.5, -3.0])}, AdamState(), lr=0.01)
    np.testing.assert_allclose(p["w"].data, [-0.01, 0.01], atol=1e-8)


def test_adam_deterministic():
    runs = []
    for _ in range(2):
        p = _params({"w": [1.0, 2.0, 3.0]})
        st_ = AdamState()
        for t in range(5):
            adam_step(p, {"w": np.array([0.1, -0.2, 0.3]) * (t + 1)}, st_, lr=0.05)
        runs.append(p["w"].data.copy())
    assert (runs[0] == runs[1]).all()


def test_adam_missing_grad_treated_as_zero():
    p = _params({"w": [1.0], "b": [2.0]})
    adam_step(p, {"w": np.array([1.0])}, AdamState(), lr=0.1)
    np.testing.assert_allclose(p["b"].data, [2.0])
