import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edgeedit import numeric as nm


def _store(rng, *shapes):
    store = nm.ParamStore()
    for i, shape in enumerate(shapes):
        store.add(f"p{i}", rng.normal(size=shape))
    return store, [store[f"p{i}"] for i in range(len(shapes))]


def _weighted(x, weights):
    """Scalar sum(x @ weights); depends on every entry of x with distinct weights."""
    return nm.total(nm.matmul(x, nm.constant(weights)))


def _square(t):
    """Elementwise square of a column vector, built from primitives."""
    return nm.concat([nm.matmul(nm.embedding(t, [i]), nm.embedding(t, [i])) for i in range(t.shape[0])], axis=0)


dims = st.integers(1, 5)


@settings(max_examples=25, deadline=None)
@given(n=dims, k=dims, m=dims, seed=st.integers(0, 10_000))
def test_matmul_affine_gradients(n, k, m, seed):
    rng = np.random.default_rng(seed)
    store, (x, w, b) = _store(rng, (n, k), (k, m), (m,))
    weights = rng.normal(size=(m, 2))
    assert nm.grad_check(lambda: _weighted(nm.affine(x, w, b), weights), store, n_coords=30, seed=seed) < 1e-4


@settings(max_examples=25, deadline=None)
@given(n=dims, a=dims, b=dims, seed=st.integers(0, 10_000))
def test_concat_gradients(n, a, b, seed):
    rng = np.random.default_rng(seed)
    store, (x, y) = _store(rng, (n, a), (n, b))
    weights = rng.normal(size=(a + b, 3))
    assert nm.grad_check(lambda: _weighted(nm.concat([x, y], axis=1), weights), store, n_coords=20, seed=seed) < 1e-4


@settings(max_examples=25, deadline=None)
@given(rows=dims, d=dims, seed=st.integers(0, 10_000))
def test_embedding_gradients(rows, d, seed):
    rng = np.random.default_rng(seed)
    store, (table,) = _store(rng, (rows, d))
    ids = rng.integers(0, rows, size=6)
    weights = rng.normal(size=(d, 2))
    assert nm.grad_check(lambda: _weighted(nm.embedding(table, ids), weights), store, n_coords=20, seed=seed) < 1e-4


@settings(max_examples=25, deadline=None)
@given(rows=st.integers(2, 6), d=dims, seed=st.integers(0, 10_000))
def test_max_pool_gradients(rows, d, seed):
    rng = np.random.default_rng(seed)
    store, (x,) = _store(rng, (rows, d))
    groups = [[0], list(range(rows)), [rows - 1, 0]]
    weights = rng.normal(size=(d, 2))
    assert nm.grad_check(lambda: _weighted(nm.max_pool(x, groups), weights), store, n_coords=20, seed=seed) < 1e-4


@settings(max_examples=25, deadline=None)
@given(n=dims, d=st.integers(2, 6), seed=st.integers(0, 10_000))
def test_softmax_and_nll_gradients(n, d, seed):
    rng = np.random.default_rng(seed)
    store, (x,) = _store(rng, (n, d))
    targets = rng.integers(0, d, size=n)
    weights = rng.normal(size=(d, 1))
    assert nm.grad_check(lambda: nm.nll_loss(nm.log_softmax(x), targets), store, n_coords=20, seed=seed) < 1e-4
    assert nm.grad_check(lambda: nm.nll_loss(nm.log_softmax(x), targets, "mean"), store, n_coords=20, seed=seed) < 1e-4
    assert nm.grad_check(lambda: _weighted(nm.softmax(x), weights), store, n_coords=20, seed=seed) < 1e-4


@settings(max_examples=25, deadline=None)
@given(n=dims, m=dims, di=dims, dj=dims, k=dims, seed=st.integers(0, 10_000))
def test_bilinear_gradients(n, m, di, dj, k, seed):
    rng = np.random.default_rng(seed)
    store, (a, w, b) = _store(rng, (n, di), (k, di, dj), (m, dj))
    heads = rng.integers(0, n, size=4)
    tails = rng.integers(0, m, size=4)
    weights = rng.normal(size=(k, 2))
    f = lambda: _weighted(nm.gather_pairs(nm.bilinear(a, w, b), heads, tails), weights)  # noqa: E731
    assert nm.grad_check(f, store, n_coords=30, seed=seed) < 1e-4


@settings(max_examples=25, deadline=None)
@given(n=dims, d=dims, seed=st.integers(0, 10_000))
def test_relu_and_broadcast_add_gradients(n, d, seed):
    rng = np.random.default_rng(seed)
    store, (x, b) = _store(rng, (n, d), (d,))
    # keep inputs away from the kink
    x.data = np.where(np.abs(x.data) < 0.1, 0.5, x.data)
    weights = rng.normal(size=(d, 2))
    assert nm.grad_check(lambda: _weighted(nm.relu(nm.add(x, nm.constant(np.zeros(d)))), weights), store, n_coords=20, seed=seed) < 1e-4
    assert nm.grad_check(lambda: _weighted(nm.add(x, b), weights), store, n_coords=20, seed=seed) < 1e-4


def test_bilinear_matches_einsum():
    rng = np.random.default_rng(3)
    a, w, b = rng.normal(size=(3, 4)), rng.normal(size=(5, 4, 2)), rng.normal(size=(6, 2))
    out = nm.bilinear(nm.constant(a), nm.constant(w), nm.constant(b)).data
    np.testing.assert_allclose(out, np.einsum("ni,kij,mj->nmk", a, w, b), atol=1e-12)


def test_quadratic_gradient_is_exact():
    store = nm.ParamStore()
    theta = store.add("theta", np.array([[0.5], [-1.5], [2.0]]))
    store.zero_grad()
    nm.total(_square(theta)).backward()
    np.testing.assert_allclose(theta.grad, 2 * theta.data, atol=1e-12)
    assert nm.grad_check(lambda: nm.total(_square(theta)), store, floor=1e-6) < 1e-6


def test_constant_function_has_zero_gradient():
    store = nm.ParamStore()
    store.add("w", np.ones((2, 2)))
    assert nm.grad_check(lambda: nm.total(nm.constant(np.ones(3))), store) == 0.0


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(0)
    p = nm.softmax(nm.constant(rng.normal(scale=30, size=(8, 17)))).data
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-6)


def test_max_pool_single_row_is_identity():
    x = nm.constant(np.array([[1.0, -2.0], [3.0, 4.0]]))
    np.testing.assert_array_equal(nm.max_pool(x, [[1]]).data, [[3.0, 4.0]])


def test_max_pool_rejects_empty_group():
    with pytest.raises(nm.DimensionError):
        nm.max_pool(nm.constant(np.ones((2, 2))), [[]])


def test_dropout_rate_zero_and_eval_are_identity():
    x = nm.constant(np.arange(6.0).reshape(2, 3))
    assert nm.dropout(x, 0.0, True, np.random.default_rng(0)) is x
    assert nm.dropout(x, 0.5, False) is x


def test_dropout_is_inverted_and_seeded():
    x = nm.constant(np.ones((200, 50)))
    a = nm.dropout(x, 0.4, True, np.random.default_rng(7)).data
    b = nm.dropout(x, 0.4, True, np.random.default_rng(7)).data
    np.testing.assert_array_equal(a, b)
    assert set(np.unique(a)) <= {0.0, 1.0 / 0.6}
    assert abs(a.mean() - 1.0) < 0.05


def test_dropout_needs_rng_in_training():
    with pytest.raises(ValueError):
        nm.dropout(nm.constant(np.ones(3)), 0.5, True)


def test_shape_mismatch_names_primitive():
    with pytest.raises(nm.DimensionError, match="matmul"):
        nm.matmul(nm.constant(np.ones((2, 3))), nm.constant(np.ones((2, 3))))
    with pytest.raises(nm.DimensionError, match="concat"):
        nm.concat([nm.constant(np.ones((2, 3))), nm.constant(np.ones((3, 3)))], axis=1)
    with pytest.raises(nm.DimensionError, match="bilinear"):
        nm.bilinear(nm.constant(np.ones((2, 3))), nm.constant(np.ones((1, 2, 2))), nm.constant(np.ones((2, 2))))


def test_primitives_do_not_mutate_inputs():
    rng = np.random.default_rng(1)
    a = nm.Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    before = a.data.copy()
    out = nm.nll_loss(nm.log_softmax(nm.relu(nm.concat([a, a], axis=1))), [0, 1, 2])
    out.backward()
    np.testing.assert_array_equal(a.data, before)


def test_gradients_accumulate_across_uses():
    store = nm.ParamStore()
    w = store.add("w", np.array([[2.0]]))
    store.zero_grad()
    nm.total(nm.add(w, w)).backward()
    np.testing.assert_array_equal(w.grad, [[2.0]])


def test_adam_minimises_quadratic():
    store = nm.ParamStore()
    theta = store.add("theta", np.array([[3.0]]))
    for _ in range(2000):
        nm.total(_square(theta)).backward()
        nm.adam_step(store, lr=0.01)
    assert abs(theta.data[0, 0]) < 1e-3
    assert store.step == 2000


def test_adam_zero_gradient_leaves_parameters():
    store = nm.ParamStore()
    theta = store.add("theta", np.array([1.0, -2.0]))
    theta.grad = np.zeros(2)
    nm.adam_step(store)
    np.testing.assert_array_equal(theta.data, [1.0, -2.0])
    assert theta.grad is None
    assert store.step == 1


def test_adam_first_step_moves_by_lr():
    store = nm.ParamStore()
    theta = store.add("theta", np.array([1.0, -2.0]))
    theta.grad = np.array([0.3, -5.0])
    nm.adam_step(store, lr=0.1)
    # bias-corrected first step is lr * sign(g) up to eps
    np.testing.assert_allclose(theta.data, [0.9, -1.9], atol=1e-6)


def test_adam_without_gradients_fails():
    store = nm.ParamStore()
    store.add("theta", np.ones(2))
    with pytest.raises(ValueError):
        nm.adam_step(store)


def test_duplicate_parameter_name_rejected():
    store = nm.ParamStore()
    store.add("w", np.ones(1))
    with pytest.raises(KeyError):
        store.add("w", np.ones(1))


def test_checkpoint_roundtrip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(5)
    store, (w, b) = _store(rng, (3, 2), (2,))
    w.grad = rng.normal(size=(3, 2))
    b.grad = rng.normal(size=2)
    nm.adam_step(store, lr=0.01)
    path = tmp_path / "ckpt.npz"
    nm.save_checkpoint(path, store, {"note": "x", "n": 3})
    loaded, meta = nm.load_checkpoint(path)
    assert meta == {"note": "x", "n": 3}
    assert list(loaded.params) == list(store.params)
    assert loaded.step == store.step
    for name in store.params:
        np.testing.assert_array_equal(loaded[name].data, store[name].data)
        np.testing.assert_array_equal(loaded.adam[name].m, store.adam[name].m)
        np.testing.assert_array_equal(loaded.adam[name].v, store.adam[name].v)
        assert loaded.adam[name].step == store.adam[name].step


def test_backward_requires_scalar():
    with pytest.raises(ValueError):
        nm.Tensor(np.ones(3), requires_grad=True).backward()


def test_grad_check_tops_up_from_every_parameter():
    store = nm.ParamStore()
    tensors = [store.add(name, np.linspace(-1, 1, size)) for name, size in (("a", 1), ("b", 60), ("c", 60))]
    f = lambda: nm.total(nm.concat(tensors, axis=0))  # noqa: E731
    assert nm.grad_check(f, store, n_coords=100) < 1e-6
