import numpy as np
import pytest

from gacd.neural import (
    ParamStore,
    Tape,
    Tensor,
    backward,
    clamp,
    concat,
    constant,
    dense,
    embedding,
    exp,
    finite_difference_check,
    gather_cols,
    gather_rows,
    gelu,
    glorot,
    graphormer_layer,
    layer_norm,
    leaky_relu,
    load_checkpoint,
    log,
    masked_softmax,
    matmul,
    mean_pool,
    minimum,
    mlp,
    mp_layer,
    relu,
    reshape,
    save_checkpoint,
    segment_softmax,
    segment_sum,
    set_default_dtype,
    sigmoid,
    spmm,
    sqrt,
    square,
    tanh,
    tmean,
    transpose,
    tsum,
)
from gacd.neural.tensor import default_dtype

RNG = np.random.default_rng(1234)


def fd_on(fn, arrays, h=1e-5, tol=1e-6):
    store = ParamStore()
    tensors = [store.add(f"p{i}", a) for i, a in enumerate(arrays)]
    err = finite_difference_check(lambda: fn(*tensors), store, h=h)
    assert err < tol, f"fd mismatch {err}"
    return err


# ---------------------------------------------------------------------------
# tape mechanics


def test_tape_records_and_replays_once():
    a = Tensor(RNG.normal(size=(3, 3)), requires_grad=True)
    b = Tensor(RNG.normal(size=(3, 3)), requires_grad=True)
    with Tape() as tape:
        y = tsum(matmul(a, b) + a)
    assert len(tape) == 3  # matmul, add, sum
    backward(tape, y)
    assert a.grad is not None and b.grad is not None
    with pytest.raises(RuntimeError):
        backward(tape, y)


def test_no_tape_means_no_recording():
    a = Tensor(RNG.normal(size=(2, 2)), requires_grad=True)
    y = tsum(square(a))
    assert y.grad is None and a.grad is None


def test_untracked_inputs_record_nothing():
    a = Tensor(RNG.normal(size=(2, 2)))  # requires_grad False
    with Tape() as tape:
        tsum(square(a) * 3.0)
    assert len(tape) == 0


def test_fanout_accumulates():
    a = Tensor(np.array([[2.0]]), requires_grad=True)
    with Tape() as tape:
        y = tsum(a * a + a)  # dy/da = 2a + 1 = 5
    backward(tape, y)
    assert a.grad[0, 0] == pytest.approx(5.0)


def test_backward_requires_scalar():
    a = Tensor(RNG.normal(size=(2, 2)), requires_grad=True)
    with Tape() as tape:
        y = square(a)
    with pytest.raises(ValueError):
        backward(tape, y)


# ---------------------------------------------------------------------------
# op gradients


def test_matmul_grads_closed_form():
    a = Tensor(RNG.normal(size=(4, 3)), requires_grad=True)
    b = Tensor(RNG.normal(size=(3, 5)), requires_grad=True)
    c = RNG.normal(size=(4, 5))
    with Tape() as tape:
        y = tsum(matmul(a, b) * constant(c))
    backward(tape, y)
    np.testing.assert_allclose(a.grad, c @ b.data.T, atol=1e-12)
    np.testing.assert_allclose(b.grad, a.data.T @ c, atol=1e-12)


def test_broadcast_bias_grad():
    x = Tensor(RNG.normal(size=(6, 4)), requires_grad=True)
    b = Tensor(RNG.normal(size=(4,)), requires_grad=True)
    with Tape() as tape:
        y = tsum(x + b)
    backward(tape, y)
    np.testing.assert_allclose(b.grad, np.full(4, 6.0))


@pytest.mark.parametrize(
    "fn",
    [
        lambda x: tsum(relu(x)),
        lambda x: tsum(leaky_relu(x, 0.2)),
        lambda x: tsum(gelu(x)),
        lambda x: tsum(sigmoid(x)),
        lambda x: tsum(tanh(x)),
        lambda x: tsum(exp(x)),
        lambda x: tsum(square(x)),
        lambda x: tsum(clamp(x, -0.5, 0.5)),
        lambda x: tsum(square(x) / (square(x) + 1.0)),
        lambda x: tmean(x * x, axis=0)
        and tsum(tmean(x * x, axis=0)),
    ],
)
def test_pointwise_fd(fn):
    x = RNG.normal(size=(3, 4))
    x = x + np.sign(x) * 0.6  # keep away from relu/clamp kinks
    fd_on(fn, [x])


def test_log_sqrt_fd_positive_domain():
    x = RNG.uniform(0.5, 2.0, size=(3, 4))
    fd_on(lambda t: tsum(log(t)), [x])
    fd_on(lambda t: tsum(sqrt(t)), [x])


def test_minimum_picks_branch():
    a = Tensor(np.array([[1.0, 5.0]]), requires_grad=True)
    b = Tensor(np.array([[2.0, 2.0]]), requires_grad=True)
    with Tape() as tape:
        y = tsum(minimum(a, b))
    backward(tape, y)
    np.testing.assert_allclose(a.grad, [[1.0, 0.0]])
    np.testing.assert_allclose(b.grad, [[0.0, 1.0]])


def test_clamp_zero_grad_outside():
    x = Tensor(np.array([[2.0, 0.0, -2.0]]), requires_grad=True)
    with Tape() as tape:
        y = tsum(clamp(x, -1.0, 1.0))
    backward(tape, y)
    np.testing.assert_allclose(x.grad, [[0.0, 1.0, 0.0]])


def test_structural_ops_fd():
    x = RNG.normal(size=(5, 3))
    idx = np.array([0, 2, 2, 4])
    seg = np.array([0, 0, 1, 2, 2])
    fd_on(lambda t: tsum(gather_rows(t, idx) * 2.0), [x])
    fd_on(lambda t: tsum(segment_sum(square(t), seg, 3)), [x])
    fd_on(lambda t: tsum(square(transpose(t))), [x])
    fd_on(lambda t: tsum(square(reshape(t, (3, 5)))), [x])
    fd_on(lambda t: tsum(gather_cols(square(t), slice(1, 3))), [x])
    fd_on(
        lambda a, b: tsum(square(concat([a, b], axis=1))),
        [RNG.normal(size=(4, 2)), RNG.normal(size=(4, 3))],
    )


def test_embedding_fd_and_accumulation():
    table = RNG.normal(size=(6, 3))
    idx = np.array([[0, 1], [1, 5]])
    fd_on(lambda t: tsum(square(embedding(t, idx))), [table])
    # repeated index accumulates
    t = Tensor(np.ones((3, 1)), requires_grad=True)
    with Tape() as tape:
        y = tsum(embedding(t, np.array([1, 1, 1])))
    backward(tape, y)
    np.testing.assert_allclose(t.grad, [[0.0], [3.0], [0.0]])


def test_spmm_matches_dense():
    import scipy.sparse as sp

    a = sp.random(6, 6, density=0.4, random_state=3, format="csr")
    x = Tensor(RNG.normal(size=(6, 4)), requires_grad=True)
    with Tape() as tape:
        y = tsum(square(spmm(a, x)))
    backward(tape, y)
    dense_a = a.toarray()
    expected = 2 * dense_a.T @ (dense_a @ x.data)
    np.testing.assert_allclose(x.grad, expected, atol=1e-10)


# ---------------------------------------------------------------------------
# layers


def test_masked_softmax_contracts():
    logits = Tensor(RNG.normal(size=(4, 6)), requires_grad=True)
    mask = np.ones((4, 6))
    mask[1, 3:] = 0
    mask[2, :2] = 0
    p = masked_softmax(logits, mask)
    np.testing.assert_allclose(p.data.sum(axis=1), np.ones(4), atol=1e-12)
    assert (p.data[1, 3:] == 0.0).all()
    assert (p.data[2, :2] == 0.0).all()
    # shift invariance
    shifted = masked_softmax(logits + 123.456, mask)
    np.testing.assert_allclose(shifted.data, p.data, atol=1e-12)
    with pytest.raises(ValueError):
        masked_softmax(logits, np.zeros((4, 6)))


def test_masked_softmax_grad_and_masked_positions():
    w = RNG.normal(size=(4, 6))
    mask = np.ones((4, 6))
    mask[0, 0] = 0
    target = RNG.normal(size=(4, 6))

    def loss(t):
        return tsum(masked_softmax(t, mask) * constant(target))

    fd_on(loss, [w])
    store = ParamStore()
    t = store.add("w", w)
    with Tape() as tape:
        y = loss(t)
    backward(tape, y)
    assert t.grad[0, 0] == 0.0  # masked logits get no gradient


def test_segment_softmax_sums_to_one_per_segment():
    scores = Tensor(RNG.normal(size=(7,)), requires_grad=True)
    seg = np.array([0, 0, 0, 1, 1, 2, 2])
    p = segment_softmax(scores, seg, 3)
    sums = np.zeros(3)
    np.add.at(sums, seg, p.data)
    np.testing.assert_allclose(sums, np.ones(3), atol=1e-12)


def test_layer_norm_statistics_and_fd():
    x = RNG.normal(size=(5, 8)) * 3 + 2
    g = np.ones(8)
    b = np.zeros(8)
    out = layer_norm(Tensor(x), Tensor(g), Tensor(b))
    np.testing.assert_allclose(out.data.mean(axis=1), np.zeros(5), atol=1e-9)
    np.testing.assert_allclose(out.data.std(axis=1), np.ones(5), atol=1e-3)
    fd_on(
        lambda t, gg, bb: tsum(square(layer_norm(t, gg, bb))),
        [x, RNG.normal(size=8), RNG.normal(size=8)],
        tol=1e-5,
    )


def test_mean_pool_matches_numpy():
    x = RNG.normal(size=(7, 3))
    gids = np.array([0, 0, 1, 1, 1, 2, 2])
    out = mean_pool(Tensor(x), gids, 3)
    for g in range(3):
        np.testing.assert_allclose(out.data[g], x[gids == g].mean(axis=0), atol=1e-12)
    fd_on(lambda t: tsum(square(mean_pool(t, gids, 3))), [x])


def _mp_params(d_in, d_out, rng):
    return (
        rng.normal(size=(d_in, d_out)) * 0.3,
        rng.normal(size=(d_in, d_out)) * 0.3,
        rng.normal(size=(d_out,)) * 0.1,
    )


def test_mp_layer_edgeless_reduces_to_dense():
    rng = np.random.default_rng(5)
    ws, wn, b = _mp_params(4, 4, rng)
    x = rng.normal(size=(6, 4))
    out = mp_layer(
        Tensor(x), np.zeros((0, 2), dtype=np.int64), Tensor(ws), Tensor(wn), Tensor(b)
    )
    expected = np.maximum(x @ ws + b, 0.0)
    np.testing.assert_allclose(out.data, expected, atol=1e-12)


@pytest.mark.parametrize("kind", ["gcn", "gat"])
def test_mp_layer_equivariance_and_fd(kind):
    rng = np.random.default_rng(7)
    n, d = 6, 4
    x = rng.normal(size=(n, d))
    edges = np.array([[0, 1], [1, 2], [2, 0], [3, 4], [4, 3], [5, 0], [2, 4]])
    ws, wn, b = _mp_params(d, d, rng)
    gat = {
        "a_src": Tensor(rng.normal(size=(d,)) * 0.3, requires_grad=True),
        "a_dst": Tensor(rng.normal(size=(d,)) * 0.3, requires_grad=True),
    }

    def run(xa, e):
        return mp_layer(
            xa, e, Tensor(ws), Tensor(wn), Tensor(b), kind=kind, gat_params=gat
        )

    out = run(Tensor(x), edges)
    sigma = rng.permutation(n)
    xp = np.empty_like(x)
    xp[sigma] = x
    out_p = run(Tensor(xp), sigma[edges])
    np.testing.assert_allclose(out_p.data[sigma], out.data, atol=1e-10)

    def loss(ws_t, wn_t, b_t):
        return tsum(
            square(
                mp_layer(
                    Tensor(x), edges, ws_t, wn_t, b_t, kind=kind, gat_params=gat
                )
            )
        )

    fd_on(loss, [ws, wn, b], tol=1e-5)


def _graphormer_params(rng, d, heads, n_buckets=10, max_deg=8):
    p = {}
    p["deg"] = Tensor(rng.normal(size=(max_deg + 1, d)) * 0.1, requires_grad=True)
    for k in ("wq", "wk", "wv", "wo"):
        p[k] = Tensor(glorot(rng, d, d), requires_grad=True)
    for i in range(heads):
        p[f"bias{i}"] = Tensor(rng.normal(size=(n_buckets,)) * 0.1, requires_grad=True)
    p["g1"] = Tensor(1.0 + 0.2 * rng.normal(size=d), requires_grad=True)
    p["b1"] = Tensor(0.1 * rng.normal(size=d), requires_grad=True)
    p["g2"] = Tensor(1.0 + 0.2 * rng.normal(size=d), requires_grad=True)
    p["b2"] = Tensor(0.1 * rng.normal(size=d), requires_grad=True)
    p["wf1"] = Tensor(glorot(rng, d, 2 * d), requires_grad=True)
    p["bf1"] = Tensor(np.zeros(2 * d), requires_grad=True)
    p["wf2"] = Tensor(glorot(rng, 2 * d, d), requires_grad=True)
    p["bf2"] = Tensor(np.zeros(d), requires_grad=True)
    return p


def test_graphormer_attention_rows_and_equivariance():
    rng = np.random.default_rng(11)
    n, d, heads = 5, 8, 2
    x = rng.normal(size=(n, d))
    spd = rng.integers(0, 9, size=(n, n))
    spd = np.minimum(spd, spd.T)
    np.fill_diagonal(spd, 0)
    deg = rng.integers(0, 5, size=n)
    p = _graphormer_params(rng, d, heads)

    seen = []
    out = graphormer_layer(Tensor(x), spd, deg, p, heads, collect_attn=seen)
    assert len(seen) == heads
    for attn in seen:
        np.testing.assert_allclose(attn.sum(axis=1), np.ones(n), atol=1e-12)

    sigma = rng.permutation(n)
    xp = np.empty_like(x)
    xp[sigma] = x
    spd_p = np.empty_like(spd)
    spd_p[np.ix_(sigma, sigma)] = spd
    deg_p = np.empty_like(deg)
    deg_p[sigma] = deg
    out_p = graphormer_layer(Tensor(xp), spd_p, deg_p, p, heads)
    np.testing.assert_allclose(out_p.data[sigma], out.data, atol=1e-9)


def test_graphormer_fd():
    rng = np.random.default_rng(13)
    n, d, heads = 4, 4, 2
    x = rng.normal(size=(n, d))
    spd = np.ones((n, n), dtype=np.int64)
    np.fill_diagonal(spd, 0)
    deg = np.full(n, 3)
    p = _graphormer_params(rng, d, heads)
    store = ParamStore()
    for k, t in p.items():
        store.add(k, t.data)
    # a random linear probe keeps the objective non-degenerate: the final
    # layer norm makes sum-of-squares losses nearly parameter-independent
    probe = constant(rng.normal(size=(n, d)))

    def loss():
        pp = {k: store[k] for k in p}
        out = graphormer_layer(Tensor(x), spd, deg, pp, heads)
        return tsum(out * probe)

    err = finite_difference_check(loss, store, h=1e-5, max_coords_per_param=6)
    assert err < 1e-5


def test_mlp_fd():
    rng = np.random.default_rng(17)
    x = rng.normal(size=(3, 5))
    w1, b1 = glorot(rng, 5, 7), np.zeros(7)
    w2, b2 = glorot(rng, 7, 2), np.zeros(2)

    def loss(w1t, b1t, w2t, b2t):
        out = mlp(Tensor(x), [(w1t, b1t), (w2t, b2t)], act=gelu, final=sigmoid)
        return tsum(square(out))

    fd_on(loss, [w1, b1, w2, b2], tol=1e-5)


# ---------------------------------------------------------------------------
# param store, adam, checkpoints


def test_adam_zero_grad_leaves_params_unchanged():
    store = ParamStore()
    t = store.add("w", np.array([1.0, 2.0]))
    store.adam_step(lr=0.1)
    np.testing.assert_allclose(t.data, [1.0, 2.0])


def test_adam_single_step_reference_value():
    store = ParamStore()
    t = store.add("w", np.array([1.0]))
    t.grad = np.array([0.5])
    store.adam_step(lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8)
    # bias-corrected first step: update = lr * g / (|g| + eps)
    assert t.data[0] == pytest.approx(1.0 - 0.01 * 0.5 / (0.5 + 1e-8), abs=1e-12)


def test_adam_descends_quadratic():
    store = ParamStore()
    t = store.add("w", np.array([5.0]))
    for _ in range(500):
        store.zero_grad()
        with Tape() as tape:
            loss = tsum(square(t))
        backward(tape, loss)
        store.adam_step(lr=0.05)
    assert abs(t.data[0]) < 0.05


def test_frozen_params_are_bit_identical_across_updates():
    store = ParamStore()
    enc = store.add("enc.w", np.array([1.0, 2.0, 3.0]))
    head = store.add("head.w", np.array([1.0]))
    store.freeze("enc.")
    before = enc.data.tobytes()
    for _ in range(10):
        store.zero_grad()
        with Tape() as tape:
            loss = tsum(square(enc)) + tsum(square(head))
        backward(tape, loss)
        store.adam_step(lr=0.05)
    assert enc.data.tobytes() == before
    assert head.data[0] != 1.0


def test_checkpoint_roundtrip_and_format(tmp_path):
    store = ParamStore()
    store.add("layer.w", RNG.normal(size=(3, 4)))
    store.add("layer.b", RNG.normal(size=(4,)))
    store.add("scalar", np.array(2.5))
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, store)
    blob = path.read_bytes()
    assert blob[:4] == b"GACD"
    loaded = load_checkpoint(path)
    assert set(loaded) == {"layer.w", "layer.b", "scalar"}
    for name, arr in loaded.items():
        np.testing.assert_allclose(
            arr, store[name].data.astype(np.float32), atol=0
        )
    assert loaded["scalar"].shape == ()
    # identical stores serialize byte-identically
    path2 = tmp_path / "m2.ckpt"
    save_checkpoint(path2, store)
    assert path2.read_bytes() == blob

    store2 = ParamStore()
    store2.add("layer.w", np.zeros((3, 4)))
    store2.add("layer.b", np.zeros(4))
    store2.add("scalar", np.array(0.0))
    store2.load_state(loaded)
    np.testing.assert_allclose(store2["layer.w"].data, loaded["layer.w"])


def test_checkpoint_rejects_bad_magic_and_version(tmp_path):
    p = tmp_path / "bad.ckpt"
    p.write_bytes(b"NOPE" + b"\x01\x00\x00\x00")
    with pytest.raises(ValueError, match="magic"):
        load_checkpoint(p)
    p.write_bytes(b"GACD" + b"\x63\x00\x00\x00")
    with pytest.raises(ValueError, match="version"):
        load_checkpoint(p)


def test_load_state_rejects_shape_mismatch():
    store = ParamStore()
    store.add("w", np.zeros((2, 2)))
    with pytest.raises(ValueError, match="shape"):
        store.load_state({"w": np.zeros((3, 3))})
    with pytest.raises(ValueError, match="state mismatch"):
        store.load_state({"w": np.zeros((2, 2)), "extra": np.zeros(1)})


def test_default_dtype_switch():
    try:
        set_default_dtype(np.float32)
        t = Tensor(np.array([1, 2]))
        assert t.data.dtype == np.float32
    finally:
        set_default_dtype(np.float64)
    assert default_dtype() is np.float64
    assert Tensor(np.array([1, 2])).data.dtype == np.float64


def test_finite_difference_check_flags_wrong_gradient():
    # a deliberately broken gradient must be caught
    from gacd.neural.tensor import Tensor as T, _record

    def bad_square(x):
        out = T(x.data * x.data, requires_grad=x.requires_grad)

        def back(g):
            x.accumulate(g * 1.5 * x.data)  # wrong factor

        _record(out, back)
        return out

    store = ParamStore()
    t = store.add("x", np.array([1.3, -0.7]))
    err = finite_difference_check(lambda: tsum(bad_square(t)), store)
    assert err > 1e-2
