import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hjreach import systems as S
from hjreach import trainer as tr
from hjreach import valuenet as vn


def one_neuron(w1, b1, w2, b2, omega0=30.0):
    """Width-1, single hidden layer sine net with the given scalars/vectors."""
    w1 = np.atleast_2d(np.asarray(w1, dtype=float))
    return vn.NetworkParams(
        weights=[w1, np.array([[w2]], dtype=float)],
        biases=[np.array([b1], dtype=float), np.array([b2], dtype=float)],
        hidden_layers=1, hidden_width=1, input_dim=w1.shape[1], omega0=omega0, hidden_omega=omega0,
    )


def zeroed(params):
    return params.with_arrays([np.zeros_like(a) for a in params.arrays()])


def central_fd(f, z, h=1e-5):
    g = np.zeros_like(z)
    for i in range(z.shape[1]):
        e = np.zeros(z.shape[1])
        e[i] = h
        g[:, i] = (f(z + e) - f(z - e)) / (2 * h)
    return g


# -------------------------------------------------------------------- init


def test_init_is_deterministic():
    a = vn.init(7, 4, 3, 32)
    b = vn.init(7, 4, 3, 32)
    assert all(np.array_equal(x, y) for x, y in zip(a.arrays(), b.arrays()))
    c = vn.init(8, 4, 3, 32)
    assert not np.array_equal(a.weights[0], c.weights[0])


def test_init_full_size_architecture():
    p = vn.init(0, 4, 3, 512)
    assert [w.shape for w in p.weights] == [(512, 4), (512, 512), (512, 512), (1, 512)]


@pytest.mark.parametrize("omega0", [1.0, 30.0])
def test_init_ranges(omega0):
    p = vn.init(3, 4, 3, 64, omega0=omega0)
    assert np.abs(p.weights[0]).max() <= 1 / 4 and np.abs(p.biases[0]).max() <= 1 / 4
    for W, b in zip(p.weights[1:], p.biases[1:]):
        bound = np.sqrt(6 / W.shape[1]) / omega0
        assert np.abs(W).max() <= bound and np.abs(b).max() <= bound
    # samples actually fill the range rather than collapsing near zero
    assert np.abs(p.weights[1]).max() > 0.9 * np.sqrt(6 / 64) / omega0


def test_init_rejects_bad_dims():
    with pytest.raises(ValueError):
        vn.init(0, 0, 3, 8)


def test_shape_mismatch_rejected():
    p = vn.init(0, 3, 2, 8)
    with pytest.raises(ValueError):
        vn.NetworkParams(p.weights[:-1], p.biases[:-1], 2, 8, 3)


# ----------------------------------------------------------------- forward


def test_zero_weights_output_final_bias():
    p = zeroed(vn.init(0, 4, 3, 16))
    p.biases[-1][:] = 0.37
    out = vn.forward(p, np.random.default_rng(0).uniform(-1, 1, (5, 3)), 0.5)
    np.testing.assert_array_equal(out, 0.37)
    v, dt, g = vn.value_and_input_grads(p, np.zeros((5, 3)), 0.2)
    assert np.all(dt == 0) and np.all(g == 0)


def test_one_neuron_value_and_gradient():
    w1, b1, w2, b2 = np.array([0.3, -0.2, 0.5]), 0.1, 0.7, -0.4
    p = one_neuron(w1, b1, w2, b2)
    z = np.array([0.2, -0.6, 0.25])
    v, dt, g = vn.value_and_input_grads(p, z[:2], z[2])
    arg = 30 * (w1 @ z + b1)
    assert v[0] == pytest.approx(b2 + w2 * np.sin(arg), abs=1e-14)
    grad = w2 * 30 * np.cos(arg) * w1
    np.testing.assert_allclose(g[0], grad[:2], atol=1e-13)
    assert dt[0] == pytest.approx(grad[2], abs=1e-13)
    assert vn.forward(p, z[:2], z[2])[0] == pytest.approx(v[0], abs=1e-14)


def test_forward_is_deterministic():
    p = vn.init(2, 4, 3, 32)
    z = np.random.default_rng(1).uniform(-1, 1, (50, 3))
    assert np.array_equal(vn.forward(p, z, 0.3), vn.forward(p, z, 0.3))


def test_forward_rejects_non_finite_params():
    p = vn.init(0, 3, 2, 8)
    p.weights[1][0, 0] = np.nan
    with pytest.raises(vn.NumericalFault):
        vn.forward(p, [0.0, 0.0], 0.0)


def test_forward_rejects_wrong_input_width():
    with pytest.raises(ValueError):
        vn.forward(vn.init(0, 4, 2, 8), [0.0, 0.0], 0.0)


@pytest.mark.parametrize("activation", vn.ACTIVATIONS)
def test_input_grads_match_finite_differences(activation):
    rng = np.random.default_rng(4)
    for trial in range(5):
        p = vn.init(trial, 4, 2, 64, activation=activation)
        z = rng.uniform(-1, 1, (100, 4))
        out = vn._forward_tangent(p, z)
        fd = central_fd(lambda q: vn.forward(p, q[:, :3], q[:, 3]), z)
        scale = np.maximum(np.abs(fd), 1.0)
        assert np.max(np.abs(out[:, 1:] - fd) / scale) <= 1e-6


def test_input_grads_many_random_nets():
    rng = np.random.default_rng(9)
    worst = 0.0
    for trial in range(100):
        p = vn.init(100 + trial, 3, 2, 16)
        z = rng.uniform(-1, 1, (4, 3))
        out = vn._forward_tangent(p, z)
        fd = central_fd(lambda q: vn.forward(p, q[:, :2], q[:, 2]), z)
        worst = max(worst, np.max(np.abs(out[:, 1:] - fd) / np.maximum(np.abs(fd), 1.0)))
    assert worst <= 1e-6


# ---------------------------------------------------------- param grads


def _flat_fd(params, loss_of, h=1e-6):
    arrays = params.arrays()
    grads = []
    for k, a in enumerate(arrays):
        g = np.zeros_like(a)
        for idx in np.ndindex(a.shape):
            plus = [x.copy() for x in arrays]
            minus = [x.copy() for x in arrays]
            plus[k][idx] += h
            minus[k][idx] -= h
            g[idx] = (loss_of(params.with_arrays(plus)) - loss_of(params.with_arrays(minus))) / (2 * h)
        grads.append(g)
    return grads


def value_loss(v, dt, g, xhat, that):
    n = len(v)
    return vn.ResidualOutput(float(v.sum()), v.copy(), np.ones(n), np.zeros(n), np.zeros_like(g))


def grad_norm_loss(v, dt, g, xhat, that):
    per = (g * g).sum(axis=1)
    n = len(v)
    return vn.ResidualOutput(float(per.sum()), per, np.zeros(n), np.zeros(n), 2 * g)


def test_value_loss_grads_equal_backprop():
    p = vn.init(1, 3, 2, 8)
    z = np.array([[0.1, -0.3, 0.4]])
    _, grads, _ = vn.loss_param_grads(p, (z[:, :2], z[:, 2]), value_loss)
    # plain reverse pass of the scalar forward
    h0 = z
    a1 = 30 * (h0 @ p.weights[0].T + p.biases[0])
    h1 = np.sin(a1)
    a2 = 30 * (h1 @ p.weights[1].T + p.biases[1])
    h2 = np.sin(a2)
    g_a2 = p.weights[2][0] * np.cos(a2) * 30
    g_a1 = (g_a2 @ p.weights[1]) * np.cos(a1) * 30
    expect = [g_a1.T @ h0, g_a1[0], g_a2.T @ h1, g_a2[0], h2, np.array([1.0])]
    for got, want in zip(grads, expect):
        np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-12)


def test_grad_norm_loss_one_neuron_closed_form():
    w1, b1, w2 = np.array([0.3, -0.2, 0.5]), 0.1, 0.7
    p = one_neuron(w1, b1, w2, 0.0)
    z = np.array([0.2, -0.6, 0.25])
    loss, grads, _ = vn.loss_param_grads(p, (z[None, :2], z[None, 2]), grad_norm_loss)
    # L = (w2 * 30 * cos(a))^2 * |w1[:2]|^2 with a = 30 (w1.z + b1)
    a = 30 * (w1 @ z + b1)
    q = w1[:2] @ w1[:2]
    c = w2 * 30 * np.cos(a)
    assert loss == pytest.approx(c * c * q, rel=1e-12)
    dL_da = 2 * c * q * (-w2 * 30 * np.sin(a))
    dW1 = dL_da * 30 * z + c * c * 2 * np.r_[w1[:2], 0.0]
    np.testing.assert_allclose(grads[0][0], dW1, rtol=1e-11)
    assert grads[1][0] == pytest.approx(dL_da * 30, rel=1e-11)
    assert grads[2][0, 0] == pytest.approx(2 * c * 30 * np.cos(a) * q, rel=1e-11)
    assert grads[3][0] == 0.0


@pytest.mark.parametrize("name", ["air3d", "narrow_passage"])
def test_full_loss_param_grads_match_finite_differences(name):
    spec = S.make_system(name)
    nmap = vn.NormalizationMap.for_system(spec)
    p = vn.init(5, spec.state_dim + 1, 2, 32)
    sched = tr.TrainSchedule(batch_size=16, pretrain_iters=1, curriculum_iters=10, terminal_fraction=0.25)
    batch = tr.sample_batch(sched, spec, 6, tr.CURRICULUM, nmap)
    lam = 0.7
    evaluate = tr.make_loss(spec, nmap, batch, lam)

    def loss_of(q):
        return vn.loss_param_grads(q, batch, evaluate)[0]

    # the clamps must be away from ties for a finite-difference check
    r = tr.batch_terms(p, spec, nmap, batch)
    assert np.all(r.h2 > 1e-6)
    _, grads, _ = vn.loss_param_grads(p, batch, evaluate)
    fd = _flat_fd(p, loss_of)
    flat_g = np.concatenate([g.ravel() for g in grads])
    flat_fd = np.concatenate([g.ravel() for g in fd])
    err = np.abs(flat_g - flat_fd) / np.maximum(np.abs(flat_fd), 1e-3 * np.abs(flat_fd).max())
    assert np.max(err) <= 1e-4


def test_loss_param_grads_reports_bad_sample():
    p = vn.init(0, 3, 1, 4)

    def bad(v, dt, g, xhat, that):
        per = v.copy()
        per[2] = np.inf
        return vn.ResidualOutput(float(per.sum()), per, np.ones_like(v), np.zeros_like(v), np.zeros_like(g))

    with pytest.raises(vn.NumericalFault) as err:
        vn.loss_param_grads(p, (np.zeros((4, 2)), np.zeros(4)), bad)
    assert err.value.index == 2


def test_param_grads_deterministic():
    p = vn.init(3, 4, 2, 16)
    z = np.random.default_rng(3).uniform(-1, 1, (20, 4))
    a = vn.loss_param_grads(p, (z[:, :3], z[:, 3]), grad_norm_loss)[1]
    b = vn.loss_param_grads(p, (z[:, :3], z[:, 3]), grad_norm_loss)[1]
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


# ------------------------------------------------------------- physical


def test_identity_map_flips_time_sign():
    p = vn.init(0, 3, 2, 16)
    nmap = vn.NormalizationMap(np.zeros(2), np.ones(2), 1.0)
    x = np.array([[0.2, -0.1]])
    v, dvdt, g = vn.physical_gradients(p, nmap, x, 0.4)
    v2, dthat, g2 = vn.value_and_input_grads(p, x, 0.6)
    assert v[0] == v2[0]
    assert dvdt[0] == -dthat[0]
    np.testing.assert_array_equal(g, g2)


def test_doubling_half_width_halves_spatial_gradient():
    p = vn.init(0, 3, 2, 16)
    a = vn.NormalizationMap(np.zeros(2), np.array([1.0, 1.0]), 1.0)
    b = vn.NormalizationMap(np.zeros(2), np.array([2.0, 1.0]), 1.0)
    _, _, ga = vn.physical_gradients(p, a, [[0.3, 0.1]], 0.5)
    _, _, gb = vn.physical_gradients(p, b, [[0.6, 0.1]], 0.5)
    assert gb[0, 0] == pytest.approx(ga[0, 0] / 2, rel=1e-14)
    assert gb[0, 1] == pytest.approx(ga[0, 1], rel=1e-14)


def test_physical_gradients_match_finite_differences():
    spec = S.air3d()
    nmap = vn.NormalizationMap.for_system(spec)
    p = vn.init(4, 4, 2, 32)
    rng = np.random.default_rng(0)
    x = rng.uniform(spec.domain_lo * 0.9, spec.domain_hi * 0.9, (50, 3))
    t = rng.uniform(0.1, 0.9, 50)
    _, dvdt, g = vn.physical_gradients(p, nmap, x, t)
    z = np.column_stack([x, t])
    fd = central_fd(lambda q: vn.value(p, nmap, q[:, :3], q[:, 3]), z)
    got = np.column_stack([g, dvdt])
    assert np.max(np.abs(got - fd) / np.maximum(np.abs(fd), 1.0)) <= 1e-6


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=3, max_size=3), st.floats(0, 2))
def test_normalize_round_trip(x, t):
    nmap = vn.NormalizationMap(np.array([0.5, -1.0, 0.0]), np.array([2.0, 0.5, 3.0]), 2.0)
    xhat, that = nmap.normalize(np.array(x), t)
    back_x, back_t = nmap.denormalize(xhat, that)
    np.testing.assert_allclose(back_x, x, atol=1e-12)
    assert back_t == pytest.approx(t, abs=1e-12)


def test_normalization_rejects_nonpositive_width():
    with pytest.raises(ValueError):
        vn.NormalizationMap(np.zeros(2), np.array([1.0, 0.0]), 1.0)


# ------------------------------------------------------------ checkpoint


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    spec = S.air3d()
    nmap = vn.NormalizationMap.for_system(spec)
    p = vn.init(11, 4, 3, 24)
    path = tmp_path / "ck.bin"
    vn.save_checkpoint(path, p, nmap, iteration=42, extra={"system": "air3d"})
    q, nmap2, header = vn.load_checkpoint(path)
    assert header["iteration"] == 42 and header["extra"]["system"] == "air3d"
    assert header["seed"] == 11 and header["omega0"] == 30.0
    z = np.random.default_rng(0).uniform(-1, 1, (30, 4))
    assert np.array_equal(vn.forward(p, z[:, :3], z[:, 3]), vn.forward(q, z[:, :3], z[:, 3]))
    np.testing.assert_array_equal(nmap2.half_width, nmap.half_width)
    assert nmap2.periodic_dims == (2,)


def test_checkpoint_layout_is_little_endian_float64(tmp_path):
    p = one_neuron([0.5, 0.25], 0.125, -2.0, 3.0)
    path = tmp_path / "ck.bin"
    vn.save_checkpoint(path, p)
    raw = path.read_bytes()
    assert raw[:8] == b"HJRCKPT1"
    tail = np.frombuffer(raw[-8 * 5:], dtype="<f8")
    np.testing.assert_array_equal(tail, [0.5, 0.25, 0.125, -2.0, 3.0])


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "x.bin"
    path.write_bytes(b"nope" * 10)
    with pytest.raises(ValueError):
        vn.load_checkpoint(path)
