import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from awet import nnet
from awet.errors import NumericOverflowError, RejectedInputError
from awet.nnet import AdamState, MlpSpec, ParameterSet

from conftest import central_diff, max_rel_err


def _random_spec(rng, out_act="identity"):
    depth = int(rng.integers(1, 4))
    sizes = [int(rng.integers(1, 6)) for _ in range(depth + 1)]
    scale = tuple(rng.uniform(0.5, 3.0, size=sizes[-1])) if out_act == "tanh" else None
    return MlpSpec(tuple(sizes), output_activation=out_act, output_scale=scale)


@pytest.mark.parametrize("out_act", ["identity", "tanh"])
def test_param_gradients_match_finite_differences(rng, out_act):
    for _ in range(10):
        spec = _random_spec(rng, out_act)
        params = nnet.init_params(spec, rng)
        x = rng.normal(size=(7, spec.n_in))
        target = rng.normal(size=(7, spec.n_out))
        loss = nnet.mse_loss(target)
        _, grads = nnet.value_and_grad(spec, params, x, loss)
        num = central_diff(lambda: loss(nnet.forward(spec, params, x))[0], params.flat)
        assert max_rel_err(grads.flat, num) < 1e-5


def test_input_gradient_matches_finite_differences(rng):
    spec = MlpSpec((4, 8, 3), output_activation="tanh", output_scale=(1.0, 2.0, 0.5))
    params = nnet.init_params(spec, rng)
    x = rng.normal(size=(5, 4))
    w = rng.normal(size=(5, 3))
    tape = nnet.forward_tape(spec, params, x)
    _, gx = nnet.backward(spec, params, tape, w, want_params=False)
    num = central_diff(lambda: float(np.sum(w * nnet.forward(spec, params, x))), x)
    assert max_rel_err(gx, num) < 1e-5


def test_views_share_the_flat_vector():
    spec = MlpSpec((2, 3, 1))
    p = ParameterSet(spec)
    assert p.flat.size == spec.n_params() == 2 * 3 + 3 + 3 * 1 + 1
    p.weights[0][1, 2] = 7.0
    p.biases[1][0] = -2.0
    assert p.flat[1 * 3 + 2] == 7.0
    assert p.flat[-1] == -2.0
    assert list(p.weight_mask) == [1] * 6 + [0] * 3 + [1] * 3 + [0]


def test_init_is_uniform_in_fan_in_bound(rng):
    spec = MlpSpec((16, 64, 4))
    p = nnet.init_params(spec, rng)
    for w, b in zip(p.weights, p.biases):
        bound = 1 / np.sqrt(w.shape[0])
        assert np.all(np.abs(w) <= bound) and np.all(np.abs(b) <= bound)
        assert np.abs(w).max() > 0.8 * bound


def test_forward_by_hand():
    spec = MlpSpec((2, 2, 1))
    p = ParameterSet.from_layers(spec, [(np.array([[1.0, -1.0], [2.0, 0.5]]), np.array([0.0, -3.0])),
                                        (np.array([[3.0], [4.0]]), np.array([0.5]))])
    x = np.array([1.0, 1.0])
    # hidden = relu([3, -0.5 - 3]) = [3, 0]; out = 9 + 0.5
    assert nnet.forward(spec, p, x)[0] == 9.5


def test_tanh_output_stays_strictly_inside_scale():
    spec = MlpSpec((1, 1), output_activation="tanh", output_scale=(2.0,))
    p = ParameterSet.from_layers(spec, [(np.array([[1000.0]]), np.array([0.0]))])
    out = nnet.forward(spec, p, np.array([[5.0], [-5.0]]))
    assert np.all(np.abs(out) < 2.0)
    assert np.all(np.abs(out) > 1.999)


def test_shape_errors(rng):
    spec = MlpSpec((3, 2))
    p = nnet.init_params(spec, rng)
    with pytest.raises(RejectedInputError):
        nnet.forward(spec, p, np.zeros((4, 2)))
    with pytest.raises(RejectedInputError):
        MlpSpec((3,))
    with pytest.raises(RejectedInputError):
        MlpSpec((3, 0, 1))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_overflow_names_the_layer(rng):
    spec = MlpSpec((2, 4, 1))
    p = nnet.init_params(spec, rng)
    p.weights[1][...] = 1e308
    p.biases[0][...] = 1e10
    with pytest.raises(NumericOverflowError) as info:
        nnet.forward(spec, p, np.ones(2))
    assert info.value.layer == 1


def test_l2_touches_weights_only(rng):
    spec = MlpSpec((3, 4, 2))
    p = nnet.init_params(spec, rng)
    assert nnet.l2_penalty(p) == pytest.approx(sum(float(np.sum(w**2)) for w in p.weights), rel=1e-14)
    g = nnet.l2_grad(p)
    num = central_diff(lambda: nnet.l2_penalty(p), p.flat)
    assert np.allclose(g.flat, num, atol=1e-7)
    assert all(np.all(b == 0) for b in g.biases)


def test_adam_matches_scalar_reference():
    spec = MlpSpec((1, 1))
    p = ParameterSet(spec, np.array([0.3, -0.2]))
    state = AdamState.for_params(p, lr=0.01)
    ref = [0.3, -0.2]
    m = [0.0, 0.0]
    v = [0.0, 0.0]
    b1, b2, eps, lr = 0.9, 0.999, 1e-8, 0.01
    for t in range(1, 6):
        g = [2 * ref[0] + 0.1 * t, ref[1] - 1.0]
        grads = ParameterSet(spec, np.array(g))
        nnet.adam_step(p, grads, state)
        for i in range(2):
            m[i] = b1 * m[i] + (1 - b1) * g[i]
            v[i] = b2 * v[i] + (1 - b2) * g[i] ** 2
            mh = m[i] / (1 - b1**t)
            vh = v[i] / (1 - b2**t)
            ref[i] -= lr * mh / (vh**0.5 + eps)
        assert np.allclose(p.flat, ref, rtol=0, atol=1e-15)
    assert state.t == 5


def test_adam_descends_a_quadratic(rng):
    spec = MlpSpec((3, 1))
    p = nnet.init_params(spec, rng)
    x = rng.normal(size=(50, 3))
    y = x @ np.array([[1.0], [-2.0], [0.5]]) + 0.25
    state = AdamState.for_params(p, lr=0.05)
    first = None
    for _ in range(500):
        val, g = nnet.value_and_grad(spec, p, x, nnet.mse_loss(y))
        first = val if first is None else first
        nnet.adam_step(p, g, state)
    assert val < 1e-4 < first


@given(st.floats(0.0, 1.0), st.integers(0, 20))
@settings(max_examples=40, deadline=None)
def test_polyak_gap_contracts_geometrically(rho, n):
    spec = MlpSpec((2, 3, 1))
    rng = np.random.default_rng(n)
    online = nnet.init_params(spec, rng)
    target = nnet.init_params(spec, rng)
    gap0 = np.linalg.norm(target.flat - online.flat)
    for _ in range(n):
        nnet.polyak_update(target, online, rho)
    assert np.linalg.norm(target.flat - online.flat) == pytest.approx(rho**n * gap0, rel=1e-9, abs=1e-12)


def test_checkpoint_roundtrip(tmp_path, rng):
    spec = MlpSpec((5, 7, 2), output_activation="tanh", output_scale=(1.5, 0.25))
    p = nnet.init_params(spec, rng)
    path = tmp_path / "actor.bin"
    nnet.save_params(path, p)
    q = nnet.load_params(path)
    assert q.spec == spec
    assert np.array_equal(q.flat, p.flat)
    raw = path.read_bytes()
    assert raw[:8] == b"AWETNET1"
    path.write_bytes(raw[:-8])
    with pytest.raises(RejectedInputError):
        nnet.load_params(path)
    path.write_bytes(b"garbage!" + raw[8:])
    with pytest.raises(RejectedInputError):
        nnet.load_params(path)
