import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from empl import losses, nn


def fd_max_rel_error(net, x, y, taus, loss_name, alpha=0.01, step=1e-5):
    """Largest relative error between backward() and central differences over every parameter."""

    def value(n):
        tr = nn.forward(n, x, taus if n.tau_input else None, mode="train")
        if loss_name == "gaussian_nll":
            return losses.gaussian_nll(y, tr.cumulative, tr.sigma)[0], tr
        return losses.loss_and_grad(loss_name, y, tr.density, taus, alpha)[0], tr

    _, tr = value(net)
    if loss_name == "gaussian_nll":
        _, a, b = losses.gaussian_nll(y, tr.cumulative, tr.sigma)
        grads = nn.backward(net, tr, (a, b))
    else:
        grads = nn.backward(net, tr, losses.loss_and_grad(loss_name, y, tr.density, taus, alpha)[1])
    worst = 0.0
    for k, p in net.params.items():
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + step
            up = value(net)[0]
            p[idx] = orig - step
            dn = value(net)[0]
            p[idx] = orig
            num = (up - dn) / (2 * step)
            ana = grads[k][idx]
            worst = max(worst, abs(ana - num) / max(abs(ana), abs(num), 1e-8))
    return worst


@pytest.mark.parametrize("batch_norm", [True, False])
@pytest.mark.parametrize("loss_name", ["empl_smoothed", "w1", "em2", "mae", "mse", "cross_entropy"])
def test_gradient_check_training_losses(batch_norm, loss_name):
    rng = np.random.default_rng(3)
    net = nn.init_network(3, (8, 8), 4, rng, batch_norm=batch_norm)
    x = rng.normal(size=(6, 3))
    y = rng.dirichlet(np.ones(4), 6)
    taus = rng.uniform(0.05, 0.95, 6)
    assert fd_max_rel_error(net, x, y, taus, loss_name) < 1e-4


@pytest.mark.parametrize("batch_norm", [True, False])
def test_gradient_check_gaussian_head(batch_norm):
    rng = np.random.default_rng(4)
    net = nn.init_network(3, (8,), 4, rng, batch_norm=batch_norm, head="gaussian", tau_input=False)
    x = rng.normal(size=(5, 3))
    y = rng.dirichlet(np.ones(4), 5)
    assert fd_max_rel_error(net, x, y, None, "gaussian_nll") < 1e-4


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.001, 0.999), st.floats(-50, 50))
def test_head_is_valid_cumulative(seed, tau, scale):
    rng = np.random.default_rng(seed)
    net = nn.init_network(2, (6,), 7, rng)
    for k in net.params:
        net.params[k] = net.params[k] * scale
    tr = nn.forward(net, rng.normal(size=(4, 2)) * 10, tau)
    assert np.all(np.diff(tr.cumulative, axis=1) >= -1e-12)
    assert np.all(np.abs(tr.cumulative[:, -1] - 1) <= 1e-9)
    assert np.all(tr.cumulative <= 1) and np.all(tr.cumulative >= 0)
    assert np.allclose(tr.density.sum(axis=1), 1, atol=1e-9)


def test_zero_network_outputs_uniform():
    net = nn.init_network(2, (4, 4), 5, np.random.default_rng(0))
    for k in net.params:
        net.params[k] = np.zeros_like(net.params[k])
    tr = nn.forward(net, [[0.3, -1.0]], 0.5)
    np.testing.assert_allclose(tr.density[0], np.full(5, 0.2), atol=1e-15)
    np.testing.assert_allclose(tr.cumulative[0], [0.2, 0.4, 0.6, 0.8, 1.0], atol=1e-15)


def test_eval_mode_is_deterministic():
    rng = np.random.default_rng(1)
    net = nn.init_network(2, (8,), 3, rng, dropout=0.5)
    x = rng.normal(size=(4, 2))
    a = nn.forward(net, x, 0.3)
    b = nn.forward(net, x, 0.3)
    assert np.array_equal(a.cumulative, b.cumulative)


def test_zero_loss_gradient_gives_zero_parameter_gradients():
    rng = np.random.default_rng(2)
    net = nn.init_network(2, (8, 8), 3, rng)
    tr = nn.forward(net, rng.normal(size=(5, 2)), 0.5, mode="train")
    grads = nn.backward(net, tr, np.zeros((5, 3)))
    assert all(np.all(g == 0) for g in grads.values())


def test_batch_norm_identical_batch():
    rng = np.random.default_rng(5)
    net = nn.init_network(2, (6,), 3, rng)
    x = np.tile(rng.normal(size=(1, 2)), (8, 1))
    tr = nn.forward(net, x, 0.5, mode="train")
    c = tr.layers[0]
    xhat = (c["z"] - c["mean"]) * c["inv_std"]
    assert np.max(np.abs(xhat)) < 1e-6
    g = rng.normal(size=(8, 3))
    grads = nn.backward(net, tr, g)
    assert np.max(np.abs(grads["h0.gamma"])) < 1e-6


def test_batch_norm_eval_ignores_batch_composition():
    rng = np.random.default_rng(6)
    net = nn.init_network(1, (8, 8), 4, rng)
    data = lambda r, b: (r.normal(size=(b, 1)), r.dirichlet(np.ones(4), b))
    net, _ = nn.train(net, data, nn.LossConfig(), nn.Schedule(20, 0, 16, 1e-2, 10), rng)
    probe = np.array([[0.25]])
    alone = nn.forward(net, probe, 0.5).cumulative
    mixed = nn.forward(net, np.vstack([probe, rng.normal(size=(9, 1))]), 0.5).cumulative[:1]
    assert np.array_equal(alone, mixed)


def test_inverted_dropout_expectation():
    rng = np.random.default_rng(8)
    net = nn.init_network(3, (16,), 4, rng, batch_norm=False, dropout=0.5)
    x = rng.normal(size=(1, 3))
    ev = nn.forward(net, x, 0.5, mode="eval").layers[1]["h"]
    reps = 10_000
    tr = nn.forward(net, np.repeat(x, reps, axis=0), 0.5, mode="train", rng=rng)
    mean = tr.layers[1]["h"].mean(axis=0)
    assert np.linalg.norm(mean - ev[0]) / np.linalg.norm(ev[0]) < 0.02


def test_dropout_train_needs_rng():
    net = nn.init_network(1, (4,), 2, np.random.default_rng(0), dropout=0.2)
    with pytest.raises(ValueError):
        nn.forward(net, [[0.0]], 0.5, mode="train")


def test_input_width_checked():
    net = nn.init_network(2, (4,), 2, np.random.default_rng(0))
    with pytest.raises(ValueError):
        nn.forward(net, [[0.0, 1.0, 2.0]], 0.5)
    with pytest.raises(ValueError):
        nn.forward(net, [[0.0, 1.0]])


def test_stale_trace_rejected():
    rng = np.random.default_rng(0)
    a = nn.init_network(1, (4,), 2, rng)
    b = nn.init_network(1, (4, 4), 2, rng)
    tr = nn.forward(a, [[0.0], [1.0]], 0.5, mode="train")
    with pytest.raises(nn.StaleTrace):
        nn.backward(b, tr, np.zeros((2, 2)))


# -- Adam ----------------------------------------------------------------------------

def _tiny():
    return nn.init_network(1, (3,), 2, np.random.default_rng(0), batch_norm=False)


def test_adam_zero_gradient_keeps_parameters():
    net = _tiny()
    before = {k: v.copy() for k, v in net.params.items()}
    state = nn.adam_init(net)
    for _ in range(5):
        nn.adam_step(net, {k: np.zeros_like(v) for k, v in net.params.items()}, state)
    assert all(np.array_equal(before[k], net.params[k]) for k in before)
    assert state.step == 5


def test_adam_first_step_closed_form():
    net = _tiny()
    before = {k: v.copy() for k, v in net.params.items()}
    rng = np.random.default_rng(1)
    grads = {k: rng.normal(size=v.shape) for k, v in net.params.items()}
    state = nn.adam_init(net, lr=1e-2)
    nn.adam_step(net, grads, state)
    for k, g in grads.items():
        # bias-corrected moments are g and g^2 after one step
        np.testing.assert_allclose(net.params[k] - before[k], -1e-2 * g / (np.abs(g) + 1e-8), rtol=1e-12)


def test_adam_constant_gradient_step_size():
    net = _tiny()
    grads = {k: np.full(v.shape, 0.37) for k, v in net.params.items()}
    state = nn.adam_init(net, lr=1e-3)
    for _ in range(1000):
        prev = net.params["out.W"].copy()
        nn.adam_step(net, grads, state)
    step = np.abs(net.params["out.W"] - prev)
    assert np.all(np.abs(step / 1e-3 - 1) < 0.01)


def test_adam_shape_mismatch():
    net = _tiny()
    state = nn.adam_init(net)
    bad = {k: np.zeros(v.size + 1) for k, v in net.params.items()}
    with pytest.raises(nn.ShapeMismatch):
        nn.adam_step(net, bad, state)
    with pytest.raises(nn.ShapeMismatch):
        nn.adam_step(net, {"out.W": np.zeros((3, 2))}, state)


# -- training ------------------------------------------------------------------------

def _sampler(rng, b):
    x = rng.random((b, 1))
    return x, rng.dirichlet(np.ones(3), b)


def test_zero_iterations_returns_initial_net():
    rng = np.random.default_rng(0)
    net = nn.init_network(1, (4,), 3, rng)
    out, curve = nn.train(net, _sampler, nn.LossConfig(), nn.Schedule(0, 0, 8), rng)
    assert curve == []
    assert nn.params_digest(out) == nn.params_digest(net)
    assert out is not net


def test_training_is_deterministic():
    def run():
        rng = np.random.default_rng(42)
        net = nn.init_network(1, (8,), 3, rng, dropout=0.1)
        return nn.train(net, _sampler, nn.LossConfig(), nn.Schedule(30, 0, 16, 1e-2, 10), rng)
    (a, ca), (b, cb) = run(), run()
    assert ca == cb
    assert nn.params_digest(a) == nn.params_digest(b)


def test_training_reduces_loss_on_learnable_task():
    def sampler(rng, b):
        x = rng.integers(0, 2, (b, 1)).astype(float)
        y = np.where(x == 0, [[0.9, 0.05, 0.05]], [[0.05, 0.05, 0.9]])
        return x, y
    rng = np.random.default_rng(0)
    net = nn.init_network(1, (16,), 3, rng)
    _, curve = nn.train(net, sampler, nn.LossConfig("empl", "fixed"), nn.Schedule(300, 0, 32, 1e-2, 50), rng)
    assert curve[-1][1] < 0.25 * curve[0][1]


def test_epoch_training_on_array_dataset():
    rng = np.random.default_rng(0)
    data = nn.ArrayDataset(rng.random((50, 2)), rng.dirichlet(np.ones(4), 50))
    net = nn.init_network(2, (8,), 4, rng, batch_norm=False, dropout=0.5)
    _, curve = nn.train(net, data, nn.LossConfig("empl_smoothed", alpha=0.01), nn.Schedule(0, 3, 16, log_every=4), rng)
    # 50 samples at batch 16 -> batches of 16, 16, 16, 2 -> 4 per epoch
    assert [it for it, _ in curve] == [4, 8, 12]


def test_loss_config_validation():
    with pytest.raises(ValueError):
        nn.LossConfig("empl_smoothed")
    with pytest.raises(ValueError):
        nn.LossConfig("hinge")
    with pytest.raises(ValueError):
        nn.LossConfig(tau_policy="beta")


def test_predict_cumulative_shape():
    net = nn.init_network(2, (4,), 5, np.random.default_rng(0))
    out = nn.predict_cumulative(net, np.zeros((3, 2)), [0.1, 0.5, 0.9, 0.95])
    assert out.shape == (3, 4, 5)


# -- checkpoints ---------------------------------------------------------------------

@pytest.mark.parametrize("head", ["quantile", "gaussian"])
def test_checkpoint_round_trip_bitwise(tmp_path, head):
    rng = np.random.default_rng(9)
    net = nn.init_network(2, (8, 8), 4, rng, head=head, tau_input=head == "quantile")
    net, _ = nn.train(net, lambda r, b: (r.random((b, 2)), r.dirichlet(np.ones(4), b)),
                      nn.LossConfig() if head == "quantile" else nn.LossConfig("gaussian_nll", "fixed"),
                      nn.Schedule(10, 0, 16, 1e-2, 5), rng)
    path = tmp_path / "net.npz"
    nn.save_checkpoint(path, net, {"config_hash": "abc"})
    back, meta = nn.load_checkpoint(path)
    assert meta == {"config_hash": "abc"}
    assert back.architecture() == net.architecture()
    x = rng.random((7, 2))
    a = nn.forward(net, x, 0.3 if net.tau_input else None)
    b = nn.forward(back, x, 0.3 if back.tau_input else None)
    assert np.array_equal(a.logits, b.logits)
    assert nn.params_digest(back) == nn.params_digest(net)


def test_checkpoint_version_mismatch(tmp_path, monkeypatch):
    net = nn.init_network(1, (2,), 2, np.random.default_rng(0))
    path = tmp_path / "old.npz"
    monkeypatch.setattr(nn, "CHECKPOINT_VERSION", 0)
    nn.save_checkpoint(path, net)
    monkeypatch.undo()
    with pytest.raises(nn.CheckpointError):
        nn.load_checkpoint(path)
    (tmp_path / "junk.npz").write_bytes(b"not a checkpoint")
    with pytest.raises(nn.CheckpointError):
        nn.load_checkpoint(tmp_path / "junk.npz")
