import numpy as np
import pytest

from oracles import assert_grad_close, fd_gradients, random_instance, touched_nodes
from udfr.fields import SphereShell, VoxelGrid, grid_nodes
from udfr.optimize import (LossWeights, NonFiniteGradient, TrainConfig, TrainState,
                           adam_step, backward, color_loss, eikonal_loss, fast_loss_and_grad,
                           fit, inverse_softplus, load_checkpoint, loss_and_grad, reg_loss,
                           s_penalty, save_checkpoint, total_loss)
from udfr.render import Image
from udfr.scenes import build_scene, render_references


# losses ---------------------------------------------------------------------------
def test_color_loss_examples():
    rng = np.random.default_rng(0)
    a = rng.uniform(size=(512, 3))
    assert color_loss(a, a) == 0.0
    assert color_loss(np.zeros((4, 3)), np.ones((4, 3))) == 1.0
    b = rng.uniform(size=(512, 3))
    ref = 0.0
    for ch in range(3):  # channel-major, reversed rays
        for i in range(511, -1, -1):
            ref += abs(a[i, ch] - b[i, ch])
    assert color_loss(a, b) == pytest.approx(ref / a.size, abs=1e-12)
    with pytest.raises(ValueError):
        color_loss(a, b[:10])


def test_eikonal_loss_examples():
    sphere = SphereShell((0, 0, 0), 0.5)
    p = np.random.default_rng(1).uniform(-1, 1, size=(2000, 3))
    p = p[sphere.value(p) > 1e-3]
    assert eikonal_loss(sphere, p) == pytest.approx(0.0, abs=1e-6)
    const = VoxelGrid(np.full((4, 4, 4), 0.7))
    assert eikonal_loss(const, p) == pytest.approx(1.0)
    double = VoxelGrid.from_function(lambda q: 2.0 * q[..., 0], (4, 4, 4))
    assert eikonal_loss(double, p) == pytest.approx(1.0)


def test_reg_loss_examples():
    assert reg_loss(np.zeros(10)) == 1.0
    assert reg_loss(np.ones(10), 5.0) == pytest.approx(0.0067379, abs=1e-7)
    assert reg_loss([1e3]) == 0.0
    with pytest.raises(ValueError):
        reg_loss([-0.1])


def test_s_penalty_examples():
    assert s_penalty(np.full(7, 1000.0)) == pytest.approx(0.001)
    assert s_penalty([2000.0]) == pytest.approx(0.5 * s_penalty([1000.0]))
    assert s_penalty([500.0, 2000.0]) == pytest.approx(0.00125)
    with pytest.raises(ValueError):
        s_penalty([0.0])


def test_total_loss_examples():
    zero = dict(color=0.0, eik=0.0, reg=0.0, s=0.0)
    one = dict(color=1.0, eik=1.0, reg=1.0, s=1.0)
    assert total_loss(zero) == 0.0
    assert total_loss(one) == pytest.approx(1.111)
    assert total_loss(one, LossWeights(use_s_penalty=False)) == pytest.approx(1.11)
    with pytest.raises(ValueError):
        LossWeights(lambda1=-1)


# gradients -----------------------------------------------------------------------
@pytest.mark.parametrize("seed", range(50))
def test_backward_matches_finite_differences(seed):
    state, batch, eik = random_instance(seed)
    weights = LossWeights()
    grads = backward(state, batch, weights, eik)
    nodes = touched_nodes(state, batch, eik)
    fd = fd_gradients(state, batch, eik, weights, nodes=nodes)
    untouched = np.setdiff1d(np.arange(state.params["udf"].size), nodes)
    # nodes outside every stencil cannot affect the loss
    assert np.all(grads["udf"][untouched] == 0) and np.all(grads["color"][untouched] == 0)
    assert_grad_close(grads["udf"][nodes], fd["udf"][nodes])
    assert_grad_close(grads["color"][nodes], fd["color"][nodes])
    assert_grad_close(grads["log_s"], fd["log_s"])


@pytest.mark.parametrize("seed", range(10))
def test_compiled_gradients_match_reference(seed):
    state, batch, eik = random_instance(100 + seed)
    comps_a, ga = loss_and_grad(state, batch, eik, LossWeights())
    comps_b, gb = fast_loss_and_grad(state, batch, eik, LossWeights())
    for k in ("color", "eik", "reg", "s", "total"):
        assert comps_a[k] == pytest.approx(comps_b[k], rel=1e-10, abs=1e-14)
    assert np.allclose(comps_a["rgb"], comps_b["rgb"], rtol=1e-10, atol=1e-14)
    for k in ga:
        assert np.allclose(ga[k], gb[k], rtol=1e-8, atol=1e-14)


def test_zero_loss_has_zero_gradient():
    state, batch, eik = random_instance(7)
    w = LossWeights(lambda1=0, lambda2=0, lambda3=0)
    batch.gt = loss_and_grad(state, batch, eik, w, need_grad=False)[0]["rgb"]
    g = backward(state, batch, w, eik)
    assert all(np.all(v == 0) for v in g.values())


def test_l1_gradient_depends_only_on_residual_signs():
    state, batch, eik = random_instance(8)
    w = LossWeights(lambda1=0, lambda2=0, lambda3=0)
    rgb = loss_and_grad(state, batch, eik, w, need_grad=False)[0]["rgb"]
    sign = np.sign(batch.gt - rgb)
    ga = backward(state, batch, w, eik)
    batch.gt = rgb + sign * 0.4  # different targets, same sign pattern
    gb = backward(state, batch, w, eik)
    for k in ga:
        assert np.allclose(ga[k], gb[k], rtol=1e-14, atol=0)


# Adam ---------------------------------------------------------------------------
def _scalar_state(x0=1.0):
    return TrainState((1, 1, 1), {"udf": np.array([x0])})


def test_adam_zero_gradient_is_identity():
    st = TrainState.create((2, 2, 2))
    before = {k: v.copy() for k, v in st.params.items()}
    adam_step(st, {k: np.zeros_like(v) for k, v in st.params.items()})
    assert all(np.array_equal(before[k], st.params[k]) for k in before)


def test_adam_first_step_closed_form():
    st = _scalar_state()
    adam_step(st, {"udf": np.array([1.0])}, lr=5e-4)
    assert st.params["udf"][0] == pytest.approx(1.0 - 5e-4, abs=1e-10)


def test_adam_constant_gradient_drift():
    st = _scalar_state()
    xs = []
    for _ in range(100):
        adam_step(st, {"udf": np.array([0.3])}, lr=5e-4)
        xs.append(st.params["udf"][0])
    assert np.all(np.diff(xs) < 0)
    assert 1.0 - xs[-1] == pytest.approx(100 * 5e-4, rel=1e-3)


def test_adam_rejects_non_finite():
    st = _scalar_state()
    with pytest.raises(NonFiniteGradient):
        adam_step(st, {"udf": np.array([np.nan])})
    assert st.params["udf"][0] == 1.0 and st.step == 0


def test_adam_per_group_rates_and_positive_s():
    st = TrainState.create((2, 2, 2))
    g = {k: np.ones_like(v) for k, v in st.params.items()}
    udf0, ls0 = st.params["udf"].copy(), st.params["log_s"].copy()
    adam_step(st, g, lr=5e-4, lrs={"log_s": 5e-3})
    assert np.allclose(udf0 - st.params["udf"], 5e-4)
    assert np.allclose(ls0 - st.params["log_s"], 5e-3)
    assert st.s > 0


# state and checkpoints -------------------------------------------------------------
def test_initial_state_renders_background():
    st = TrainState.create((8, 8, 8), init_distance=0.3, s_init=30.0)
    assert np.allclose(st.udf_field().value(np.zeros((1, 3))), 0.3)
    assert inverse_softplus(0.3) == pytest.approx(0.3, abs=1e-12)
    assert st.s == pytest.approx(30.0)


def test_checkpoint_round_trip(tmp_path):
    st = TrainState.create((3, 4, 5), s_init=123.0)
    st.params["udf"] += np.random.default_rng(0).normal(size=st.params["udf"].shape)
    st.step = 17
    st.history = [(17, 0.1, 0.2, 0.3, 0.004, 0.5, 123.0)]
    save_checkpoint(tmp_path / "ck", st)
    back = load_checkpoint(tmp_path / "ck")
    assert np.array_equal(back.params["udf"], st.params["udf"])
    assert np.array_equal(back.params["color"], st.params["color"])
    assert back.s == pytest.approx(123.0, rel=1e-15) and back.step == 17
    assert back.history == st.history
    header = (tmp_path / "ck" / "loss.csv").read_text().splitlines()[0]
    assert header == "iteration,L_color,L_eik,L_reg,L_s,total,s"


def test_upsample_preserves_linear_field():
    st = TrainState.create((5, 5, 5))
    grid = VoxelGrid.from_function(lambda q: 0.3 + 0.1 * q[..., 0] - 0.05 * q[..., 2], (5, 5, 5))
    st.params["udf"][:] = grid.data
    st.params["color"][:] = np.random.default_rng(0).uniform(size=(125, 3))
    st.m["udf"][:] = 1.0
    p = np.random.default_rng(1).uniform(-1, 1, size=(200, 3))
    before = st.udf_field().value(p)
    st.upsample((9, 9, 9))
    assert st.resolution == (9, 9, 9) and st.params["color"].shape == (729, 3)
    assert np.allclose(st.udf_field().value(p), before, atol=1e-12)
    assert np.allclose(st.m["udf"], 1.0) and st.v["udf"].shape == (729,)


def test_resolution_schedule():
    assert TrainConfig().resolution_schedule() == [(0, 16), (2000, 32), (5000, 64)]
    assert TrainConfig(upsample_at=()).resolution_schedule() == [(0, 64)]
    assert TrainConfig(iterations=10, resolution=6, upsample_at=(0.5,)).resolution_schedule() \
        == [(0, 3), (5, 6)]
    with pytest.raises(ValueError):
        TrainConfig(upsample_at=(1.0,))


def test_raw_floor_keeps_softplus_slope():
    st = _scalar_state(-0.04)
    for _ in range(50):
        adam_step(st, {"udf": np.array([1.0])}, lr=5e-3)
    assert st.params["udf"][0] == -0.05


def test_train_config_learning_rates():
    assert TrainConfig().lr == 5e-4
    rates = TrainConfig(lr=1e-3, lr_s=None, lr_udf=2e-3, lr_color=None).learning_rates()
    assert rates == {"udf": 2e-3, "color": 1e-3, "log_s": 1e-3}


# fitting -----------------------------------------------------------------------------
def test_fit_rejects_bad_inputs():
    scene = build_scene("sphere-shell", n_views=2, resolution=8)
    img = Image(8, 8, np.ones((8, 8, 3)))
    with pytest.raises(ValueError):
        fit([img], scene.cameras[:1])
    with pytest.raises(ValueError):
        fit([img], scene.cameras)


def test_regularizer_pushes_distances_up():
    """Uniform white images and no surface: mean f rises over 1k steps."""
    scene = build_scene("sphere-shell", n_views=4, resolution=16)
    images = [Image(16, 16, np.ones((16, 16, 3))) for _ in scene.cameras]
    cfg = TrainConfig(iterations=1000, batch_rays=64, resolution=8, init_distance=0.05,
                      eik_points=64, log_every=0)
    state = TrainState.create((8, 8, 8), init_distance=0.05)
    f0 = state.udf_field().value(grid_nodes((8, 8, 8))).mean()
    fit(images, scene.cameras, cfg, state)
    assert state.udf_field().value(grid_nodes((8, 8, 8))).mean() > f0
    assert all(np.isfinite(row[5]) for row in state.history)


def test_fit_near_fixed_point():
    """Grid initialized at the true field and trained on its own renders barely moves."""
    res, s = 24, 60.0
    scene = build_scene("sphere-shell", n_views=8, resolution=24)
    images = render_references(scene, s=s)
    nodes = grid_nodes((res, res, res))
    exact = scene.udf.value(nodes).ravel(order="F")
    state = TrainState.create((res, res, res), s_init=s)
    state.params["udf"] = np.array([inverse_softplus(max(v, 1e-3)) for v in exact])
    state.params["color"][:] = scene.color.rgb
    f0 = state.udf_field().value(nodes).copy()
    # every group at the global rate 5e-4
    cfg = TrainConfig(iterations=200, batch_rays=256, resolution=res, eik_points=256,
                      lr_udf=None, lr_s=None, log_every=0, seed=1)
    fit(images, scene.cameras, cfg, state)
    losses = [row[5] for row in state.history]
    assert max(losses) <= 2 * losses[0]
    assert np.abs(state.udf_field().value(nodes) - f0).max() < 0.05


def test_s_rises_during_fit():
    """Windowed mean of s over a short sphere fit is non-decreasing."""
    scene = build_scene("sphere-shell", n_views=12, resolution=32)
    images = render_references(scene, s=500.0)
    cfg = TrainConfig(iterations=1500, batch_rays=128, resolution=16, eik_points=128,
                      log_every=0, lr_udf=5e-3, lr_s=5e-3, seed=2)
    state = fit(images, scene.cameras, cfg)
    s = np.array([row[6] for row in state.history])
    windows = s.reshape(-1, 500).mean(axis=1)
    assert np.all(np.diff(windows) > 0)
