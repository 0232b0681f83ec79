import numpy as np
import pytest

from billboard_splatting.optimizer import Adam, TrainConfig, position_lr


def test_zero_gradient_leaves_parameters():
    p = {"a": np.array([1.0, -2.0])}
    opt = Adam(p)
    opt.step(p, {"a": np.zeros(2)}, {"a": 0.1})
    np.testing.assert_array_equal(p["a"], [1.0, -2.0])


def test_first_step_by_hand():
    p = {"a": np.array([0.0])}
    Adam(p).step(p, {"a": np.array([1.0])}, {"a": 0.1})
    # m_hat = 1, v_hat = 1, so the step is lr / (1 + eps)
    assert p["a"][0] == pytest.approx(-0.1 / (1 + 1e-15), rel=1e-12)


def test_matches_scalar_simulation():
    rng = np.random.default_rng(0)
    grads = rng.normal(size=50)
    p = {"a": np.array([0.3])}
    opt = Adam(p, beta1=0.8, beta2=0.99, eps=1e-8)
    x, m, v = 0.3, 0.0, 0.0
    for t, g in enumerate(grads, 1):
        opt.step(p, {"a": np.array([g])}, {"a": 0.01})
        m = 0.8 * m + 0.2 * g
        v = 0.99 * v + 0.01 * g * g
        x -= 0.01 * (m / (1 - 0.8 ** t)) / (np.sqrt(v / (1 - 0.99 ** t)) + 1e-8)
    assert p["a"][0] == pytest.approx(x, rel=1e-12)


def test_constant_gradient_drifts_monotonically():
    p = {"a": np.array([0.0])}
    opt = Adam(p)
    trace = []
    for _ in range(100):
        opt.step(p, {"a": np.array([0.5])}, {"a": 0.01})
        trace.append(p["a"][0])
    assert np.all(np.diff(trace) < 0)


def test_nan_components_are_skipped():
    p = {"a": np.array([1.0, 1.0, 1.0])}
    opt = Adam(p)
    opt.step(p, {"a": np.array([np.nan, 1.0, np.inf])}, {"a": 0.1})
    assert p["a"][0] == 1.0 and p["a"][2] == 1.0 and p["a"][1] < 1.0
    assert opt.nan_skipped == 2


def test_groups_limit_updates_and_float32_is_kept():
    p = {"a": np.ones(2, dtype=np.float32), "b": np.ones(2, dtype=np.float32)}
    opt = Adam(p)
    opt.step(p, {"a": np.ones(2), "b": np.ones(2)}, {"a": 0.1, "b": 0.1}, groups=("a",))
    assert p["a"].dtype == np.float32
    np.testing.assert_array_equal(p["b"], [1, 1])
    assert not opt.m["b"].any()


def test_resize_and_reset():
    p = {"a": np.ones((2, 3))}
    opt = Adam(p)
    opt.step(p, {"a": np.ones((2, 3))}, {"a": 0.1})
    opt.resize(4)
    assert opt.m["a"].shape == (4, 3) and not opt.m["a"][2:].any()
    opt.reset([0])
    assert not opt.m["a"][0].any() and opt.m["a"][1].all()


def test_position_schedule():
    cfg = TrainConfig()
    assert position_lr(0, cfg) == pytest.approx(1.6e-4)
    assert position_lr(30_000, cfg) == pytest.approx(1.6e-6)
    assert position_lr(15_000, cfg) == pytest.approx(1.6e-5)
    cfg = TrainConfig(spatial_scale=3.0)
    assert position_lr(0, cfg) == pytest.approx(4.8e-4)


def test_config_round_trip_and_validation():
    cfg = TrainConfig(total_steps=100, densify_start=10, densify_end=50, background=[1, 1, 1])
    again = TrainConfig.from_dict(cfg.to_dict())
    assert again == cfg and again.background == (1.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        TrainConfig.from_dict({"no_such_key": 1})
    with pytest.raises(ValueError):
        TrainConfig(densify_start=600, densify_end=100)
    assert set(cfg.group_lrs(0)) == {"position", "log_scale", "rotation", "sh", "color_texture", "opacity_logits"}
