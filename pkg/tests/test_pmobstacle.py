import numpy as np
import pytest

from ildata.pmobstacle import (
    COLLISION, SUCCESS, TIMEOUT, EnvConfig, ExpertController, ScriptedExpert, collect_dataset,
    evaluate, expert_action, rollout, step, successful_only,
)

CFG = EnvConfig()


def test_step_identity_and_translation():
    rng = np.random.default_rng(0)
    assert np.array_equal(step([0.3, -0.2], [0.0, 0.0], 0.0, rng), [0.3, -0.2])
    assert np.array_equal(step([0.0, 0.0], [0.1, 0.0], 0.0, rng), [0.1, 0.0])


def test_step_clips_action_and_bounds():
    rng = np.random.default_rng(0)
    assert np.allclose(step([0.0, 0.0], [5.0, -5.0], 0.0, rng), [0.1, -0.1])
    assert np.allclose(step([0.98, -0.98], [0.1, -0.1], 0.0, rng), [1.0, -1.0])


def test_step_noise_std():
    rng = np.random.default_rng(1)
    state, action = np.array([0.0, 0.0]), np.array([0.05, -0.02])
    draws = np.array([step(state, action, 0.03, rng) - state - action for _ in range(100_000)])
    assert np.allclose(draws.std(axis=0), 0.03, rtol=0.02)


def test_expert_at_goal_stops():
    a, _ = expert_action(np.array(CFG.goal), ScriptedExpert(), np.random.default_rng(0), waypoint=2)
    assert np.allclose(a, 0.0)


def test_expert_below_first_waypoint_points_up():
    expert = ScriptedExpert()
    wx, wy = expert.waypoints[0]
    for dist in (0.05, 0.5):
        a, wp = expert_action(np.array([wx, wy - dist]), expert, np.random.default_rng(0))
        if dist > expert.switch_radius:
            assert wp == 0
            assert a[0] == pytest.approx(0.0, abs=1e-15)
            assert a[1] == pytest.approx(min(expert.gain * dist, CFG.action_limit))


def test_expert_noise_unbiased():
    expert = ScriptedExpert(sigma_p=0.02)
    state = np.array([-0.8, 0.0])
    nominal, _ = expert.nominal_action(state, 0, CFG.action_limit)
    rng = np.random.default_rng(2)
    acts = np.array([expert_action(state, expert, rng)[0] for _ in range(100_000)])
    se = acts.std(axis=0) / np.sqrt(len(acts))
    assert np.all(np.abs(acts.mean(axis=0) - nominal) <= 3 * se)


def test_expert_layout_validates():
    ScriptedExpert().validate(CFG)
    with pytest.raises(ValueError, match="crosses the obstacle"):
        ScriptedExpert(waypoints=((-0.5, 0.0), (0.8, 0.0))).validate(CFG)


def test_config_rejects_bad_geometry():
    with pytest.raises(ValueError):
        EnvConfig(goal=(0.1, 0.0))
    with pytest.raises(ValueError):
        EnvConfig(obstacle_radius=0.8)


def test_collect_noise_free_deterministic():
    a = collect_dataset(CFG, ScriptedExpert(), 1, seed=5)
    b = collect_dataset(CFG, ScriptedExpert(), 1, seed=5)
    assert a == b
    assert a.trajectories[0].success


def test_collect_records_applied_actions():
    ds = collect_dataset(CFG, ScriptedExpert(sigma_p=0.2), 5, seed=1)
    for t in ds.trajectories:
        assert np.abs(t.actions).max() <= CFG.action_limit
        # without system noise next state = clip(state + applied action)
        assert np.allclose(np.clip(t.states[:-1] + t.actions, -1, 1), t.states[1:])


def test_collect_metadata_and_env_id():
    ds = collect_dataset(EnvConfig(sigma_s=0.02), ScriptedExpert(sigma_p=0.01), 3, seed=0)
    assert ds.env_id == "pmobstacle-v1"
    assert ds.trajectories[0].metadata == {"sigma_s": 0.02, "sigma_p": 0.01}


@pytest.mark.parametrize("sigma_s,lo,hi", [(0.01, 97.0, 100.0), (0.04, 93.0, 99.0)])
def test_scripted_expert_success_rates(sigma_s, lo, hi):
    ds = collect_dataset(EnvConfig(sigma_s=sigma_s), ScriptedExpert(), 1000, seed=0)
    rate = 100.0 * np.mean([t.success for t in ds.trajectories])
    assert lo <= rate <= hi


def test_successful_only_filters():
    ds = collect_dataset(EnvConfig(sigma_s=0.05), ScriptedExpert(), 60, seed=3)
    kept = successful_only(ds)
    assert all(t.success for t in kept.trajectories)
    assert len(kept) == sum(t.success for t in ds.trajectories) < len(ds)


def test_evaluate_expert_and_zero_policy():
    rate, se = evaluate(ExpertController(ScriptedExpert()), CFG, 0.0, 50, seed=0)
    assert (rate, se) == (100.0, 0.0)
    assert evaluate(lambda s: np.zeros(2), CFG, 0.01, 20, seed=0)[0] == 0.0


def test_outcomes():
    rng = np.random.default_rng(0)
    assert rollout(lambda s: np.zeros(2), CFG, 0.0, rng).outcome == TIMEOUT
    # driving straight right hits the disc
    res = rollout(lambda s: np.array([0.1, 0.0]), CFG, 0.0, np.random.default_rng(0))
    assert res.outcome == COLLISION and not res.trajectory.success
    assert rollout(ExpertController(ScriptedExpert()), CFG, 0.0, rng).outcome == SUCCESS


def test_evaluate_common_seeds():
    pol = ExpertController(ScriptedExpert())
    assert evaluate(pol, CFG, 0.04, 30, seed=8) == evaluate(pol, CFG, 0.04, 30, seed=8)
