from dataclasses import replace
from itertools import combinations

import numpy as np
import pytest

from stlmarl.env import EnvironmentConfigError, MultiAgentEnv, ParticleConfig, ParticleEnv, ParticleState, make_env, particle
from stlmarl.stl import FormulaConfig, Trace, Until, channels_of, parse_formula, robustness

def test_reset_layout():
    env = ParticleEnv(ParticleConfig(n_agents=3))
    obs, _ = env.reset(seed=0)
    assert obs.shape == (3, env.obs_dim) == (3, 2 + 12 + 4)
    assert env.state.landmarks.shape == (2, 3, 2)
    points = np.concatenate([env.state.positions, env.state.landmarks.reshape(-1, 2)])
    assert all(np.linalg.norm(p - q) > env.config.collision_radius for p, q in combinations(points, 2))
    assert np.abs(points).max() <= env.config.arena
    assert not env.state.velocities.any()

def test_reset_is_deterministic():
    first, second = ParticleEnv(), ParticleEnv()
    np.testing.assert_array_equal(first.reset(seed=4)[0], second.reset(seed=4)[0])
    np.testing.assert_array_equal(first.state.landmarks, second.state.landmarks)
    assert not np.array_equal(first.reset(seed=5)[0], second.reset(seed=6)[0])

def test_environment_hooks_are_abstract():
    for hook in ("step", "formula_texts", "channel_names", "channels", "reached", "layout"):
        assert getattr(MultiAgentEnv, hook).__isabstractmethod__, hook

def test_invalid_configuration():
    with pytest.raises(EnvironmentConfigError):
        ParticleConfig(n_agents=0)
    with pytest.raises(EnvironmentConfigError):
        ParticleConfig(damping=1.0)
    with pytest.raises(EnvironmentConfigError):
        make_env("highway")

def place(env, positions, landmarks=None):
    env.reset(seed=0)
    n = len(positions)
    env.state.positions = np.array(positions, dtype=np.float64)
    env.state.velocities = np.zeros((n, 2))
    if landmarks is not None:
        env.state.landmarks = np.array(landmarks, dtype=np.float64)

def test_step_from_rest():
    env = ParticleEnv(ParticleConfig(n_agents=2))
    place(env, [[0.0, 0.0], [0.5, 0.5]])
    obs, rewards, terminated, truncated, info = env.step([2, 0])
    # force 1, mass 1, dt 0.1: v' = 0.1, p' = p + 0.01
    np.testing.assert_allclose(env.state.velocities, [[0.1, 0.0], [0.0, 0.0]])
    np.testing.assert_allclose(env.state.positions, [[0.01, 0.0], [0.5, 0.5]])
    np.testing.assert_allclose(obs[0, :2], [0.1, 0.0])
    assert rewards.shape == (2,) and rewards[0] == rewards[1]
    assert not terminated and not truncated and info["collisions"] == []

def test_damping_and_arena_clipping():
    env = ParticleEnv(ParticleConfig(n_agents=1))
    place(env, [[0.999, 0.0]])
    env.state.velocities = np.array([[1.0, 0.0]])
    env.step([2])
    np.testing.assert_allclose(env.state.velocities, [[0.75 + 0.1, 0.0]])
    assert env.state.positions[0, 0] == 1.0

def test_collisions():
    env = ParticleEnv(ParticleConfig(n_agents=3))
    place(env, [[0.0, 0.0], [0.15, 0.0], [0.8, 0.8]])
    _, _, _, _, info = env.step([0, 0, 0])
    assert info["collisions"] == [(0, 1)]
    np.testing.assert_array_equal(env.agent_collisions(), [1, 1, 0])

def test_invalid_actions():
    env = ParticleEnv()
    env.reset(seed=0)
    with pytest.raises(ValueError):
        env.step([0, 5])
    with pytest.raises(ValueError):
        env.step([0])

def test_truncation():
    env = ParticleEnv(ParticleConfig(episode_length=3))
    env.reset(seed=0)
    assert [env.step([0, 0])[3] for _ in range(3)] == [False, False, True]

def state_with(positions, landmarks, stage=0):
    positions = np.array(positions, dtype=np.float64)
    return ParticleState(
        positions=positions,
        velocities=np.zeros_like(positions),
        landmarks=np.array(landmarks, dtype=np.float64),
        visited=np.zeros(len(positions), dtype=bool),
        stage=stage,
    )

def test_baseline_reward_on_goals():
    landmarks = [[[0.0, 0.0], [1.0, 0.0]], [[0.5, 0.5], [-0.5, 0.5]]]
    state = state_with([[0.0, 0.0], [1.0, 0.0]], landmarks)
    config = ParticleConfig(c2=0.0)
    assert particle.baseline_reward(state, config) == 0
    assert particle.baseline_reward(state, config, n_collisions=1) == -1

def test_baseline_reward_hand_built():
    landmarks = [[[0.0, 1.0], [1.0, 1.0]], [[0.5, 0.0], [0.0, 0.0]]]
    state = state_with([[0.0, 0.0], [1.0, 0.0]], landmarks)
    coordination = ParticleConfig(c1=1.0, c2=0.1)
    # goals at distance 1 each, other stage at 0.5 and 1
    assert particle.baseline_reward(state, coordination) == pytest.approx(-2.0 + 0.1 * 1.5)
    spread = ParticleConfig(task="spread", c1=1.0, c2=0.1)
    # closest agents: 1 and 1 to the goals, 0.5 and 0 to the others
    assert particle.baseline_reward(state, spread) == pytest.approx(-2.0 + 0.1 * 0.5)
    state.stage = 1
    assert particle.baseline_reward(state, coordination) == pytest.approx(-1.5 + 0.1 * 2.0)

def test_stage_switch():
    env = ParticleEnv(ParticleConfig(n_agents=2), FormulaConfig(eps1=0.1))
    landmarks = [[[0.0, 0.0], [0.5, 0.0]], [[0.5, 0.5], [-0.5, 0.5]]]
    place(env, [[0.0, 0.0], [0.9, 0.0]], landmarks)
    assert env.step([0, 0])[4]["stage"] == 0
    env.state.positions[1] = [0.5, 0.0]
    assert env.step([0, 0])[4]["stage"] == 1
    env.state.positions[1] = [0.9, 0.0]
    assert env.step([0, 0])[4]["stage"] == 1

def test_formulas_and_channels():
    for task in ("coordination", "spread"):
        env = ParticleEnv(ParticleConfig(n_agents=3, task=task))
        env.reset(seed=0)
        formulas = env.formulas()
        assert len(formulas) == 3 and all(len(agent) == 4 for agent in formulas)
        names = set(env.channel_names())
        assert set(env.channels()) == names
        assert all(channels_of(formula) <= names for agent in formulas for formula in agent)
    single = ParticleEnv(ParticleConfig(n_agents=1))
    assert len(single.formulas()[0]) == 3

def test_formulas_on_recorded_trace():
    env = ParticleEnv(ParticleConfig(n_agents=2, episode_length=10))
    env.reset(seed=1)
    rows = list()
    for _ in range(10):
        env.step([0, 0])
        rows.append(env.channels())
    trace = Trace.from_rows(rows, env.dt)
    d_safe = env.formula_config.d_safe
    distance = trace["d_a1_a2"].min()
    separation = env.formulas()[0][-1]
    assert robustness(separation, trace) == pytest.approx(distance - d_safe)

def test_layout_mentions_every_entity():
    env = ParticleEnv(ParticleConfig(n_agents=2))
    env.reset(seed=0)
    layout = env.layout()
    assert "agent 2" in layout and "landmark 2.2" in layout

def random_state(rng, n_agents):
    return ParticleState(
        positions=rng.uniform(-1, 1, (n_agents, 2)),
        velocities=rng.uniform(-1, 1, (n_agents, 2)),
        landmarks=rng.uniform(-1, 1, (2, n_agents, 2)),
        visited=np.zeros(n_agents, dtype=bool),
        stage=int(rng.integers(2)),
    )

def test_observation_is_translation_invariant():
    rng = np.random.default_rng(0)
    for _ in range(20):
        state = random_state(rng, 3)
        shift = rng.uniform(-5, 5, 2)
        moved = replace(state, positions=state.positions + shift, landmarks=state.landmarks + shift)
        for i in range(3):
            np.testing.assert_allclose(particle.observe(moved, i), particle.observe(state, i), atol=1e-12)

def test_observation_on_a_landmark():
    state = random_state(np.random.default_rng(1), 2)
    state.positions[1] = state.landmarks[1, 0]
    obs = particle.observe(state, 1)
    assert len(obs) == 2 + 2 * 4 + 2
    # velocity, then landmarks in stage-major order: stage 2, landmark 1 follows the two of stage 1
    assert obs[2 + 2 * 2:2 + 2 * 3].tolist() == [0.0, 0.0]
    np.testing.assert_array_equal(obs[:2], state.velocities[1])

def reference_reward(state, config, n_collisions):
    n = len(state.positions)
    goal, others = state.landmarks[state.stage], state.landmarks[1 - state.stage]
    to_goal = to_others = 0.0
    for k in range(n):
        if config.task == "coordination":
            to_goal += np.hypot(*(state.positions[k] - goal[k]))
            to_others += np.hypot(*(state.positions[k] - others[k]))
        else:
            to_goal += min(np.hypot(*(p - goal[k])) for p in state.positions)
            to_others += min(np.hypot(*(p - others[k])) for p in state.positions)
    return -config.c1 * to_goal + config.others_sign * config.c2 * to_others + config.collision_penalty * n_collisions

@pytest.mark.parametrize("task", ["coordination", "spread"])
def test_baseline_reward_on_random_states(task):
    rng = np.random.default_rng(2)
    config = ParticleConfig(n_agents=3, task=task, c2=0.3, others_sign=-1.0)
    for _ in range(100):
        state, collisions = random_state(rng, 3), int(rng.integers(3))
        assert particle.baseline_reward(state, config, collisions) == pytest.approx(
            reference_reward(state, config, collisions), rel=1e-12, abs=1e-12
        )

def test_energy_dissipation():
    env = ParticleEnv(ParticleConfig(n_agents=2))
    place(env, [[0.0, 0.0], [0.5, 0.5]])
    env.state.velocities = np.array([[0.3, -0.2], [-0.1, 0.4]])
    speeds = np.linalg.norm(env.state.velocities, axis=-1)
    for k in range(1, 8):
        env.step([0, 0])
        np.testing.assert_allclose(np.linalg.norm(env.state.velocities, axis=-1), speeds * 0.75 ** k, rtol=1e-12)

def test_recorded_channels_match_state_history():
    env = ParticleEnv(ParticleConfig(n_agents=3))
    env.reset(seed=3)
    rng = np.random.default_rng(3)
    rows, history = list(), list()
    for _ in range(env.episode_length):
        env.step(rng.integers(env.n_actions, size=3))
        rows.append(env.channels())
        history.append((env.state.positions.copy(), env.state.landmarks.copy()))
    trace = Trace.from_rows(rows, env.dt)
    for t, (positions, landmarks) in enumerate(history):
        for i in range(3):
            for stage in range(2):
                for k in range(3):
                    expected = np.hypot(*(positions[i] - landmarks[stage, k]))
                    assert abs(trace[f"d_a{i+1}_lm{stage+1}_{k+1}"][t] - expected) <= 1e-12
            for j in range(i + 1, 3):
                assert abs(trace[f"d_a{i+1}_a{j+1}"][t] - np.hypot(*(positions[i] - positions[j]))) <= 1e-12

def ordering_trace(first, second):
    return Trace({"d_a1_lm1_1": first, "d_a1_lm2_1": second})

def test_first_stage_must_be_visited_first():
    config, formula = ParticleConfig(n_agents=1, episode_length=4), FormulaConfig(eps1=0.1, eps2=0.1)
    (agent,) = particle.stl_formulas(config, formula)[0]
    ordering = parse_formula(agent[2])
    assert isinstance(ordering, Until)
    in_order = ordering_trace([1.0, 0.0, 1.0, 1.0], [1.0, 1.0, 0.0, 1.0])
    assert robustness(ordering, in_order) == pytest.approx(0.1)
    out_of_order = ordering_trace([1.0, 1.0, 0.0, 1.0], [0.0, 1.0, 1.0, 1.0])
    assert robustness(ordering, out_of_order) == pytest.approx(-0.1)
    # both visit formulas hold on either trace
    for trace in (in_order, out_of_order):
        assert robustness(parse_formula(agent[0]), trace) > 0

def test_spread_ordering_watches_every_second_stage_landmark():
    config = ParticleConfig(n_agents=2, task="spread", episode_length=10)
    formulas, _ = particle.stl_formulas(config, FormulaConfig())
    ordering = parse_formula(formulas[0][2])
    assert channels_of(ordering) == {"d_a1_lm2_1", "d_a1_lm2_2", "d_a1_lm1_1", "d_a2_lm1_1", "d_a1_lm1_2", "d_a2_lm1_2"}
