import json

import numpy as np
import pytest

from qm2arl import analysis, qnn, train
from qm2arl.analysis import LemmaReport, PoleGrid
from qm2arl.envs import TwoStepEnv, twostep_optimal_q
from qm2arl.errors import ArgumentError, DegenerateGridError, DomainError, SizeError
from qm2arl.qnn import QnnConfig
from qm2arl.train import NoiseSpec, TrainConfig

CONFIG = QnnConfig()


def random_case(seed):
    return analysis.random_check_config(np.random.default_rng(seed), CONFIG)


@pytest.mark.parametrize("alpha,expected", [(0.0, 1.0), (np.pi / 2, 2 / np.pi), (np.pi, 0.0)])
def test_noise_factor(alpha, expected):
    assert analysis.noise_factor(alpha) == pytest.approx(expected, abs=1e-15)


@pytest.mark.parametrize("alpha", [np.pi / 6, np.pi / 4, np.pi / 3, np.pi / 2])
def test_noisy_q_contracts(alpha):
    phi, theta, o, a = random_case(int(np.degrees(alpha)))
    report = analysis.lemma1_check(phi, theta, alpha, o, a, 20000, CONFIG, seed=1)
    assert report.passed
    assert report.lemma == "contraction"
    assert report.factor == pytest.approx(np.sin(alpha) / alpha)
    assert report.sample_count == 20000
    assert report.standard_error > 0


def test_contraction_without_noise_is_exact():
    phi, theta, o, a = random_case(3)
    report = analysis.lemma1_check(phi, theta, 0.0, o, a, 10, CONFIG)
    assert report.monte_carlo_estimate == report.analytic_prediction
    assert report.monte_carlo_estimate == qnn.q_value(o, a, phi, theta, CONFIG)
    assert report.passed


@pytest.mark.parametrize("alpha", [np.pi / 6, np.pi / 3, np.pi / 2])
def test_quadrature_matches_prediction(alpha):
    phi, theta, o, a = random_case(4)
    average = analysis.lemma1_quadrature(phi, theta, alpha, o, a, CONFIG)
    prediction = analysis.noise_factor(alpha) * qnn.q_value(o, a, phi, theta, CONFIG)
    assert average == pytest.approx(prediction, abs=1e-8)


def test_contraction_checks_arguments():
    phi, theta, o, a = random_case(5)
    with pytest.raises(DomainError):
        analysis.lemma1_check(phi, theta, -0.1, o, a, 100, CONFIG)
    with pytest.raises(ArgumentError):
        analysis.lemma1_check(phi, theta, 0.5, o, a, 1, CONFIG)
    config = QnnConfig(action_qubits=((2, 3), (1,)))
    with pytest.raises(ArgumentError):
        analysis.lemma1_quadrature(qnn.zero_angles(config), theta, 0.5, o, 0, config)


def test_lemma1_suite_is_seeded():
    first = analysis.lemma1_suite([np.pi / 4, np.pi / 2], 2, 2000, CONFIG, seed=7)
    second = analysis.lemma1_suite([np.pi / 4, np.pi / 2], 2, 2000, CONFIG, seed=7)
    assert len(first) == 4
    assert [r.alpha for r in first] == [np.pi / 4] * 2 + [np.pi / 2] * 2
    assert [r.monte_carlo_estimate for r in first] == [r.monte_carlo_estimate for r in second]


def test_variance_bound_holds():
    reports = analysis.lemma3_suite(np.pi / 3, 3, 20000, CONFIG, seed=0)
    assert len(reports) == 3
    for report in reports:
        assert report.lemma == "variance_bound"
        assert report.analytic_prediction > 0
        assert report.passed


def test_variance_without_noise():
    rng = np.random.default_rng(8)
    phi, phi_target = qnn.random_angles(CONFIG, rng), qnn.random_angles(CONFIG, rng)
    episode = analysis.random_episode(rng, CONFIG, reward_range=(8.0, 10.0))
    report = analysis.lemma3_check(phi, phi_target, np.zeros(6), 0.0, episode, 4, 100, CONFIG)
    assert report.monte_carlo_estimate == 0.0
    assert report.analytic_prediction >= 0
    assert report.passed


def test_variance_check_arguments():
    rng = np.random.default_rng(9)
    phi = qnn.random_angles(CONFIG, rng)
    episode = analysis.random_episode(rng, CONFIG)
    with pytest.raises(SizeError):
        analysis.lemma3_check(phi, phi, np.zeros(6), 0.5, episode, 45, 100, CONFIG)
    with pytest.raises(ArgumentError):
        analysis.lemma3_check(phi, phi, np.zeros(6), 0.5, [], 0, 100, CONFIG)
    config = QnnConfig(action_qubits=((2, 3), (1,)))
    with pytest.raises(ArgumentError):
        analysis.lemma3_check(phi, phi, np.zeros(6), 0.5, episode, 0, 100, config)


def test_random_episode_layout():
    episode = analysis.random_episode(
        np.random.default_rng(10), CONFIG, length=3, num_agents=2, reward_range=(8.0, 10.0)
    )
    assert [t.terminal for t in episode] == [False, False, True]
    assert all(t.num_agents == 2 for t in episode)
    assert all(8 * CONFIG.beta <= t.reward <= 10 * CONFIG.beta for t in episode)


def test_lemma_record():
    report = LemmaReport.contraction(np.pi / 6, 1.0, 1.0, 100, 0.1)
    record = report.to_record()
    assert record["alpha_degrees"] == pytest.approx(30.0)
    assert record["lemma"] == "contraction"
    assert record["passed"] is True


def test_lemma_records_are_plain_json():
    phi, theta, o, a = random_case(18)
    reports = [
        analysis.lemma1_check(phi, theta, np.pi / 4, o, a, 1000, CONFIG, seed=2),
        analysis.lemma3_suite(np.pi / 3, 1, 1000, CONFIG, seed=2)[0],
    ]
    for report in reports:
        record = report.to_record()
        assert type(record["passed"]) is bool
        assert type(record["analytic_prediction"]) is float
        assert json.loads(json.dumps(record)) == record


def test_variance_reward_range():
    episode = analysis.random_episode(
        np.random.default_rng(19), CONFIG, reward_range=analysis.VARIANCE_REWARD_RANGE
    )
    low, high = analysis.VARIANCE_REWARD_RANGE
    assert (low, high) == (8.0, 10.0)
    assert all(low * CONFIG.beta <= t.reward <= high * CONFIG.beta for t in episode)


def test_grid_axis():
    axis = analysis.grid_axis()
    assert axis.shape == (33,)
    assert axis[0] == -np.pi and axis[-1] == np.pi
    assert axis[16] == 0.0
    np.testing.assert_allclose(np.diff(axis), np.pi / 16)


def test_pole_grid_origin_is_the_meta_model():
    phi, _, o, _ = random_case(11)
    grid = analysis.pole_grid_probe(phi, o, CONFIG, state_label="s1")
    assert grid.values.shape == (33, 33)
    assert grid.coordinates == (2, 3)
    assert grid.origin() == np.max(qnn.q_values_all(o, phi, qnn.zero_poles(CONFIG), CONFIG))
    rows = list(grid.rows())
    assert len(rows) == 33 * 33
    assert rows[0][:2] == (-np.pi, -np.pi)


def test_pole_grid_follows_polar_angle():
    grid = analysis.pole_grid_probe(qnn.zero_angles(CONFIG), np.zeros(3), CONFIG, action_set=(0,))
    expected = CONFIG.beta * np.cos(grid.axis_values)[:, None] * np.ones((1, 33))
    np.testing.assert_allclose(grid.values, expected, atol=1e-12)


def test_pole_grid_is_periodic():
    phi, _, o, _ = random_case(12)
    grid = analysis.pole_grid_probe(phi, o, CONFIG, coordinates=(4, 5))
    np.testing.assert_allclose(grid.values[0, :], grid.values[-1, :], atol=1e-12)
    np.testing.assert_allclose(grid.values[:, 0], grid.values[:, -1], atol=1e-12)


def test_pole_grid_arguments():
    phi, _, o, _ = random_case(13)
    with pytest.raises(ArgumentError):
        analysis.pole_grid_probe(phi, o, CONFIG, action_set=())
    with pytest.raises(SizeError):
        analysis.pole_grid_probe(phi, o, CONFIG, coordinates=(0, 6))


def test_normalized_distance():
    phi, _, o, _ = random_case(14)
    grid = analysis.pole_grid_probe(phi, o, CONFIG)
    normalized = analysis.d_norm(grid, 8.0)
    distance = analysis.distance_grid(grid, 8.0)
    assert np.all(normalized >= 0)
    assert np.argmin(normalized) == np.argmin(distance)
    assert normalized.max() - normalized.min() == pytest.approx(1.0)


def test_normalized_distance_of_a_perfect_grid():
    axis = analysis.grid_axis()
    grid = PoleGrid(axis, np.full((33, 33), 8.0))
    np.testing.assert_array_equal(analysis.d_norm(grid, 8.0), 0.0)


def test_normalized_distance_of_a_constant_grid():
    axis = analysis.grid_axis()
    grid = PoleGrid(axis, np.full((33, 33), 5.0))
    with pytest.raises(DegenerateGridError):
        analysis.d_norm(grid, 8.0)


def test_optimal_q_distance():
    rng = np.random.default_rng(15)
    phi = qnn.random_angles(CONFIG, rng)
    poles = rng.uniform(-np.pi, np.pi, (2, 6))
    per_state = analysis.state_distances("twostep-a", phi, poles, CONFIG)
    assert set(per_state) == {"s1", "s2", "s3"}
    assert all(value >= 0 for value in per_state.values())
    total = analysis.optimal_q_distance("twostep-a", phi, poles, CONFIG)
    assert total == pytest.approx(sum(per_state.values()))


def oracle_local_values(monkeypatch, tables):
    """Make the team's local Q-values follow `tables`, one entry per state s1..s3."""
    pending = iter(tables)
    monkeypatch.setattr(analysis, "local_q_values", lambda *args: np.array(next(pending)))


ENV_A_OPTIMUM = [
    [[0.0, 8.0], [8.0, 8.0]],
    [[4.0, 4.0], [4.0, 4.0]],
    [[0.0, 8.0], [0.0, 8.0]],
]


def test_distance_vanishes_when_greedy_values_match_the_oracle(monkeypatch):
    oracle_local_values(monkeypatch, ENV_A_OPTIMUM)
    phi, poles = qnn.zero_angles(CONFIG), np.zeros((2, 6))
    per_state = analysis.state_distances("twostep-a", phi, poles, CONFIG)
    assert per_state == {"s1": 0.0, "s2": 0.0, "s3": 0.0}


def test_env_a_optimum_is_far_from_env_b(monkeypatch):
    oracle_local_values(monkeypatch, ENV_A_OPTIMUM * 2)
    phi, poles = qnn.zero_angles(CONFIG), np.zeros((2, 6))
    near = analysis.optimal_q_distance("twostep-a", phi, poles, CONFIG)
    far = analysis.optimal_q_distance("twostep-b", phi, poles, CONFIG)
    assert near == 0.0
    # greedy (1, 1) at s3 earns 1 instead of 8 in Env B
    assert far == 7.0


def test_local_q_values():
    rng = np.random.default_rng(16)
    phi = qnn.random_angles(CONFIG, rng)
    poles = rng.uniform(-np.pi, np.pi, (2, 6))
    joint_obs = (np.full(3, 0.5), np.full(3, 1.5))
    local = analysis.local_q_values(phi, poles, joint_obs, CONFIG)
    assert local.shape == (2, 2)
    np.testing.assert_array_equal(local[1], qnn.q_values_all(joint_obs[1], phi, poles[1], CONFIG))


def test_qtable_rows():
    phi = qnn.random_angles(CONFIG, np.random.default_rng(17))
    table = analysis.meta_qtable("twostep-main", phi, CONFIG)
    assert table.shape == (3, 2)
    rows = analysis.qtable_rows("twostep-main", phi, CONFIG)
    assert [(r[0], r[1]) for r in rows] == [
        ("s1", 0), ("s1", 1), ("s2", 0), ("s2", 1), ("s3", 0), ("s3", 1)
    ]
    assert [r[3] for r in rows] == [7.0, 4.5, 7.0, 7.0, 0.5, 4.5]
    assert rows[5][2] == table[2, 1]


def test_gradcheck_passes():
    report = analysis.gradcheck_suite(n_configs=3, seed=0)
    assert report.passed
    assert set(report.max_deviation) == {"angle", "pole", "meta_loss", "pole_loss"}
    assert report.n_configs == 3


def test_gradcheck_catches_a_sign_error():
    report = analysis.gradcheck_suite(n_configs=2, seed=0, sabotage=True)
    assert not report.passed
    assert report.failures == ["angle"]


def test_gradcheck_needs_a_configuration():
    with pytest.raises(ArgumentError):
        analysis.gradcheck_suite(n_configs=0)


def test_worker_count(monkeypatch):
    monkeypatch.setenv("QM2ARL_THREADS", "3")
    assert analysis.worker_count() == 3
    monkeypatch.setenv("QM2ARL_THREADS", "0")
    assert analysis.worker_count() >= 1
    monkeypatch.setenv("QM2ARL_THREADS", "many")
    with pytest.raises(ArgumentError):
        analysis.worker_count()


def test_parallel_map_keeps_order(monkeypatch):
    monkeypatch.setenv("QM2ARL_THREADS", "4")
    assert analysis.parallel_map(lambda x: x * x, range(10)) == [x * x for x in range(10)]


@pytest.mark.slow
def test_contraction_at_full_sample_count():
    reports = analysis.lemma1_suite(
        [np.pi / 6, np.pi / 4, np.pi / 3, np.pi / 2], 10, 200000, CONFIG, seed=0
    )
    assert all(report.passed for report in reports)


@pytest.mark.slow
def test_variance_bound_at_full_sample_count():
    reports = analysis.lemma3_suite(np.pi / 3, 10, 200000, CONFIG, seed=0)
    assert all(report.passed for report in reports)


@pytest.mark.slow
def test_trained_meta_model_is_closest_at_the_pole_origin():
    config = TrainConfig(meta_epochs=2000, learning_rate=5e-3, log_every=500, noise=NoiseSpec(0.0))
    env = TwoStepEnv("twostep-main")
    phi = train.train_meta(CONFIG, config, [env]).phi
    grid = analysis.pole_grid_probe(phi, env.probe_observations()["s1"][0], CONFIG)
    q_star = float(twostep_optimal_q("twostep-main", "uniform")["s1"].max())
    normalized = analysis.d_norm(grid, q_star)
    assert normalized[16, 16] <= normalized.mean()
