import numpy as np
import pytest

from sgrates.engine import NoiseSource, RecordingPlan, Trajectory, markov_run, run, sgd_step
from sgrates.objectives import power_norm, quadratic
from sgrates.regions import CompactRegion
from sgrates.schedule import StepSchedule


def test_sgd_step_examples():
    np.testing.assert_allclose(sgd_step([1.0], 0.1, [2.0], [0.0]), [0.8])
    np.testing.assert_allclose(sgd_step([1.0, -1.0], 0.5, [0.0, 0.0], [0.0, 0.0]), [1.0, -1.0])
    np.testing.assert_allclose(sgd_step([0.5], 0.25, [1.0], [-1.0]), [0.5])


def test_sgd_step_rejects_mismatch():
    with pytest.raises(ValueError):
        sgd_step([1.0, 2.0], 0.1, [1.0], [0.0])


def test_one_step_quadratic():
    tr = run(quadratic([[1.0]]), StepSchedule.explicit([0.5]), NoiseSource.none(), [1.0], 1)
    assert tr.final_theta[0] == 0.0
    assert list(tr.n) == [0, 1]
    assert tr.f[-1] == 0.0


def test_quartic_diverges():
    tr = run(power_norm(2, 1), StepSchedule.explicit([1.0] * 20), NoiseSource.none(), [10.0], 20)
    assert tr.stop_reason == "diverged"
    assert tr.metadata["steps_done"] <= 5


def test_determinism_and_seed_dependence():
    obj = quadratic(np.eye(3))
    s = StepSchedule.power_law(0.5, 0.75, 2)
    a = run(obj, s, NoiseSource.gaussian(1.0, 5), np.ones(3), 20_000)
    b = run(obj, s, NoiseSource.gaussian(1.0, 5), np.ones(3), 20_000)
    c = run(obj, s, NoiseSource.gaussian(1.0, 6), np.ones(3), 20_000)
    assert a.to_csv_text() == b.to_csv_text()
    assert a.to_csv_text() != c.to_csv_text()


def test_noise_none_is_exactly_zero():
    tr = run(quadratic(np.eye(2)), StepSchedule.power_law(), NoiseSource.none(), [1.0, 2.0], 100,
             plan=RecordingPlan(record_noise=True))
    assert np.all(tr.noise == 0.0)
    assert tr.noise.shape == (100, 2)


def test_recorded_noise_matches_single_draw():
    tr = run(quadratic(np.eye(2)), StepSchedule.power_law(), NoiseSource.gaussian(2.0, 9),
             [1.0, 2.0], 70_000, plan=RecordingPlan(record_noise=True))
    ref = 2.0 * np.random.Generator(np.random.PCG64(9)).standard_normal((70_000, 2))
    np.testing.assert_array_equal(tr.noise, ref)


def test_fast_path_matches_python_loop():
    obj = quadratic(np.diag([1.0, 2.0]))
    slow = obj.__class__(**{**obj.__dict__, "advance": None})
    s = StepSchedule.power_law(0.3, 0.8, 3)
    a = run(obj, s, NoiseSource.gaussian(0.5, 1), [1.0, -1.0], 3000)
    b = run(slow, s, NoiseSource.gaussian(0.5, 1), [1.0, -1.0], 3000)
    np.testing.assert_allclose(a.f, b.f, rtol=1e-12)


def test_descent_for_small_steps():
    A = np.diag([1.0, 3.0])
    s = StepSchedule.power_law(0.1, 0.9, 1)
    assert s.alpha(0) < 1 / (2 * 3.0)
    tr = run(quadratic(A), s, NoiseSource.none(), [1.0, 1.0], 10_000,
             plan=RecordingPlan(ratio=1.01))
    assert np.all(np.diff(tr.f) <= 0)


def test_region_exit_and_membership():
    obj = quadratic(np.eye(2))
    region = CompactRegion.ball((0.0, 0.0), 1.2)
    tr = run(obj, StepSchedule.power_law(1.0, 0.6, 1), NoiseSource.gaussian(3.0, 0), [1.0, 0.0],
             50_000, region=region, check_every=1, plan=RecordingPlan(keep_theta=True))
    assert tr.stop_reason == "exited_region"
    assert tr.exit_index == tr.n[-1]
    assert all(region.contains(t) for t in tr.theta[:-1])
    assert not region.contains(tr.theta[-1])


def test_recorded_gammas_match_schedule():
    s = StepSchedule.power_law(0.4, 0.7, 2)
    tr = run(quadratic(np.eye(1)), s, NoiseSource.none(), [1.0], 5000)
    assert np.all(np.diff(tr.n) > 0)
    np.testing.assert_array_equal(tr.gamma, s.gammas(5000)[tr.n])


def test_csv_roundtrip(tmp_path):
    tr = run(power_norm(2, 2), StepSchedule.power_law(0.2, 1.0, 10), NoiseSource.none(), [1.0, 0.5],
             2000)
    p = tmp_path / "t.csv"
    tr.save(p)
    back = Trajectory.load(p)
    np.testing.assert_array_equal(back.n, tr.n)
    np.testing.assert_array_equal(back.f, tr.f)
    np.testing.assert_array_equal(back.dist_S, tr.dist_S)
    assert back.to_csv_text() == tr.to_csv_text()
    assert p.read_text().splitlines()[0] == "n,gamma,f,grad_norm_sq,dist_S"


class _Frozen:
    """Markov app that never moves: used for the N = 0 and plumbing checks."""

    dim = 2
    objective = quadratic(np.eye(2))

    def reset(self, seed):
        self.seed = seed

    def advance(self, theta, alphas):
        return theta, alphas.size, False

    def describe(self):
        return {"name": "frozen"}


def test_markov_run_zero_steps():
    tr = markov_run(_Frozen(), StepSchedule.power_law(), [1.0, 0.0], 0)
    assert list(tr.n) == [0]
    assert tr.f[0] == 1.0


def test_markov_run_records_exact_oracle():
    tr = markov_run(_Frozen(), StepSchedule.power_law(), [1.0, 1.0], 1000, seed=3)
    assert np.all(tr.f == 2.0)
    assert tr.metadata["seed"] == 3
