import numpy as np
import pytest

from dosmpc import data, lti
from dosmpc.errors import DimensionError
from conftest import fresh_windows


class TestBuildHankel:
    def test_scalar_definition(self):
        h = data.build_hankel([1.0, 2.0, 3.0, 4.0], 2)
        np.testing.assert_array_equal(h, [[1, 2, 3], [2, 3, 4]])

    def test_constant_sequence_rank_one(self):
        h = data.build_hankel(np.full((9, 1), 3.7), 4)
        assert np.linalg.matrix_rank(h) == 1

    def test_fixture_shape_arithmetic(self, clean_record):
        h = data.build_hankel(clean_record.inputs, 12)
        assert h.shape == (24, 89)

    def test_too_short_raises(self):
        with pytest.raises(DimensionError):
            data.build_hankel(np.zeros((3, 1)), 4)

    def test_shift_property_exact(self, clean_record):
        # deleting the first block row of H_{L+1} equals H_L of the shifted sequence
        seq = clean_record.outputs
        n_y = seq.shape[1]
        deep = data.build_hankel(seq, 6)
        shifted = data.build_hankel(seq[1:], 5)
        assert np.array_equal(deep[n_y:], shifted[:, : deep.shape[1]])


class TestPersistencyOfExcitation:
    def test_constant_input_fails(self):
        report = data.is_persistently_exciting(np.full((50, 1), 2.0), 2)
        assert not report.excited and report.rank == 1

    def test_zero_input_fails(self):
        report = data.is_persistently_exciting(np.zeros((50, 2)), 1)
        assert not report.excited

    def test_seeded_uniform_is_exciting(self):
        rng = np.random.default_rng(3)
        u = rng.uniform(-1, 1, (100, 2))
        report = data.is_persistently_exciting(u, 16)
        assert report.excited and report.rank == 32
        assert report.sigma_min > report.tolerance

    def test_too_short_is_trivially_false(self):
        report = data.is_persistently_exciting(np.ones((5, 2)), 8)
        assert not report.excited and report.rank == 0

    def test_failure_is_monotone_in_order(self):
        # constant input: rank 1 at every order, so failing at k implies k+1
        u = np.full((60, 1), 1.0)
        reports = [data.is_persistently_exciting(u, k) for k in range(2, 8)]
        assert all(not r.excited for r in reports)
        # random-but-short record: once the column budget fails it stays failed
        rng = np.random.default_rng(5)
        u2 = rng.uniform(-1, 1, (20, 2))
        excited = [data.is_persistently_exciting(u2, k).excited for k in range(1, 12)]
        first_fail = excited.index(False)
        assert not any(excited[first_fail:])


class TestCollectOffline:
    def test_determinism(self, reactor):
        a = data.collect_offline(reactor, 80, 10, amplitude=0.5, noise_bound=1e-3, seed=9)
        b = data.collect_offline(reactor, 80, 10, amplitude=0.5, noise_bound=1e-3, seed=9)
        assert np.array_equal(a.inputs, b.inputs)
        assert np.array_equal(a.outputs, b.outputs)

    def test_certificate_present(self, clean_record):
        assert clean_record.pe is not None and clean_record.pe.excited
        assert clean_record.pe.order == 16

    def test_shape_precondition(self, reactor):
        with pytest.raises(DimensionError):
            data.collect_offline(reactor, 20, 16)

    def test_outputs_are_measurement_noise_free(self, reactor):
        rec = data.collect_offline(reactor, 60, 8, amplitude=0.4, noise_bound=1e-2, seed=2)
        resim = lti.simulate(reactor, np.zeros(4), rec.inputs, rec.noises)
        assert np.array_equal(resim.outputs, rec.outputs)

    def test_csv_round_trip(self, tmp_path, noisy_record):
        path = tmp_path / "traj.csv"
        noisy_record.save_csv(path)
        clone = data.Trajectory.load_csv(path)
        np.testing.assert_allclose(clone.inputs, noisy_record.inputs, rtol=0, atol=0)
        np.testing.assert_allclose(clone.outputs, noisy_record.outputs, rtol=0, atol=0)
        assert clone.seed == noisy_record.seed
        assert clone.pe.order == noisy_record.pe.order


class TestFundamentalLemmaResidual:
    def test_self_window(self, clean_record):
        res = data.fundamental_lemma_residual(
            clean_record, clean_record.inputs[5:17], clean_record.outputs[5:17])
        assert res <= 1e-9

    def test_fresh_windows_are_trajectories(self, reactor, clean_record):
        for u, y in fresh_windows(reactor, 10, 12, seed=11):
            assert data.fundamental_lemma_residual(clean_record, u, y) <= 1e-8

    def test_unit_perturbation_rejected(self, reactor, clean_record):
        for i, (u, y) in enumerate(fresh_windows(reactor, 5, 12, seed=13)):
            bad = y.copy()
            bad[i % 12, i % 2] += 1.0
            assert data.fundamental_lemma_residual(clean_record, u, bad) >= 0.1

    def test_random_windows_bounded_away_from_zero(self, reactor, clean_record):
        rng = np.random.default_rng(17)
        for _ in range(5):
            u = rng.uniform(-1, 1, (12, 2))
            y = rng.uniform(-1, 1, (12, 2))
            assert data.fundamental_lemma_residual(clean_record, u, y) >= 1e-3

    def test_dimension_checks(self, clean_record):
        with pytest.raises(DimensionError):
            data.fundamental_lemma_residual(clean_record, np.zeros((5, 2)), np.zeros((6, 2)))
        with pytest.raises(DimensionError):
            data.fundamental_lemma_residual(clean_record, np.zeros((5, 3)), np.zeros((5, 2)))
