import math

import numpy as np
import pytest

from qlyap import _kernels
from qlyap.lyapunov import (
    ControlledSystem,
    ControlTrajectory,
    IntegratorError,
    LyapunovWeights,
    build_p,
    control_field,
    default_step_count,
    evolve,
    evolve_batch,
    lyapunov_rate_check,
    make_system,
    write_trajectory,
)
from qlyap.quantum import InitialStateParams, ValidationError, state_from_params


def benchmark_system(horizon=20.0, strength=1.0, controls="both"):
    h0 = np.array([[1.0, 0.5, 0.0], [0.5, 2.0, 0.0], [0.0, 0.0, 5.0]], dtype=complex)
    h1 = np.zeros((3, 3), dtype=complex)
    h1[0, 2] = h1[2, 0] = 1.0
    h2 = np.zeros((3, 3), dtype=complex)
    h2[1, 2] = h2[2, 1] = 1.0
    ctl = (h1, h2) if controls == "both" else (h1,)
    return make_system(h0, ctl, strength, horizon)


def seeded_states(system, count, seed=7):
    rng = np.random.default_rng(seed)
    out = np.empty((count, 3), dtype=complex)
    for i in range(count):
        params = InitialStateParams(tuple(rng.uniform(0, np.pi / 2, 2)),
                                    tuple(rng.uniform(0, 2 * np.pi, 2)))
        out[i] = state_from_params(params, system.basis)
    return out


class TestWeightsAndP:
    def test_goal_projector_complement(self):
        sys3 = benchmark_system()
        w = LyapunovWeights((1.0, 1.0, 0.0), 3)
        p = build_p(w, sys3.basis)
        e3 = np.zeros(3)
        e3[2] = 1.0
        assert np.allclose(p, np.eye(3) - np.outer(e3, e3), atol=1e-12)

    def test_independent_baseline_operator(self):
        sys3 = benchmark_system()
        w = LyapunovWeights((0.759, 3.683, 0.0), 3)
        p = build_p(w, sys3.basis)
        # eigen-relations, positive semi-definiteness, commutation with H0
        for l, pl in enumerate(w.p):
            v = sys3.basis.eigenvectors[:, l]
            assert np.allclose(p @ v, pl * v, atol=1e-12)
        assert np.min(np.linalg.eigvalsh(p)) >= -1e-12
        assert np.max(np.abs(p @ sys3.h0 - sys3.h0 @ p)) < 1e-10

    def test_all_zero_rejected(self):
        with pytest.raises(ValidationError):
            LyapunovWeights((0.0, 0.0, 0.0), 3)
        with pytest.raises(ValidationError):
            LyapunovWeights((1.0, 1.0, 0.5), 3)
        with pytest.raises(ValidationError):
            LyapunovWeights((-1.0, 1.0, 0.0), 3)

    def test_free_values_roundtrip(self):
        w = LyapunovWeights.from_free([2.0, 7.0], 3, 3)
        assert w.p == (2.0, 7.0, 0.0)
        assert np.allclose(w.free_values(), [2.0, 7.0])
        w = LyapunovWeights.from_free([2.0, 7.0], 1, 3)
        assert w.p == (0.0, 2.0, 7.0)


class TestControlField:
    def setup_method(self):
        self.sys = benchmark_system()
        self.p_op = build_p(LyapunovWeights((1.0, 1.0, 0.0), 3), self.sys.basis)

    def test_goal_state_stationary(self):
        goal_bare = self.sys.basis.eigenvectors[:, 2]
        for hk in self.sys.controls:
            assert control_field(goal_bare, hk, self.p_op, 1.0) == pytest.approx(0.0, abs=1e-14)

    def test_operator_with_itself(self):
        state = seeded_states(self.sys, 1)[0]
        state_bare = self.sys.basis.eigenvectors @ state
        assert control_field(state_bare, self.p_op, self.p_op, 2.0) == pytest.approx(0.0, abs=1e-14)

    def test_against_dense_commutator_oracle(self):
        # independent oracle: lapack eigenbasis + dense matrix arithmetic
        w_or, v_or = np.linalg.eigh(self.sys.h0)
        p_or = v_or @ np.diag([1.0, 1.0, 0.0]) @ v_or.conj().T
        rng = np.random.default_rng(21)
        h1 = self.sys.controls[0]
        equal_superposition = (v_or[:, 0] + v_or[:, 2]) / math.sqrt(2)
        states = [equal_superposition]
        for _ in range(10):
            s = rng.normal(size=3) + 1j * rng.normal(size=3)
            states.append(s / np.linalg.norm(s))
        for s in states:
            oracle = -1.0 * np.vdot(s, 1j * (h1 @ p_or - p_or @ h1) @ s).real
            assert control_field(s, h1, p_or, 1.0) == pytest.approx(oracle, abs=1e-12)
        # the real equal superposition of |E1> and |E3> gives a vanishing field
        assert control_field(equal_superposition, h1, p_or, 1.0) == pytest.approx(0.0, abs=1e-12)

    def test_gauge_invariance(self):
        # P -> P + cI leaves every field unchanged
        state = seeded_states(self.sys, 1, seed=3)[0]
        state_bare = self.sys.basis.eigenvectors @ state
        for c in (-2.0, 0.7, 13.0):
            shifted = self.p_op + c * np.eye(3)
            for hk in self.sys.controls:
                assert abs(control_field(state_bare, hk, shifted, 1.0)
                           - control_field(state_bare, hk, self.p_op, 1.0)) < 1e-12


class TestEvolve:
    def setup_method(self):
        self.sys = benchmark_system()
        self.w = LyapunovWeights((1.0, 1.0, 0.0), 3)

    def test_default_step_rule(self):
        assert default_step_count(2 * math.pi) == 4000
        assert default_step_count(20.0) == 12500

    def test_goal_state_is_stationary(self):
        goal = np.array([0, 0, 1.0], dtype=complex)
        traj = evolve(self.sys, goal, self.w, scheme=(1,), dt=20.0 / 2000)
        assert traj.final_fidelity == 1.0
        assert np.max(np.abs(traj.fields)) == 0.0
        assert np.max(np.abs(traj.lyapunov)) == 0.0
        assert np.allclose(np.abs(traj.states[:, 2]), 1.0, atol=1e-12)

    def test_free_evolution_of_eigenstate(self):
        # empty scheme forces all fields to zero
        start = np.array([1.0, 0, 0], dtype=complex)
        traj = evolve(self.sys, start, self.w, scheme=(), dt=20.0 / 2000)
        assert traj.final_fidelity == pytest.approx(0.0, abs=1e-12)
        assert np.allclose(traj.lyapunov, 1.0, atol=1e-9)
        assert traj.fields.shape[1] == 0

    def test_step_refinement(self):
        state = seeded_states(self.sys, 1, seed=42)[0]
        coarse = evolve_batch(self.sys, state[None], np.array([self.w.p]), scheme=(1,))
        n = default_step_count(20.0)
        fine = evolve_batch(self.sys, state[None], np.array([self.w.p]), scheme=(1,),
                            dt=20.0 / (10 * n))
        assert abs(coarse.fidelities[0] - fine.fidelities[0]) < 1e-6

    def test_single_equals_batch_row(self):
        states = seeded_states(self.sys, 4, seed=5)
        p = np.tile(self.w.p, (4, 1))
        batch = evolve_batch(self.sys, states, p, scheme=(1,))
        for i in range(4):
            single = evolve_batch(self.sys, states[i:i + 1], p[i:i + 1], scheme=(1,))
            assert np.array_equal(single.final_states[0], batch.final_states[i])

    def test_chunk_and_thread_invariance(self):
        states = seeded_states(self.sys, 30, seed=6)
        p = np.tile(self.w.p, (30, 1))
        ref = evolve_batch(self.sys, states, p, scheme=(1,))
        alt = evolve_batch(self.sys, states, p, scheme=(1,), chunk_rows=7)
        thr = evolve_batch(self.sys, states, p, scheme=(1,), chunk_rows=11, threads=3)
        assert np.array_equal(ref.final_states, alt.final_states)
        assert np.array_equal(ref.final_states, thr.final_states)

    def test_k_absorption(self):
        # (K, p) and (1, K*p) produce the same trajectory
        state = seeded_states(self.sys, 1, seed=9)[0]
        sys_k = benchmark_system(strength=2.5)
        sys_1 = benchmark_system(strength=1.0)
        w_scaled = LyapunovWeights((2.5, 2.5, 0.0), 3)
        t_k = evolve(sys_k, state, self.w, scheme=(1,), dt=20.0 / 4000)
        t_1 = evolve(sys_1, state, w_scaled, scheme=(1,), dt=20.0 / 4000)
        assert np.max(np.abs(t_k.states - t_1.states)) < 1e-9
        assert abs(t_k.final_fidelity - t_1.final_fidelity) < 1e-9

    def test_norm_and_monotonicity_small_sample(self):
        states = seeded_states(self.sys, 10, seed=13)
        p = np.tile(self.w.p, (10, 1))
        res = evolve_batch(self.sys, states, p, scheme=(2,), record_stride=25)
        norms = np.linalg.norm(res.states, axis=2)
        assert np.max(np.abs(norms - 1.0)) < 1e-9
        assert res.norm_drift < 1e-10
        assert np.max(np.diff(res.lyapunov, axis=0)) <= 1e-8

    def test_field_record_matches_control_field(self):
        state = seeded_states(self.sys, 1, seed=17)[0]
        traj = evolve(self.sys, state, self.w, scheme=(1, 2), dt=20.0 / 1000)
        p_op = build_p(self.w, self.sys.basis)
        u = self.sys.basis.eigenvectors
        for idx in (0, 250, 999):
            bare = u @ traj.states[idx]
            for k, ctl in enumerate(self.sys.controls):
                expected = control_field(bare, ctl, p_op, self.sys.strength)
                assert traj.fields[idx, k] == pytest.approx(expected, abs=1e-10)

    def test_instability_error_on_coarse_dt(self):
        state = seeded_states(self.sys, 1, seed=2)[0]
        with pytest.raises(IntegratorError):
            evolve(self.sys, state, self.w, scheme=(1,), dt=20.0 / 80)

    def test_dt_must_divide_horizon(self):
        state = seeded_states(self.sys, 1)[0]
        with pytest.raises(ValidationError):
            evolve(self.sys, state, self.w, dt=0.513)

    def test_record_stride_must_divide_steps(self):
        state = seeded_states(self.sys, 1)[0]
        with pytest.raises(ValidationError):
            evolve(self.sys, state, self.w, dt=20.0 / 1000, record_stride=7)
        traj = evolve(self.sys, state, self.w, scheme=(1,), dt=20.0 / 1000,
                      record_stride=100)
        assert traj.times.size == 11
        assert traj.times[1] == pytest.approx(2.0)

    def test_unnormalized_initial_rejected(self):
        with pytest.raises(ValidationError):
            evolve(self.sys, np.array([1.0, 1.0, 0.0]), self.w)

    def test_weights_system_mismatch(self):
        with pytest.raises(ValidationError):
            evolve(self.sys, np.array([0, 0, 1.0]), LyapunovWeights((1.0, 0.0, 1.0), 2))

    @pytest.mark.skipif(not _kernels.HAVE_NUMBA, reason="numba not installed")
    def test_numba_matches_numpy_kernel(self, monkeypatch):
        states = seeded_states(self.sys, 5, seed=23)
        p = np.tile(self.w.p, (5, 1))
        fast = evolve_batch(self.sys, states, p, scheme=(1,), dt=20.0 / 2000,
                            record_stride=100)
        monkeypatch.setattr(_kernels, "HAVE_NUMBA", False)
        slow = evolve_batch(self.sys, states, p, scheme=(1,), dt=20.0 / 2000,
                            record_stride=100)
        assert np.max(np.abs(fast.final_states - slow.final_states)) < 1e-12
        assert np.max(np.abs(fast.lyapunov - slow.lyapunov)) < 1e-12
        assert np.max(np.abs(fast.fields - slow.fields)) < 1e-12


class TestRateCheck:
    def setup_method(self):
        self.sys = benchmark_system()
        self.w = LyapunovWeights((1.0, 1.0, 0.0), 3)

    def test_stationary_zero_residual(self):
        traj = evolve(self.sys, np.array([0, 0, 1.0], dtype=complex), self.w,
                      scheme=(1,), dt=20.0 / 2000)
        assert lyapunov_rate_check(traj, self.sys.strength) < 1e-12

    def test_benchmark_residual_bound(self):
        state = seeded_states(self.sys, 1, seed=31)[0]
        traj = evolve(self.sys, state, self.w, scheme=(1,))
        resid = lyapunov_rate_check(traj, self.sys.strength)
        peak = float(np.max(np.sum(traj.fields ** 2, axis=1)))
        assert resid < 1e-4 * peak

    def test_zeroed_fields_residual_is_dv_dt(self):
        state = seeded_states(self.sys, 1, seed=37)[0]
        traj = evolve(self.sys, state, self.w, scheme=(1,), dt=20.0 / 2000)
        doctored = ControlTrajectory(traj.times, traj.states,
                                     np.zeros_like(traj.fields), traj.lyapunov,
                                     traj.final_fidelity, traj.scheme, traj.norm_drift)
        h = traj.times[1] - traj.times[0]
        dv = (traj.lyapunov[2:] - traj.lyapunov[:-2]) / (2 * h)
        assert lyapunov_rate_check(doctored, 1.0) == pytest.approx(np.max(np.abs(dv)))

    def test_needs_three_samples(self):
        traj = evolve(self.sys, np.array([0, 0, 1.0], dtype=complex), self.w,
                      scheme=(1,), dt=20.0 / 2000)
        stub = ControlTrajectory(traj.times[:2], traj.states[:2], traj.fields[:2],
                                 traj.lyapunov[:2], 1.0, traj.scheme, 0.0)
        with pytest.raises(ValidationError):
            lyapunov_rate_check(stub, 1.0)


class TestTrajectoryExportAndValidation:
    def test_columnar_export(self, tmp_path):
        sys3 = benchmark_system()
        w = LyapunovWeights((1.0, 1.0, 0.0), 3)
        state = seeded_states(sys3, 1, seed=1)[0]
        traj = evolve(sys3, state, w, scheme=(1,), dt=20.0 / 500)
        path = tmp_path / "traj.txt"
        write_trajectory(traj, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "# qlyap-trajectory v1"
        assert lines[1].startswith("# columns=time re_c1 re_c2 re_c3 im_c1")
        data = np.array([[float(v) for v in ln.split()] for ln in lines[3:]])
        # time + 2n amplitudes + 1 field + V
        assert data.shape == (501, 1 + 6 + 1 + 1)
        assert data[0, 0] == 0.0 and data[-1, 0] == pytest.approx(20.0)
        assert np.allclose(data[:, -1], traj.lyapunov)

    def test_trajectory_invariants_enforced(self):
        times = np.linspace(0, 1, 3)
        bad_norm = np.array([[1, 0, 0], [2, 0, 0], [1, 0, 0]], dtype=complex)
        with pytest.raises(ValidationError):
            ControlTrajectory(times, bad_norm, np.zeros((3, 1)), np.zeros(3), 0.0, (1,), 0.0)
        states = np.array([[1, 0, 0]] * 3, dtype=complex)
        rising_v = np.array([0.0, 0.5, 1.0])
        with pytest.raises(Exception):
            ControlTrajectory(times, states, np.zeros((3, 1)), rising_v, 0.0, (1,), 0.0)


def test_system_validation():
    h0 = np.array([[1.0, 0.5, 0.0], [0.5, 2.0, 0.0], [0.0, 0.0, 5.0]], dtype=complex)
    with pytest.raises(ValidationError):
        make_system(h0, (), 1.0, 20.0)
    with pytest.raises(ValidationError):
        make_system(h0, (np.eye(2, dtype=complex),), 1.0, 20.0)
    with pytest.raises(ValidationError):
        make_system(h0, (np.eye(3, dtype=complex),), -1.0, 20.0)
    sys3 = benchmark_system()
    with pytest.raises(ValidationError):
        sys3.resolve_scheme((3,))
    with pytest.raises(ValidationError):
        sys3.resolve_scheme((1, 1))
