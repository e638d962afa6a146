"""Lyapunov control law: P operators, feedback fields, controlled dynamics.

The control field for Hamiltonian ``H_k`` is ``f_k = -K <psi|i[H_k,P]|psi>``,
with ``P`` diagonal in the drift eigenbasis, so the Lyapunov function
``V = <psi|P|psi>`` is non-increasing along trajectories.  The integrator is
fixed-step classical RK4 that recomputes every field from the instantaneous
state at each internal stage; the state is renormalized after every step.

All states here are eigenbasis coefficient vectors.  The batched entry point
:func:`evolve_batch` integrates many (state, weights) rows in lockstep; row
results are independent of batch composition (summations are accumulated in
fixed component order, never via shape-dependent BLAS kernels), which is what
makes chunked/threaded runs byte-stable.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .quantum import (
    EigenBasis,
    NumericError,
    ValidationError,
    commutator,
    eigendecompose,
    require_hermitian,
    require_state,
)

# default step rule: a T/4000 grid, refined for long horizons so the discrete
# dissipation-rate diagnostics keep their headroom (the central-difference
# residual of dV/dt grows like dt^2 * (Bohr frequency)^2)
DEFAULT_MIN_STEPS = 4000
DEFAULT_DT_CAP = 1.6e-3

NORM_DRIFT_LIMIT = 1e-6
V_MONOTONE_SLACK = 1e-8


class IntegratorError(NumericError):
    """RK4 step lost too much norm; retry with a smaller dt."""


def default_step_count(horizon: float) -> int:
    return max(DEFAULT_MIN_STEPS, int(math.ceil(horizon / DEFAULT_DT_CAP - 1e-12)))


@dataclass(frozen=True)
class LyapunovWeights:
    """Coefficients p_l of P = sum_l p_l |E_l><E_l| with p_g = 0.

    All non-goal coefficients must be strictly positive; the goal one is
    exactly zero (any constant shift of P leaves the control fields
    unchanged, so zero is the canonical choice).
    """

    p: tuple[float, ...]
    goal_index: int

    def __post_init__(self):
        p = tuple(float(x) for x in self.p)
        if not 1 <= self.goal_index <= len(p):
            raise ValidationError(f"goal_index {self.goal_index} outside 1..{len(p)}")
        if p[self.goal_index - 1] != 0.0:
            raise ValidationError("goal coefficient p_g must be exactly 0")
        others = [x for l, x in enumerate(p, start=1) if l != self.goal_index]
        if any(not (x > 0.0 and math.isfinite(x)) for x in others):
            raise ValidationError("non-goal coefficients must be finite and > 0")
        object.__setattr__(self, "p", p)

    @property
    def dim(self) -> int:
        return len(self.p)

    def free_values(self) -> np.ndarray:
        """The n-1 optimizable coefficients, goal entry removed."""
        return np.array(
            [x for l, x in enumerate(self.p, start=1) if l != self.goal_index], dtype=float
        )

    @classmethod
    def from_free(cls, values, goal_index: int, dim: int) -> "LyapunovWeights":
        values = [float(v) for v in values]
        if len(values) != dim - 1:
            raise ValidationError(f"expected {dim - 1} free coefficients, got {len(values)}")
        p = values[: goal_index - 1] + [0.0] + values[goal_index - 1 :]
        return cls(tuple(p), goal_index)

    def as_array(self) -> np.ndarray:
        return np.array(self.p, dtype=float)


def build_p(weights: LyapunovWeights, basis: EigenBasis) -> np.ndarray:
    """Bare-basis P = sum_l p_l |E_l><E_l| (positive semi-definite, [H0,P]=0)."""
    if weights.dim != basis.dim:
        raise ValidationError(f"weights dim {weights.dim} != basis dim {basis.dim}")
    if weights.goal_index != basis.goal_index:
        raise ValidationError("weights and basis disagree on the goal index")
    v = basis.eigenvectors
    return (v * np.asarray(weights.p)) @ v.conj().T


def control_field(state: np.ndarray, hk: np.ndarray, p_op: np.ndarray, K: float) -> float:
    """f = -K <psi| i[hk, p_op] |psi>, a real scalar.

    ``state``, ``hk`` and ``p_op`` must share one basis.  The imaginary
    residue of the expectation is asserted below 1e-10.
    """
    state = np.asarray(state, dtype=complex)
    hk = np.asarray(hk, dtype=complex)
    p_op = np.asarray(p_op, dtype=complex)
    if hk.shape != (state.size, state.size) or p_op.shape != hk.shape:
        raise ValidationError("state/operator dimension mismatch")
    val = complex(np.vdot(state, 1j * commutator(hk, p_op) @ state))
    if abs(val.imag) > 1e-10:
        raise NumericError(f"control field has imaginary residue {val.imag:.3e}")
    return -float(K) * val.real


@dataclass(frozen=True)
class ControlledSystem:
    """Drift Hamiltonian, its eigenbasis, and candidate control Hamiltonians.

    ``controls`` are bare-basis Hermitian operators H_1..H_m (1-based in all
    scheme selections, matching the candidate numbering used everywhere
    else).  ``strength`` is the feedback gain K and ``horizon`` the control
    time T in units of 1/omega_1.
    """

    h0: np.ndarray
    basis: EigenBasis
    controls: tuple[np.ndarray, ...]
    strength: float
    horizon: float
    controls_eig: tuple[np.ndarray, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        h0 = require_hermitian(self.h0, atol=1e-10)
        if not self.controls:
            raise ValidationError("at least one control Hamiltonian is required")
        controls = tuple(require_hermitian(h, atol=1e-10) for h in self.controls)
        n = self.basis.dim
        if h0.shape != (n, n) or any(h.shape != (n, n) for h in controls):
            raise ValidationError("all operators must match the basis dimension")
        if self.strength <= 0 or self.horizon <= 0:
            raise ValidationError("strength and horizon must be positive")
        # the basis must actually diagonalize h0
        resid = np.max(np.abs(h0 @ self.basis.eigenvectors
                              - self.basis.eigenvectors * self.basis.eigenvalues))
        if resid > 1e-9 * max(1.0, float(np.max(np.abs(h0)))):
            raise ValidationError("basis does not diagonalize h0 within tolerance")
        object.__setattr__(self, "h0", h0)
        object.__setattr__(self, "controls", controls)
        object.__setattr__(self, "controls_eig",
                           tuple(self.basis.to_eigenbasis(h) for h in controls))

    @property
    def dim(self) -> int:
        return self.basis.dim

    @property
    def n_controls(self) -> int:
        return len(self.controls)

    def resolve_scheme(self, scheme) -> tuple[int, ...]:
        """Normalize a scheme (1-based control indices) to a validated tuple."""
        if scheme is None:
            return tuple(range(1, self.n_controls + 1))
        scheme = tuple(int(c) for c in scheme)
        if len(set(scheme)) != len(scheme):
            raise ValidationError("scheme contains duplicate control indices")
        if any(not 1 <= c <= self.n_controls for c in scheme):
            raise ValidationError(f"scheme {scheme} outside 1..{self.n_controls}")
        return scheme


def make_system(h0, controls, strength, horizon, goal_index=None) -> ControlledSystem:
    """Build a ControlledSystem, eigendecomposing the drift Hamiltonian."""
    basis = eigendecompose(h0, goal_index=goal_index)
    return ControlledSystem(np.asarray(h0, complex), basis,
                            tuple(np.asarray(h, complex) for h in controls),
                            float(strength), float(horizon))


@dataclass(frozen=True)
class ControlTrajectory:
    """Recorded controlled evolution on the integrator grid.

    ``states[i]`` is the eigenbasis coefficient vector at ``times[i]``,
    ``fields[i, k]`` the k-th scheme field evaluated from that state, and
    ``lyapunov[i]`` the value of V there.
    """

    times: np.ndarray
    states: np.ndarray
    fields: np.ndarray
    lyapunov: np.ndarray
    final_fidelity: float
    scheme: tuple[int, ...]
    norm_drift: float

    def __post_init__(self):
        norms = np.linalg.norm(self.states, axis=1)
        if np.max(np.abs(norms - 1.0)) > 1e-9:
            raise ValidationError("stored trajectory states must be unit norm")
        rises = np.diff(self.lyapunov)
        if rises.size and float(np.max(rises)) > V_MONOTONE_SLACK:
            raise NumericError(
                f"Lyapunov function increased by {float(np.max(rises)):.3e} along trajectory"
            )


class BatchEvolution:
    """Result of a lockstep batch evolution (optionally with recording)."""

    def __init__(self, final_states, fidelities, norm_drift,
                 times=None, states=None, fields=None, lyapunov=None):
        self.final_states = final_states
        self.fidelities = fidelities
        self.norm_drift = norm_drift
        self.times = times
        self.states = states
        self.fields = fields
        self.lyapunov = lyapunov


def _integrate_chunk(energies, controls, p, k_strength, psi0, n_steps, h,
                     record=None, record_stride=1):
    """RK4 core for one chunk.  Row-local arithmetic in fixed component order.

    energies: (n,) real; controls: list of (n, n) complex (eigenbasis);
    p: (B, n) real; psi0: (B, n) complex.  When ``record`` is given it is a
    (states, fields, lyapunov) triple of preallocated arrays sampled every
    ``record_stride`` steps.
    """
    B, n = psi0.shape
    m = len(controls)
    psi = psi0.astype(complex, copy=True)
    cols = [[ctl[:, j].copy() for j in range(n)] for ctl in controls]

    phis = [np.empty((B, n), dtype=complex) for _ in range(m)]
    tmp = np.empty((B, n), dtype=complex)
    ks = [np.empty((B, n), dtype=complex) for _ in range(4)]
    stage_in = np.empty((B, n), dtype=complex)
    fbuf = np.empty((B, m), dtype=float)
    r1 = np.empty(B, dtype=float)
    r2 = np.empty(B, dtype=float)
    uacc = np.empty(B, dtype=float)

    def stage(y, out):
        """out <- -i (E y + sum_c f_c H_c y); returns the field matrix view."""
        for c in range(m):
            phi = phis[c]
            np.multiply(y[:, 0, None], cols[c][0], out=phi)
            for j in range(1, n):
                np.multiply(y[:, j, None], cols[c][j], out=tmp)
                phi += tmp
            # f_c = -2K sum_j p_j Im(conj(y_j) phi_j)
            uacc.fill(0.0)
            for j in range(n):
                np.multiply(y[:, j].real, phi[:, j].imag, out=r1)
                np.multiply(y[:, j].imag, phi[:, j].real, out=r2)
                np.subtract(r1, r2, out=r1)
                np.multiply(r1, p[:, j], out=r1)
                np.add(uacc, r1, out=uacc)
            np.multiply(uacc, -2.0 * k_strength, out=fbuf[:, c])
        np.multiply(y, energies, out=out)
        for c in range(m):
            np.multiply(phis[c], fbuf[:, c, None], out=tmp)
            out += tmp
        out *= -1j
        return fbuf

    if record is not None:
        rec_states, rec_fields, rec_v = record
    max_drift = 0.0
    half_h = 0.5 * h
    sixth_h = h / 6.0
    for step in range(n_steps + 1):
        want_rec = record is not None and step % record_stride == 0
        if want_rec or step < n_steps:
            f_now = stage(psi, ks[0])
        if want_rec:
            i_rec = step // record_stride
            rec_states[i_rec] = psi
            rec_fields[i_rec] = f_now
            np.sum(p * (psi.real ** 2 + psi.imag ** 2), axis=1, out=rec_v[i_rec])
        if step == n_steps:
            break
        np.multiply(ks[0], half_h, out=stage_in)
        stage_in += psi
        stage(stage_in, ks[1])
        np.multiply(ks[1], half_h, out=stage_in)
        stage_in += psi
        stage(stage_in, ks[2])
        np.multiply(ks[2], h, out=stage_in)
        stage_in += psi
        stage(stage_in, ks[3])
        ks[1] += ks[2]
        ks[1] *= 2.0
        ks[1] += ks[0]
        ks[1] += ks[3]
        ks[1] *= sixth_h
        psi += ks[1]
        # renormalize; pre-renormalization drift doubles as a stability check
        np.sum(psi.real ** 2, axis=1, out=r1)
        np.sum(psi.imag ** 2, axis=1, out=r2)
        r1 += r2
        np.sqrt(r1, out=r1)
        drift = float(np.max(np.abs(r1 - 1.0)))
        if not drift <= NORM_DRIFT_LIMIT:  # NaN-safe comparison
            raise IntegratorError(
                f"norm drifted by {drift:.3e} in one step; decrease dt"
            )
        max_drift = max(max_drift, drift)
        psi /= r1[:, None]
    return psi, max_drift


def _steps_for(system: ControlledSystem, dt: float | None) -> tuple[int, float]:
    T = system.horizon
    if dt is None:
        n_steps = default_step_count(T)
        return n_steps, T / n_steps
    if dt <= 0:
        raise ValidationError("dt must be positive")
    n_steps = int(round(T / dt))
    if n_steps < 1 or abs(n_steps * dt - T) > 1e-9 * max(1.0, T):
        raise ValidationError(f"dt={dt!r} does not divide the horizon T={T!r}")
    return n_steps, T / n_steps


def evolve_batch(system: ControlledSystem, initials: np.ndarray, p_matrix: np.ndarray,
                 scheme=None, dt: float | None = None, record_stride: int | None = None,
                 threads: int = 1, chunk_rows: int = 8192) -> BatchEvolution:
    """Integrate many (initial state, weight vector) rows in lockstep.

    ``initials``: (B, n) eigenbasis coefficients; ``p_matrix``: (B, n)
    nonnegative Lyapunov coefficients (goal column zero).  Results are
    bitwise independent of ``threads`` and ``chunk_rows``.
    """
    scheme = system.resolve_scheme(scheme)
    controls = [system.controls_eig[c - 1] for c in scheme]
    initials = np.asarray(initials, dtype=complex)
    p_matrix = np.asarray(p_matrix, dtype=float)
    if initials.ndim != 2 or initials.shape[1] != system.dim:
        raise ValidationError(f"initials must be (B, {system.dim})")
    if p_matrix.shape != initials.shape:
        raise ValidationError("p_matrix must match initials in shape")
    norms = np.linalg.norm(initials, axis=1)
    if np.max(np.abs(norms - 1.0)) > 1e-9:
        raise ValidationError("initial states must be normalized")
    n_steps, h = _steps_for(system, dt)
    if record_stride is not None and (record_stride < 1 or n_steps % record_stride):
        raise ValidationError("record_stride must divide the step count")

    B, n = initials.shape
    energies = system.basis.eigenvalues
    goal = system.basis.goal_index - 1

    rec = None
    times = None
    if record_stride is not None:
        n_rec = n_steps // record_stride + 1
        times = np.linspace(0.0, system.horizon, n_rec)
        rec = (np.empty((n_rec, B, n), dtype=complex),
               np.empty((n_rec, B, len(controls)), dtype=float),
               np.empty((n_rec, B), dtype=float))

    if _kernels.HAVE_NUMBA:
        nb_controls = (np.zeros((0, n, n), dtype=complex) if not controls
                       else np.ascontiguousarray(np.stack(controls)))
    else:
        nb_controls = None

    def run(lo: int, hi: int):
        chunk_rec = None if rec is None else tuple(a[:, lo:hi] for a in rec)
        if _kernels.HAVE_NUMBA:
            if chunk_rec is None:
                dummy_c = np.empty((1, 1, n), dtype=complex)
                dummy_f = np.empty((1, 1, len(controls)), dtype=float)
                dummy_v = np.empty((1, 1), dtype=float)
                rs, rf, rv, stride, do_rec = dummy_c, dummy_f, dummy_v, 1, False
            else:
                rs, rf, rv = chunk_rec
                stride, do_rec = record_stride, True
            out, max_drift, ok = _kernels.integrate_rows(
                energies, nb_controls, p_matrix[lo:hi], system.strength,
                np.ascontiguousarray(initials[lo:hi]), n_steps, h,
                rs, rf, rv, stride, do_rec, NORM_DRIFT_LIMIT)
            if not ok:
                raise IntegratorError("norm drift exceeded tolerance; decrease dt")
            return out, max_drift
        return _integrate_chunk(energies, controls, p_matrix[lo:hi], system.strength,
                                initials[lo:hi], n_steps, h,
                                record=chunk_rec, record_stride=record_stride or 1)

    bounds = [(lo, min(lo + chunk_rows, B)) for lo in range(0, B, chunk_rows)]
    final = np.empty((B, n), dtype=complex)
    drift = 0.0
    if threads > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for (lo, hi), (chunk, d) in zip(bounds, pool.map(lambda b: run(*b), bounds)):
                final[lo:hi] = chunk
                drift = max(drift, d)
    else:
        for lo, hi in bounds:
            chunk, d = run(lo, hi)
            final[lo:hi] = chunk
            drift = max(drift, d)
    fid = np.abs(final[:, goal]) ** 2
    if rec is None:
        return BatchEvolution(final, fid, drift)
    return BatchEvolution(final, fid, drift, times, rec[0], rec[1], rec[2])


def evolve(system: ControlledSystem, initial: np.ndarray, weights: LyapunovWeights,
           scheme=None, dt: float | None = None, record_stride: int = 1) -> ControlTrajectory:
    """Integrate one controlled trajectory, recording the step grid.

    ``initial`` is an eigenbasis coefficient vector.  Raises
    :class:`IntegratorError` if the per-step norm drift exceeds 1e-6.
    """
    initial = require_state(initial, dim=system.dim)
    if weights.dim != system.dim or weights.goal_index != system.basis.goal_index:
        raise ValidationError("weights do not match the system")
    scheme = system.resolve_scheme(scheme)
    res = evolve_batch(system, initial[None, :], weights.as_array()[None, :],
                       scheme=scheme, dt=dt, record_stride=record_stride)
    return ControlTrajectory(
        times=res.times,
        states=res.states[:, 0, :],
        fields=res.fields[:, 0, :],
        lyapunov=res.lyapunov[:, 0],
        final_fidelity=float(res.fidelities[0]),
        scheme=scheme,
        norm_drift=res.norm_drift,
    )


def lyapunov_rate_check(traj: ControlTrajectory, K: float) -> float:
    """Max |dV/dt + K^-1 sum_k f_k^2| over interior grid points.

    Central differences for dV/dt; a small residual certifies that the
    recorded dynamics satisfy the designed dissipation rate.
    """
    if traj.times.size < 3:
        raise ValidationError("need at least 3 samples for the rate check")
    h = traj.times[1] - traj.times[0]
    dv = (traj.lyapunov[2:] - traj.lyapunov[:-2]) / (2.0 * h)
    f_sq = np.sum(traj.fields[1:-1] ** 2, axis=1)
    return float(np.max(np.abs(dv + f_sq / K)))


def write_trajectory(traj: ControlTrajectory, path) -> None:
    """Columnar text export: t, Re/Im of each amplitude, fields, V."""
    n = traj.states.shape[1]
    m = traj.fields.shape[1]
    header = ["time"]
    header += [f"re_c{l}" for l in range(1, n + 1)]
    header += [f"im_c{l}" for l in range(1, n + 1)]
    header += [f"f{k}" for k in traj.scheme]
    header.append("lyapunov")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# qlyap-trajectory v1\n")
        fh.write("# columns=" + " ".join(header) + "\n")
        fh.write(f"# final_fidelity={traj.final_fidelity!r}\n")
        for i in range(traj.times.size):
            row = [traj.times[i]]
            row += list(traj.states[i].real)
            row += list(traj.states[i].imag)
            row += list(traj.fields[i])
            row.append(traj.lyapunov[i])
            fh.write(" ".join("%.17g" % x for x in row) + "\n")
