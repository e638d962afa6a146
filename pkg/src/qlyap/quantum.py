"""Complex linear algebra for small closed quantum systems.

States are complex coefficient vectors, operators are dense complex
matrices.  Everything downstream of :func:`eigendecompose` works in the
coordinates of the drift eigenbasis: :func:`state_from_params` returns the
coefficients on ``|E_1>..|E_n>`` and the goal state is the ``g``-th basis
vector.  ``EigenBasis.eigenvectors`` holds the bare-basis column vectors
needed to move operators between the two pictures.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

HERMITIAN_ATOL = 1e-12
STATE_NORM_ATOL = 1e-9
ORTHO_ATOL = 1e-10


class ValidationError(ValueError):
    """Input violates a documented precondition or type invariant."""


class NumericError(RuntimeError):
    """A numerical computation left its guaranteed accuracy regime."""


def dagger(a: np.ndarray) -> np.ndarray:
    return a.conj().T


def commutator(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a @ b - b @ a


def is_hermitian(a: np.ndarray, atol: float = HERMITIAN_ATOL) -> bool:
    a = np.asarray(a)
    return a.ndim == 2 and a.shape[0] == a.shape[1] and bool(
        np.max(np.abs(a - a.conj().T)) <= atol
    )


def require_hermitian(a: np.ndarray, atol: float = HERMITIAN_ATOL) -> np.ndarray:
    a = np.asarray(a, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValidationError(f"operator must be square, got shape {a.shape}")
    dev = float(np.max(np.abs(a - a.conj().T)))
    if dev > atol:
        raise ValidationError(f"operator is not Hermitian (max asymmetry {dev:.3e})")
    return a


def require_state(psi: np.ndarray, dim: int | None = None) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex)
    if psi.ndim != 1:
        raise ValidationError(f"state must be a vector, got shape {psi.shape}")
    if dim is not None and psi.shape[0] != dim:
        raise ValidationError(f"state has dimension {psi.shape[0]}, expected {dim}")
    nrm = float(np.linalg.norm(psi))
    if abs(nrm - 1.0) > STATE_NORM_ATOL:
        raise ValidationError(f"state norm {nrm!r} deviates from 1 beyond tolerance")
    return psi


# ---------------------------------------------------------------------------
# eigendecomposition (cyclic Jacobi for complex Hermitian matrices)
# ---------------------------------------------------------------------------

_JACOBI_SWEEPS = 100


def jacobi_eigh(h: np.ndarray, tol: float = 1e-14) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues/-vectors of a complex Hermitian matrix by cyclic Jacobi.

    Returns ``(w, v)`` with eigenvalues ``w`` ascending and eigenvectors in
    the columns of ``v``.  Dimensions here are tiny (n <= ~10), where plain
    Jacobi sweeps are accurate and need no external solver.
    """
    a = require_hermitian(h).copy()
    n = a.shape[0]
    v = np.eye(n, dtype=complex)
    scale = max(1.0, float(np.max(np.abs(a))))
    for _ in range(_JACOBI_SWEEPS):
        off = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                off = max(off, abs(a[p, q]))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= tol * scale * 1e-2:
                    continue
                # unitary plane rotation zeroing a[p,q]: columns (p,q) mix by
                # [[c, -conj(s)], [s, c]] with c = cos(t) and
                # s = conj(apq/|apq|) * sin(t), tan(2t) = 2|apq|/(app - aqq)
                theta = 0.5 * math.atan2(2.0 * abs(apq), (a[p, p] - a[q, q]).real)
                c = math.cos(theta)
                s = math.sin(theta) * np.conj(apq / abs(apq))
                colp = c * a[:, p] + s * a[:, q]
                colq = -np.conj(s) * a[:, p] + c * a[:, q]
                a[:, p], a[:, q] = colp, colq
                rowp = c * a[p, :] + np.conj(s) * a[q, :]
                rowq = -s * a[p, :] + c * a[q, :]
                a[p, :], a[q, :] = rowp, rowq
                a[p, q] = 0.0
                a[q, p] = 0.0
                colp = c * v[:, p] + s * v[:, q]
                colq = -np.conj(s) * v[:, p] + c * v[:, q]
                v[:, p], v[:, q] = colp, colq
    else:
        raise NumericError(f"Jacobi eigensolver did not converge in {_JACOBI_SWEEPS} sweeps")
    w = np.real(np.diag(a)).copy()
    order = np.argsort(w, kind="stable")
    return w[order], v[:, order]


def _fix_phases(vectors: np.ndarray) -> np.ndarray:
    """Make the largest-magnitude component of each column real nonnegative.

    Ties in magnitude go to the lowest index, so the convention is
    deterministic and datasets built on it are reproducible.
    """
    v = vectors.copy()
    for k in range(v.shape[1]):
        col = v[:, k]
        mags = np.abs(col)
        j = int(np.argmax(mags > mags.max() - 1e-15))
        ref = col[j]
        if abs(ref) > 0:
            v[:, k] = col * (np.conj(ref) / abs(ref))
        # enforce exact realness of the anchor component
        v[j, k] = abs(v[j, k])
    return v


@dataclass(frozen=True)
class EigenBasis:
    """Ascending, phase-fixed orthonormal eigenbasis of a drift Hamiltonian.

    ``goal_index`` is the 1-based index of the target eigenstate.
    ``eigenvectors[:, l]`` are bare-basis coordinates of ``|E_{l+1}>``.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    goal_index: int

    def __post_init__(self):
        w = np.asarray(self.eigenvalues, dtype=float)
        v = np.asarray(self.eigenvectors, dtype=complex)
        if w.ndim != 1 or v.shape != (w.size, w.size):
            raise ValidationError("inconsistent eigenbasis shapes")
        if np.any(np.diff(w) < -1e-12):
            raise ValidationError("eigenvalues must be sorted ascending")
        gram = dagger(v) @ v
        if np.max(np.abs(gram - np.eye(w.size))) > ORTHO_ATOL:
            raise ValidationError("eigenvectors are not orthonormal within tolerance")
        if not 1 <= self.goal_index <= w.size:
            raise ValidationError(f"goal_index {self.goal_index} outside 1..{w.size}")
        object.__setattr__(self, "eigenvalues", w)
        object.__setattr__(self, "eigenvectors", v)

    @property
    def dim(self) -> int:
        return self.eigenvalues.size

    def goal_state(self) -> np.ndarray:
        """Goal state in eigenbasis coordinates (a unit basis vector)."""
        e = np.zeros(self.dim, dtype=complex)
        e[self.goal_index - 1] = 1.0
        return e

    def to_eigenbasis(self, op: np.ndarray) -> np.ndarray:
        """Transform a bare-basis operator into eigenbasis coordinates."""
        return dagger(self.eigenvectors) @ np.asarray(op, dtype=complex) @ self.eigenvectors


def eigendecompose(h: np.ndarray, goal_index: int | None = None) -> EigenBasis:
    """Ascending-sorted, phase-fixed eigenbasis of a Hermitian operator.

    ``goal_index`` defaults to the highest level (the benchmark target).
    Raises :class:`ValidationError` for non-Hermitian input and
    :class:`NumericError` if the eigensolver fails to converge.
    """
    h = require_hermitian(h, atol=HERMITIAN_ATOL * max(1.0, float(np.max(np.abs(h)))))
    w, v = jacobi_eigh(h)
    v = _fix_phases(v)
    # stable tie-break for (near-)degenerate eigenvalues: order equal values
    # by the anchor index of their phase-fixed eigenvectors
    n = w.size
    anchors = [int(np.argmax(np.abs(v[:, k]) > np.abs(v[:, k]).max() - 1e-15)) for k in range(n)]
    order = sorted(range(n), key=lambda k: (w[k], anchors[k]))
    w, v = w[list(order)], v[:, list(order)]
    basis = EigenBasis(w, v, n if goal_index is None else goal_index)
    recon = v @ np.diag(w) @ dagger(v)
    if np.max(np.abs(recon - h)) > 1e-9 * max(1.0, float(np.max(np.abs(h)))):
        raise NumericError("eigendecomposition failed the reconstruction check")
    return basis


# ---------------------------------------------------------------------------
# initial-state parametrization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class InitialStateParams:
    """Angles (theta_i, phi_i) fixing an initial state up to global phase.

    An n-level state needs n-1 of each: theta_i in [0, pi/2] and
    phi_i in [0, 2*pi].  ``dim`` is the number of angle pairs, n-1.
    """

    theta: tuple[float, ...]
    phi: tuple[float, ...]

    def __post_init__(self):
        theta = tuple(float(t) for t in self.theta)
        phi = tuple(float(p) for p in self.phi)
        if len(theta) != len(phi) or not theta:
            raise ValidationError("theta and phi must have equal, nonzero length")
        if any(not 0.0 <= t <= math.pi / 2 + 1e-12 for t in theta):
            raise ValidationError("theta entries must lie in [0, pi/2]")
        if any(not 0.0 <= p <= 2 * math.pi + 1e-12 for p in phi):
            raise ValidationError("phi entries must lie in [0, 2*pi]")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "phi", phi)

    @property
    def dim(self) -> int:
        return len(self.theta)

    def as_vector(self) -> np.ndarray:
        """Input-vector layout [theta_1..theta_{n-1}, phi_1..phi_{n-1}]."""
        return np.array(self.theta + self.phi, dtype=float)

    @classmethod
    def from_vector(cls, x: np.ndarray) -> "InitialStateParams":
        x = np.asarray(x, dtype=float)
        if x.ndim != 1 or x.size % 2:
            raise ValidationError("parameter vector must have even length")
        half = x.size // 2
        return cls(tuple(x[:half]), tuple(x[half:]))


def state_from_params(params: InitialStateParams, basis: EigenBasis) -> np.ndarray:
    """Initial state in eigenbasis coordinates from its angle parameters.

    The nesting generalizes the 2- and 3-level forms: the coefficient of
    ``|E_n>`` is cos(theta_{n-1}), and level l < n carries
    ``exp(i*phi_l) * cos(theta_{l-1}) * prod_{j>=l} sin(theta_j)`` with
    cos(theta_0) := 1.  The coefficient of ``|E_n>`` is real nonnegative.
    """
    n = basis.dim
    if params.dim + 1 != n:
        raise ValidationError(
            f"params describe a {params.dim + 1}-level state, basis has {n} levels"
        )
    c = np.zeros(n, dtype=complex)
    sines = 1.0
    c[n - 1] = math.cos(params.theta[n - 2])
    for l in range(n - 1, 0, -1):
        # after this update, sines = prod_{j=l..n-1} sin(theta_j)
        sines *= math.sin(params.theta[l - 1])
        inner = math.cos(params.theta[l - 2]) if l >= 2 else 1.0
        c[l - 1] = sines * inner * complex(math.cos(params.phi[l - 1]), math.sin(params.phi[l - 1]))
    return c


def params_from_state(c: np.ndarray) -> InitialStateParams:
    """Recover angle parameters from eigenbasis coefficients.

    Inverse of :func:`state_from_params` for theta interior to (0, pi/2);
    at the boundaries some angles are unconstrained and are returned as 0.
    """
    c = require_state(c)
    n = c.size
    theta = [0.0] * (n - 1)
    phi = [0.0] * (n - 1)
    sines = 1.0
    for l in range(n - 1, 0, -1):
        ratio = min(1.0, abs(c[l]) / sines) if sines > 1e-300 else 0.0
        theta[l - 1] = math.acos(ratio)
        sines *= math.sin(theta[l - 1])
        if abs(c[l - 1]) > 0:
            phi[l - 1] = math.atan2(c[l - 1].imag, c[l - 1].real) % (2 * math.pi)
    return InitialStateParams(tuple(theta), tuple(phi))


# ---------------------------------------------------------------------------
# scalar observables
# ---------------------------------------------------------------------------


def fidelity(state: np.ndarray, target: np.ndarray) -> float:
    """|<target|state>|^2; symmetric and global-phase invariant."""
    state = np.asarray(state, dtype=complex)
    target = np.asarray(target, dtype=complex)
    if state.shape != target.shape:
        raise ValidationError(f"dimension mismatch: {state.shape} vs {target.shape}")
    return float(abs(np.vdot(target, state)) ** 2)


def expectation(state: np.ndarray, op: np.ndarray, imag_tol: float = 1e-8) -> float:
    """<psi|op|psi> for Hermitian op; imaginary residue above tol is an error."""
    state = np.asarray(state, dtype=complex)
    op = np.asarray(op, dtype=complex)
    if op.shape != (state.size, state.size):
        raise ValidationError(f"dimension mismatch: state {state.size}, op {op.shape}")
    val = complex(np.vdot(state, op @ state))
    if abs(val.imag) > imag_tol:
        raise NumericError(f"expectation has imaginary residue {val.imag:.3e}")
    return val.real
