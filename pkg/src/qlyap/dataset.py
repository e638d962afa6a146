"""Seeded generation, labeling, persistence and splitting of sample sets.

Samples pair an initial-state parameter vector with either a control-scheme
choice (classification) or optimal Lyapunov coefficients (regression), plus
the provenance needed to audit labels later: the achieved per-candidate
fidelities, or the optimized infidelity.  Every byte of a persisted set is
determined by (system, seed, count, labeling options); per-sample RNG
substreams are indexed by sample ordinal so generation parallelizes without
changing results.
"""

from __future__ import annotations

import hashlib
import sys
from dataclasses import dataclass

import numpy as np

from .lyapunov import ControlledSystem, LyapunovWeights, evolve_batch
from .optim import BoxBounds, WeightsOptimum, optimize_lyapunov_weights, optimize_weights_lockstep
from .quantum import InitialStateParams, ValidationError, state_from_params
from .seeding import STREAM_OPTIM, STREAM_SAMPLES, STREAM_SPLIT, substream

KIND_CLASSIFICATION = "classification"
KIND_REGRESSION = "regression"
DEFAULT_TIE_EPS = 1e-6
DEFAULT_FID_THRESHOLD = 0.99
FORMAT_LINE = "# qlyap-samples v1"


class SampleFileError(ValueError):
    """Raised with a line number when a sample file cannot be parsed."""


@dataclass(frozen=True)
class LabeledSample:
    """Input parameter vector, target vector, and label provenance.

    classification: y is a one-hot choice over M+1 options, meta holds the
    M candidate fidelities.  regression: y are the n-1 optimized
    coefficients, meta is the single achieved infidelity.
    """

    x: np.ndarray
    y: np.ndarray
    meta: np.ndarray

    def params(self) -> InitialStateParams:
        return InitialStateParams.from_vector(self.x)


@dataclass
class SampleSet:
    kind: str
    samples: list[LabeledSample]
    fingerprint: str
    rng_seed: int

    def __post_init__(self):
        if self.kind not in (KIND_CLASSIFICATION, KIND_REGRESSION):
            raise ValidationError(f"unknown sample kind {self.kind!r}")

    def __len__(self) -> int:
        return len(self.samples)

    def inputs(self) -> np.ndarray:
        return np.array([s.x for s in self.samples])

    def targets(self) -> np.ndarray:
        return np.array([s.y for s in self.samples])

    def meta(self) -> np.ndarray:
        return np.array([s.meta for s in self.samples])

    def subset(self, count: int) -> "SampleSet":
        if not 1 <= count <= len(self.samples):
            raise ValidationError(f"cannot take {count} of {len(self.samples)} samples")
        return SampleSet(self.kind, self.samples[:count], self.fingerprint, self.rng_seed)


def system_fingerprint(system: ControlledSystem) -> str:
    """Stable 16-hex-digit digest of the physical configuration."""
    h = hashlib.sha256()

    def put(label, arr):
        h.update(label.encode())
        for v in np.asarray(arr, dtype=complex).ravel():
            h.update(("%.17g %.17g;" % (v.real, v.imag)).encode())

    put("h0", system.h0)
    for i, c in enumerate(system.controls):
        put(f"h{i + 1}", c)
    put("k", [system.strength])
    put("t", [system.horizon])
    put("g", [system.basis.goal_index])
    return h.hexdigest()[:16]


def random_params(n: int, rng: np.random.Generator) -> InitialStateParams:
    """Uniform theta in [0, pi/2] and phi in [0, 2*pi], n-1 of each."""
    if n < 2:
        raise ValidationError("need at least a 2-level system")
    theta = rng.uniform(0.0, np.pi / 2.0, size=n - 1)
    phi = rng.uniform(0.0, 2.0 * np.pi, size=n - 1)
    return InitialStateParams(tuple(theta), tuple(phi))


def _choices_from_fidelities(fids: np.ndarray, fid_threshold: float,
                             tie_eps: float) -> np.ndarray:
    """Label rule: argmax fidelity; ties of the top pair and all-low go to
    the 'others' class M+1."""
    n_cand = fids.shape[1]
    order = np.argsort(-fids, axis=1, kind="stable")
    best = np.take_along_axis(fids, order[:, :1], axis=1)[:, 0]
    choice = order[:, 0] + 1
    others = n_cand + 1
    if n_cand > 1:
        second = np.take_along_axis(fids, order[:, 1:2], axis=1)[:, 0]
        choice = np.where(best - second <= tie_eps, others, choice)
    return np.where(best < fid_threshold, others, choice)


def label_classification(system: ControlledSystem, params: InitialStateParams,
                         candidates=None, fid_threshold: float = DEFAULT_FID_THRESHOLD,
                         tie_eps: float = DEFAULT_TIE_EPS, weights=None,
                         dt: float | None = None) -> tuple[int, np.ndarray]:
    """Best control candidate for one initial state (1-based; M+1 = others)."""
    choices, fids = label_classification_batch(
        system, np.array([params.as_vector()]), candidates=candidates,
        fid_threshold=fid_threshold, tie_eps=tie_eps, weights=weights, dt=dt)
    return int(choices[0]), fids[0]


def label_classification_batch(system: ControlledSystem, param_vectors: np.ndarray,
                               candidates=None, fid_threshold: float = DEFAULT_FID_THRESHOLD,
                               tie_eps: float = DEFAULT_TIE_EPS, weights=None,
                               dt: float | None = None, threads: int = 1):
    """Candidate fidelities and choices for many states, one evolution batch
    per candidate."""
    candidates = system.resolve_scheme(candidates)
    if len(candidates) < 2:
        raise ValidationError("classification needs at least 2 candidate controls")
    if weights is None:
        p_row = np.ones(system.dim)
        p_row[system.basis.goal_index - 1] = 0.0
    else:
        p_row = weights.as_array() if isinstance(weights, LyapunovWeights) else np.asarray(weights, float)
    states = np.array([
        state_from_params(InitialStateParams.from_vector(x), system.basis)
        for x in np.asarray(param_vectors, dtype=float)
    ])
    p_matrix = np.tile(p_row, (states.shape[0], 1))
    fids = np.empty((states.shape[0], len(candidates)))
    for j, cand in enumerate(candidates):
        res = evolve_batch(system, states, p_matrix, scheme=(cand,), dt=dt, threads=threads)
        fids[:, j] = res.fidelities
    return _choices_from_fidelities(fids, fid_threshold, tie_eps), fids


def label_regression(system: ControlledSystem, params: InitialStateParams,
                     bounds: BoxBounds, restarts: int, rng: np.random.Generator,
                     scheme=None, dt: float | None = None) -> WeightsOptimum:
    """Optimal Lyapunov coefficients for one state (multi-start search)."""
    seed = int(rng.integers(0, 2 ** 63 - 1))
    return optimize_lyapunov_weights(system, params, bounds, restarts, seed,
                                     scheme=scheme, dt=dt)


def _progress(label: str, done: int, total: int, enabled: bool):
    if enabled and (done % max(1, total // 20) == 0 or done == total):
        print(f"  {label}: {done}/{total}", file=sys.stderr, flush=True)


def generate_set(kind: str, system: ControlledSystem, count: int, seed: int,
                 candidates=None, fid_threshold: float = DEFAULT_FID_THRESHOLD,
                 tie_eps: float = DEFAULT_TIE_EPS, bounds: BoxBounds | None = None,
                 restarts: int = 8, scheme=None, dt: float | None = None,
                 threads: int = 1, progress: bool = False) -> SampleSet:
    """Draw, label and pack ``count`` samples; deterministic per seed."""
    if count < 1:
        raise ValidationError("count must be >= 1")
    n = system.dim
    vecs = np.array([
        random_params(n, substream(seed, STREAM_SAMPLES, i)).as_vector()
        for i in range(count)
    ])
    samples: list[LabeledSample] = []
    if kind == KIND_CLASSIFICATION:
        choices, fids = label_classification_batch(
            system, vecs, candidates=candidates, fid_threshold=fid_threshold,
            tie_eps=tie_eps, dt=dt, threads=threads)
        n_options = fids.shape[1] + 1
        for i in range(count):
            y = np.zeros(n_options)
            y[choices[i] - 1] = 1.0
            samples.append(LabeledSample(vecs[i], y, fids[i].copy()))
    elif kind == KIND_REGRESSION:
        if bounds is None:
            raise ValidationError("regression labeling requires coefficient bounds")
        states = np.array([
            state_from_params(InitialStateParams.from_vector(x), system.basis)
            for x in vecs
        ])
        seeds = [
            int(substream(seed, STREAM_SAMPLES, i, STREAM_OPTIM).integers(0, 2 ** 63 - 1))
            for i in range(count)
        ]
        prog = None
        if progress:
            prog = lambda rounds, live, total: _progress(
                "regression labeling rounds", total - live, total, True)
        results = optimize_weights_lockstep(system, states, bounds, restarts, seeds,
                                            scheme=scheme, dt=dt, threads=threads,
                                            progress=prog)
        for i, res in enumerate(results):
            samples.append(LabeledSample(vecs[i], res.weights.free_values(),
                                         np.array([res.infidelity])))
    else:
        raise ValidationError(f"unknown sample kind {kind!r}")
    return SampleSet(kind, samples, system_fingerprint(system), seed)


def split(sample_set: SampleSet, fractions, seed: int) -> tuple[SampleSet, ...]:
    """Disjoint seeded shuffle-split into len(fractions) subsets."""
    fractions = [float(f) for f in fractions]
    if any(f <= 0 for f in fractions) or sum(fractions) > 1.0 + 1e-12:
        raise ValidationError("fractions must be positive and sum to at most 1")
    n = len(sample_set)
    order = substream(seed, STREAM_SPLIT).permutation(n)
    out = []
    start = 0
    for f in fractions:
        take = int(round(f * n))
        idx = order[start:start + take]
        out.append(SampleSet(sample_set.kind, [sample_set.samples[i] for i in idx],
                             sample_set.fingerprint, sample_set.rng_seed))
        start += take
    return tuple(out)


# ---------------------------------------------------------------------------
# persistence: line-oriented text, 17-significant-digit floats
# ---------------------------------------------------------------------------


def save_samples(path, sample_set: SampleSet) -> None:
    first = sample_set.samples[0]
    nx, ny, nm = first.x.size, first.y.size, first.meta.size
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(FORMAT_LINE + "\n")
        fh.write(f"# kind={sample_set.kind}\n")
        fh.write(f"# seed={sample_set.rng_seed}\n")
        fh.write(f"# fingerprint={sample_set.fingerprint}\n")
        fh.write(f"# layout=x:{nx} y:{ny} meta:{nm}\n")
        for s in sample_set.samples:
            row = list(s.x) + list(s.y) + list(s.meta)
            fh.write(" ".join("%.17g" % v for v in row) + "\n")


def load_samples(path, expect_system: ControlledSystem | None = None,
                 allow_mismatch: bool = False) -> SampleSet:
    header: dict[str, str] = {}
    samples: list[LabeledSample] = []
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != FORMAT_LINE:
        raise SampleFileError(f"{path}:1: not a qlyap sample file")
    layout = None
    for ln, line in enumerate(lines[1:], start=2):
        if line.startswith("#"):
            body = line[1:].strip()
            if "=" in body:
                key, val = body.split("=", 1)
                header[key.strip()] = val.strip()
            continue
        if not line.strip():
            continue
        if layout is None:
            try:
                parts = dict(p.split(":") for p in header["layout"].split())
                layout = (int(parts["x"]), int(parts["y"]), int(parts["meta"]))
            except (KeyError, ValueError) as exc:
                raise SampleFileError(f"{path}: missing or bad layout header") from exc
        try:
            vals = [float(v) for v in line.split()]
        except ValueError as exc:
            raise SampleFileError(f"{path}:{ln}: unparseable number") from exc
        nx, ny, nm = layout
        if len(vals) != nx + ny + nm:
            raise SampleFileError(
                f"{path}:{ln}: expected {nx + ny + nm} values, found {len(vals)}")
        samples.append(LabeledSample(np.array(vals[:nx]), np.array(vals[nx:nx + ny]),
                                     np.array(vals[nx + ny:])))
    try:
        kind = header["kind"]
        seed = int(header["seed"])
        fingerprint = header["fingerprint"]
    except (KeyError, ValueError) as exc:
        raise SampleFileError(f"{path}: missing or bad header field") from exc
    if not samples:
        raise SampleFileError(f"{path}: no samples")
    if expect_system is not None:
        actual = system_fingerprint(expect_system)
        if actual != fingerprint and not allow_mismatch:
            raise ValidationError(
                f"sample file {path} was generated for system {fingerprint}, "
                f"not {actual}; pass allow_mismatch to override")
    return SampleSet(kind, samples, fingerprint, seed)
