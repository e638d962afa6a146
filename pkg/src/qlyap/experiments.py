"""Benchmark experiments: dataset generation, training, tuning, baselines.

Everything here is driven by one :class:`ExperimentConfig` whose defaults
describe the three-level benchmark (omega_1 = 1 units): drift levels
(1, 2, 5) with a 0.5 coupling between the lower two, feedback gain 1, and
horizons 20 (scheme classification) and 2*pi (coefficient regression).
Dataset sizes default to desk scale; ``paper_scale()`` restores the full
published sizes.  All randomness derives from the single ``seed`` through
named substreams, so commands can be rerun or resumed independently with
byte-identical outputs.
"""

from __future__ import annotations

import dataclasses
import hashlib
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import (
    KIND_CLASSIFICATION,
    KIND_REGRESSION,
    SampleSet,
    generate_set,
    load_samples,
    save_samples,
)
from .grnn import (
    GrnnModel,
    avg_log_infidelity,
    grnn_build,
    grnn_predict,
    grnn_tune_sigma,
    predict_weight_matrix,
    save_grnn,
    sigma_grid,
)
from .lyapunov import ControlledSystem, evolve_batch, make_system
from .mlp import (
    MlpNetwork,
    Normalizer,
    TrainConfig,
    TrainHistory,
    classify_batch,
    mlp_init,
    mlp_train,
    save_mlp,
)
from .optim import BoxBounds, minimize_multistart
from .quantum import ValidationError, state_from_params
from .seeding import STREAM_SAMPLES, derive_seed, substream

# substream tags for the experiment sample sets
TAG_CLASS_TRAIN = 101
TAG_CLASS_TEST = 102
TAG_CLASS_APP = 103
TAG_REG_TRAIN = 201
TAG_REG_VALIDATION = 202
TAG_REG_APP = 203
TAG_MLP_INIT = 301
TAG_PIND = 401

R_THRESHOLD = 0.999


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    # physics (omega_1 = 1 units)
    omega2: float = 2.0
    omega3: float = 5.0
    coupling: float = 0.5
    strength: float = 1.0
    t_classification: float = 20.0
    t_regression: float = 2.0 * math.pi
    goal_index: int = 3
    # classification experiment
    class_train: int = 10_000
    class_test: int = 5_000
    class_app: int = 10_000
    table1_sizes: tuple[int, ...] = (10, 100, 1_000, 10_000)
    region_resolution: int = 100
    fid_threshold: float = 0.99
    tie_eps: float = 1e-6
    # network / training
    mlp_hidden: tuple[int, ...] = (30, 30)
    lr0: float = 0.01
    momentum: float = 0.9
    lr_up: float = 1.05
    lr_down: float = 0.7
    max_rise: float = 0.04
    max_iters: int = 20_000
    eval_every: int = 10
    # regression experiment
    p_lower: tuple[float, ...] = (0.0, 0.0)
    p_upper: tuple[float, ...] = (10.0, 20.0)
    restarts: int = 8
    reg_train: int = 5_000
    reg_validation: int = 2_000
    reg_app: int = 10_000
    table2_sizes: tuple[int, ...] = (5_000,)
    sigma_grid_points: int = 40
    sigma_factor: float = 0.5
    pind_validation: int = 500
    # infrastructure
    seed: int = 7
    threads: int = 1
    outdir: str = "out"

    def __post_init__(self):
        positive = ("omega2", "omega3", "coupling", "strength",
                    "t_classification", "t_regression")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.goal_index not in (1, 2, 3):
            raise ConfigError("goal_index must name one of the 3 levels")

    def paper_scale(self) -> "ExperimentConfig":
        """Full published experiment sizes (hours of compute)."""
        return dataclasses.replace(
            self,
            class_app=50_000,
            table1_sizes=(10, 100, 1_000, 10_000, 40_000),
            region_resolution=500,
            max_iters=100_000,
            reg_train=100_000,
            reg_app=100_000,
            table2_sizes=(5_000, 10_000, 50_000, 100_000),
            pind_validation=2_000,
        )

    def train_config(self, max_iters: int | None = None) -> TrainConfig:
        return TrainConfig(lr0=self.lr0, momentum=self.momentum, lr_up=self.lr_up,
                           lr_down=self.lr_down, max_rise=self.max_rise,
                           max_iters=self.max_iters if max_iters is None else max_iters,
                           eval_every=self.eval_every)

    def bounds(self) -> BoxBounds:
        return BoxBounds(self.p_lower, self.p_upper)

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join("%.17g" % x if isinstance(x, float) else str(x) for x in v)
            elif isinstance(v, float):
                v = "%.17g" % v
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    def checksum(self) -> str:
        # threads and outdir steer execution, never results, so they must not
        # change the checksum stamped into outputs
        lines = [ln for ln in self.to_text().splitlines()
                 if not ln.startswith(("threads ", "outdir "))]
        return hashlib.sha256("\n".join(lines).encode()).hexdigest()[:12]


def _coerce(field: dataclasses.Field, raw: str):
    raw = raw.strip()
    typ = field.type
    try:
        if typ == "float":
            return float(raw)
        if typ == "int":
            return int(raw)
        if typ == "str":
            return raw
        if typ.startswith("tuple[float"):
            return tuple(float(x) for x in raw.split(",") if x.strip())
        if typ.startswith("tuple[int"):
            return tuple(int(x) for x in raw.split(",") if x.strip())
    except ValueError as exc:
        raise ConfigError(f"bad value for {field.name}: {raw!r}") from exc
    raise ConfigError(f"unsupported config field type for {field.name}")


def load_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    """Defaults, optionally updated from a flat ``key = value`` file."""
    values: dict = {}
    fields = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
    if path is not None:
        for ln, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            if "=" not in body:
                raise ConfigError(f"{path}:{ln}: expected 'key = value'")
            key, raw = (s.strip() for s in body.split("=", 1))
            if key not in fields:
                raise ConfigError(f"{path}:{ln}: unknown config key {key!r}")
            values[key] = _coerce(fields[key], raw)
    for key, val in (overrides or {}).items():
        if val is not None:
            values[key] = val
    try:
        return ExperimentConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


# ---------------------------------------------------------------------------
# benchmark system
# ---------------------------------------------------------------------------


def benchmark_h0(cfg: ExperimentConfig) -> np.ndarray:
    h0 = np.diag([1.0, cfg.omega2, cfg.omega3]).astype(complex)
    h0[0, 1] = h0[1, 0] = cfg.coupling
    return h0


def benchmark_controls() -> tuple[np.ndarray, np.ndarray]:
    h1 = np.zeros((3, 3), dtype=complex)
    h1[0, 2] = h1[2, 0] = 1.0
    h2 = np.zeros((3, 3), dtype=complex)
    h2[1, 2] = h2[2, 1] = 1.0
    return h1, h2


def build_system(cfg: ExperimentConfig, experiment: str) -> ControlledSystem:
    """The three-level benchmark for 'classification' or 'regression'."""
    h1, h2 = benchmark_controls()
    if experiment == "classification":
        return make_system(benchmark_h0(cfg), (h1, h2), cfg.strength,
                           cfg.t_classification, goal_index=cfg.goal_index)
    if experiment == "regression":
        return make_system(benchmark_h0(cfg), (h1,), cfg.strength,
                           cfg.t_regression, goal_index=cfg.goal_index)
    raise ConfigError(f"unknown experiment {experiment!r}")


def fresh_param_states(system: ControlledSystem, count: int, seed: int):
    """(param vectors, eigenbasis states) for ``count`` seeded random states."""
    from .dataset import random_params

    vecs = np.empty((count, 2 * (system.dim - 1)))
    states = np.empty((count, system.dim), dtype=complex)
    for i in range(count):
        params = random_params(system.dim, substream(seed, STREAM_SAMPLES, i))
        vecs[i] = params.as_vector()
        states[i] = state_from_params(params, system.basis)
    return vecs, states


# ---------------------------------------------------------------------------
# CSV helpers (round-trip tested)
# ---------------------------------------------------------------------------


def write_csv(path, columns, rows, header_lines=()) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            cells = []
            for v in row:
                if isinstance(v, (int, np.integer)):
                    cells.append(str(int(v)))
                elif isinstance(v, (float, np.floating)):
                    cells.append("%.17g" % v)
                else:
                    cells.append(str(v))
            fh.write(",".join(cells) + "\n")


def read_csv(path) -> tuple[list[str], list[list]]:
    """Parse a package-emitted CSV; numeric cells as floats, labels as str."""

    def cell(v: str):
        try:
            return float(v)
        except ValueError:
            return v

    columns = None
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            if columns is None:
                columns = line.split(",")
                continue
            rows.append([cell(v) for v in line.split(",")])
    if columns is None:
        raise ValidationError(f"{path}: empty CSV")
    return columns, rows


# ---------------------------------------------------------------------------
# commands (shared by the CLI and the test suite)
# ---------------------------------------------------------------------------


def _out(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.outdir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def classification_sets(cfg: ExperimentConfig, system=None, progress=False):
    """The (train, test) classification corpora for the configured seed."""
    system = system or build_system(cfg, "classification")
    train = generate_set(KIND_CLASSIFICATION, system, cfg.class_train,
                         derive_seed(cfg.seed, TAG_CLASS_TRAIN),
                         fid_threshold=cfg.fid_threshold, tie_eps=cfg.tie_eps,
                         threads=cfg.threads, progress=progress)
    test = generate_set(KIND_CLASSIFICATION, system, cfg.class_test,
                        derive_seed(cfg.seed, TAG_CLASS_TEST),
                        fid_threshold=cfg.fid_threshold, tie_eps=cfg.tie_eps,
                        threads=cfg.threads, progress=progress)
    return system, train, test


def label_fractions(sample_set: SampleSet) -> np.ndarray:
    y = sample_set.targets()
    return y.mean(axis=0)


def cmd_gen_samples(cfg: ExperimentConfig, kind: str, count: int,
                    filename: str | None = None, progress: bool = True) -> Path:
    out = _out(cfg)
    print(f"# config={cfg.checksum()}")
    if kind == KIND_CLASSIFICATION:
        system = build_system(cfg, "classification")
        sset = generate_set(kind, system, count, derive_seed(cfg.seed, TAG_CLASS_TRAIN),
                            fid_threshold=cfg.fid_threshold, tie_eps=cfg.tie_eps,
                            threads=cfg.threads, progress=progress)
        frac = label_fractions(sset)
        print("label fractions:",
              " ".join(f"choice{i + 1}={f:.4f}" for i, f in enumerate(frac)))
    elif kind == KIND_REGRESSION:
        system = build_system(cfg, "regression")
        sset = generate_set(kind, system, count, derive_seed(cfg.seed, TAG_REG_TRAIN),
                            bounds=cfg.bounds(), restarts=cfg.restarts,
                            threads=cfg.threads, progress=progress)
        infid = sset.meta()[:, 0]
        eps = avg_log_infidelity(1.0 - infid)
        print(f"labels: eps={eps:.4f} R(F>{R_THRESHOLD})="
              f"{float(np.mean(infid < 1.0 - R_THRESHOLD)):.4f}")
    else:
        raise ConfigError(f"unknown sample kind {kind!r}")
    path = out / (filename or f"{kind}_{count}_{cfg.checksum()}.samples")
    save_samples(path, sset)
    print(f"wrote {path}")
    return path


def train_scheme_classifier(cfg: ExperimentConfig, train: SampleSet, test: SampleSet,
                            max_iters: int | None = None,
                            init_tag: int = TAG_MLP_INIT) -> TrainHistory:
    layers = (train.samples[0].x.size,) + cfg.mlp_hidden + (train.samples[0].y.size,)
    net = mlp_init(layers, derive_seed(cfg.seed, init_tag, len(train)))
    return mlp_train(net, (train.inputs(), train.targets()),
                     (test.inputs(), test.targets()), cfg.train_config(max_iters))


def cmd_train_mlp(cfg: ExperimentConfig, train_file, test_file) -> tuple[Path, Path]:
    out = _out(cfg)
    print(f"# config={cfg.checksum()}")
    system = build_system(cfg, "classification")
    train = load_samples(train_file, expect_system=system)
    test = load_samples(test_file, expect_system=system)
    hist = train_scheme_classifier(cfg, train, test)
    model_path = out / "mlp_model.json"
    hist_path = out / "mlp_history.csv"
    save_mlp(model_path, hist.best_net, hist.normalizer)
    write_csv(hist_path,
              ["iteration", "train_mse", "test_mse", "train_rate", "test_rate"],
              zip(hist.iterations, hist.train_mse, hist.test_mse,
                  hist.train_rate, hist.test_rate),
              header_lines=[f"config={cfg.checksum()}"])
    print(f"best iteration {hist.best_iteration} test MSE {hist.best_test_mse:.6f}")
    print(f"wrote {model_path} and {hist_path}")
    return model_path, hist_path


def application_truth(cfg: ExperimentConfig, system: ControlledSystem, count: int):
    """Simulated ground-truth choices for a fresh application set."""
    from .dataset import label_classification_batch

    vecs, _ = fresh_param_states(system, count, derive_seed(cfg.seed, TAG_CLASS_APP))
    choices, fids = label_classification_batch(
        system, vecs, fid_threshold=cfg.fid_threshold, tie_eps=cfg.tie_eps,
        threads=cfg.threads)
    return vecs, choices, fids


def run_table1(cfg: ExperimentConfig, progress=False):
    """(rows, trained nets): Table-style study over training-set sizes."""
    system, train_full, test = classification_sets(cfg, progress=progress)
    if max(cfg.table1_sizes) > len(train_full):
        train_full = generate_set(
            KIND_CLASSIFICATION, system, max(cfg.table1_sizes),
            derive_seed(cfg.seed, TAG_CLASS_TRAIN), fid_threshold=cfg.fid_threshold,
            tie_eps=cfg.tie_eps, threads=cfg.threads, progress=progress)
    app_vecs, app_choices, _ = application_truth(cfg, system, cfg.class_app)
    rows = []
    nets = {}
    for n_train in cfg.table1_sizes:
        hist = train_scheme_classifier(cfg, train_full.subset(n_train), test)
        pred = classify_batch(hist.best_net, app_vecs, hist.normalizer)
        r_app = float(np.mean(pred == app_choices))
        rows.append((n_train, len(test), hist.best_test_mse, hist.best_iteration, r_app))
        nets[n_train] = hist
        if progress:
            print(f"  N_train={n_train}: test MSE {hist.best_test_mse:.4f} "
                  f"R_A {r_app:.4f}", flush=True)
    return rows, nets


def cmd_table1(cfg: ExperimentConfig) -> Path:
    out = _out(cfg)
    print(f"# config={cfg.checksum()}")
    rows, _ = run_table1(cfg, progress=True)
    path = out / "table1.csv"
    write_csv(path, ["n_train", "n_test", "test_mse", "iterations", "r_app"],
              rows, header_lines=[f"config={cfg.checksum()}"])
    print(f"wrote {path}")
    return path


def region_grid(resolution: int) -> np.ndarray:
    """theta1 x theta2 grid at phi = 0, row-major over (theta1, theta2)."""
    axis = np.linspace(0.0, np.pi / 2.0, resolution)
    vecs = np.empty((resolution * resolution, 4))
    i = 0
    for t1 in axis:
        for t2 in axis:
            vecs[i] = (t1, t2, 0.0, 0.0)
            i += 1
    return vecs


def run_region_map(cfg: ExperimentConfig, net: MlpNetwork, normalizer: Normalizer):
    from .dataset import label_classification_batch

    system = build_system(cfg, "classification")
    vecs = region_grid(cfg.region_resolution)
    truth, _ = label_classification_batch(system, vecs, fid_threshold=cfg.fid_threshold,
                                          tie_eps=cfg.tie_eps, threads=cfg.threads)
    pred = classify_batch(net, vecs, normalizer)
    agreement = float(np.mean(pred == truth))
    return vecs, truth, pred, agreement


def cmd_region_map(cfg: ExperimentConfig, model_file) -> Path:
    from .mlp import load_mlp

    out = _out(cfg)
    print(f"# config={cfg.checksum()}")
    net, normalizer = load_mlp(model_file)
    vecs, truth, pred, agreement = run_region_map(cfg, net, normalizer)
    path = out / "region_map.csv"
    write_csv(path, ["theta1", "theta2", "simulated", "predicted"],
              [(v[0], v[1], int(t), int(p)) for v, t, p in zip(vecs, truth, pred)],
              header_lines=[f"config={cfg.checksum()}",
                            f"agreement={agreement!r}"])
    print(f"agreement {agreement:.4f}")
    print(f"wrote {path}")
    return path


def regression_corpus(cfg: ExperimentConfig, system=None, count=None,
                      progress=False) -> SampleSet:
    system = system or build_system(cfg, "regression")
    return generate_set(KIND_REGRESSION, system, count or cfg.reg_train,
                        derive_seed(cfg.seed, TAG_REG_TRAIN), bounds=cfg.bounds(),
                        restarts=cfg.restarts, threads=cfg.threads, progress=progress)


def run_tune_grnn(cfg: ExperimentConfig, corpus: SampleSet,
                  system: ControlledSystem | None = None):
    system = system or build_system(cfg, "regression")
    model = grnn_build(corpus.inputs(), corpus.targets())
    val_vecs, val_states = fresh_param_states(
        system, cfg.reg_validation, derive_seed(cfg.seed, TAG_REG_VALIDATION))
    grid = sigma_grid(model.d_spacing, num=cfg.sigma_grid_points)
    sigma_best, curve = grnn_tune_sigma(model, val_vecs, val_states, system, grid,
                                        threads=cfg.threads)
    model.sigma = sigma_best
    return model, sigma_best, curve


def cmd_tune_grnn(cfg: ExperimentConfig, train_file) -> tuple[Path, Path]:
    out = _out(cfg)
    print(f"# config={cfg.checksum()}")
    system = build_system(cfg, "regression")
    corpus = load_samples(train_file, expect_system=system)
    model, sigma_best, curve = run_tune_grnn(cfg, corpus, system)
    model_path = out / "grnn_model.json"
    curve_path = out / "sigma_curve.csv"
    save_grnn(model_path, model)
    write_csv(curve_path, ["sigma", "sigma_over_d", "eps"],
              [(s, s / model.d_spacing, e) for s, e in curve],
              header_lines=[f"config={cfg.checksum()}",
                            f"sigma_best={sigma_best!r}"])
    print(f"selected sigma = {sigma_best:.6f} ({sigma_best / model.d_spacing:.3f} D)")
    print(f"wrote {model_path} and {curve_path}")
    return model_path, curve_path


def apply_grnn(cfg: ExperimentConfig, system: ControlledSystem, model: GrnnModel,
               count: int, sigma: float | None = None):
    """Predict coefficients for fresh states and evolve them; returns
    (fidelities, predicted weight matrix)."""
    vecs, states = fresh_param_states(system, count, derive_seed(cfg.seed, TAG_REG_APP))
    p = predict_weight_matrix(model, vecs, system.basis.goal_index, system.dim,
                              sigma=sigma)
    res = evolve_batch(system, states, p, threads=cfg.threads)
    return res.fidelities, p


def run_table2(cfg: ExperimentConfig, corpus: SampleSet, progress=False):
    system = build_system(cfg, "regression")
    rows = []
    train_infid = corpus.meta()[:, 0]
    for n_train in cfg.table2_sizes:
        sub = corpus.subset(n_train)
        model = grnn_build(sub.inputs(), sub.targets())
        sigma = cfg.sigma_factor * model.d_spacing
        fids, _ = apply_grnn(cfg, system, model, cfg.reg_app, sigma=sigma)
        eps = avg_log_infidelity(fids)
        r_app = float(np.mean(fids > R_THRESHOLD))
        r_train = float(np.mean(train_infid[:n_train] < 1.0 - R_THRESHOLD))
        rows.append((n_train, cfg.sigma_factor, eps, r_app, r_train))
        if progress:
            print(f"  N_train={n_train}: eps={eps:.3f} R={r_app:.3f}", flush=True)
    return rows


def cmd_table2(cfg: ExperimentConfig, train_file) -> Path:
    out = _out(cfg)
    print(f"# config={cfg.checksum()}")
    system = build_system(cfg, "regression")
    corpus = load_samples(train_file, expect_system=system)
    if max(cfg.table2_sizes) > len(corpus):
        raise ValidationError(
            f"corpus has {len(corpus)} samples; table2 needs {max(cfg.table2_sizes)}")
    rows = run_table2(cfg, corpus, progress=True)
    path = _out(cfg) / "table2.csv"
    write_csv(path, ["n_train", "sigma_over_d", "eps", "r_app", "r_train"],
              rows, header_lines=[f"config={cfg.checksum()}"])
    print(f"wrote {path}")
    return path


def optimize_pind(cfg: ExperimentConfig, system: ControlledSystem | None = None):
    """State-independent (p_1, p_2) minimizing the averaged log infidelity
    over a seeded validation batch."""
    system = system or build_system(cfg, "regression")
    _, val_states = fresh_param_states(system, cfg.pind_validation,
                                       derive_seed(cfg.seed, TAG_REG_VALIDATION))
    goal = system.basis.goal_index
    cols = [l for l in range(system.dim) if l != goal - 1]

    def objective(x):
        p = np.zeros((val_states.shape[0], system.dim))
        p[:, cols] = np.maximum(x, 1e-9)
        res = evolve_batch(system, val_states, p, threads=cfg.threads)
        return avg_log_infidelity(res.fidelities)

    res = minimize_multistart(objective, cfg.bounds(), cfg.restarts,
                              derive_seed(cfg.seed, TAG_PIND))
    return np.maximum(res.x_best, 1e-9), res


def baseline_metrics(cfg: ExperimentConfig, system: ControlledSystem,
                     coefficients) -> tuple[float, float, np.ndarray]:
    """(eps, R, fidelities) for one fixed coefficient vector on fresh states."""
    _, states = fresh_param_states(system, cfg.reg_app, derive_seed(cfg.seed, TAG_REG_APP))
    goal = system.basis.goal_index
    cols = [l for l in range(system.dim) if l != goal - 1]
    p = np.zeros((states.shape[0], system.dim))
    p[:, cols] = np.asarray(coefficients, dtype=float)
    res = evolve_batch(system, states, p, threads=cfg.threads)
    eps = avg_log_infidelity(res.fidelities)
    r = float(np.mean(res.fidelities > R_THRESHOLD))
    return eps, r, res.fidelities


def cmd_baseline_pind(cfg: ExperimentConfig) -> Path:
    out = _out(cfg)
    print(f"# config={cfg.checksum()}")
    system = build_system(cfg, "regression")
    pind, res = optimize_pind(cfg, system)
    eps, r, _ = baseline_metrics(cfg, system, pind)
    fixed = np.full(system.dim - 1, 10.0)
    eps_u, r_u, _ = baseline_metrics(cfg, system, fixed)
    path = out / "baselines.csv"
    write_csv(path, ["name", "p1", "p2", "eps", "r"],
              [("optimized", pind[0], pind[1], eps, r),
               ("unoptimized", fixed[0], fixed[1], eps_u, r_u)],
              header_lines=[f"config={cfg.checksum()}"])
    print(f"P_ind = ({pind[0]:.3f}, {pind[1]:.3f}) eps={eps:.3f} R={r:.3f}")
    print(f"p=(10,10) eps={eps_u:.3f} R={r_u:.3f}")
    print(f"wrote {path}")
    return path


HIST_BINS = np.arange(-12.0, 0.25, 0.25)


def log_infidelity_histogram(fidelities) -> np.ndarray:
    """Density histogram of log10(1-F) over the fixed bin grid."""
    infid = np.maximum(1.0 - np.asarray(fidelities, dtype=float), 1e-12)
    counts, _ = np.histogram(np.log10(infid), bins=HIST_BINS)
    return counts / counts.sum() / 0.25


def cmd_infidelity_dist(cfg: ExperimentConfig, model_file, train_file,
                        pind: tuple[float, float] | None = None) -> Path:
    from .grnn import load_grnn

    out = _out(cfg)
    print(f"# config={cfg.checksum()}")
    system = build_system(cfg, "regression")
    model = load_grnn(model_file)
    corpus = load_samples(train_file, expect_system=system)
    fids_grnn, _ = apply_grnn(cfg, system, model, cfg.reg_app)
    fids_train = 1.0 - corpus.meta()[:, 0]
    if pind is None:
        pind_arr, _ = optimize_pind(cfg, system)
    else:
        pind_arr = np.asarray(pind, dtype=float)
    _, _, fids_pind = baseline_metrics(cfg, system, pind_arr)
    _, _, fids_fixed = baseline_metrics(cfg, system, np.full(system.dim - 1, 10.0))
    path = out / "infidelity_dist.csv"
    mids = 0.5 * (HIST_BINS[:-1] + HIST_BINS[1:])
    write_csv(path, ["log10_infidelity", "grnn", "train_labels", "p_ind", "unoptimized"],
              zip(mids, log_infidelity_histogram(fids_grnn),
                  log_infidelity_histogram(fids_train),
                  log_infidelity_histogram(fids_pind),
                  log_infidelity_histogram(fids_fixed)),
              header_lines=[f"config={cfg.checksum()}",
                            f"pind={pind_arr[0]!r},{pind_arr[1]!r}"])
    print(f"wrote {path}")
    return path
