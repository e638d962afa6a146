"""Box-constrained multi-start local optimization.

Nelder-Mead with reflection-point clamping to the box, run from several
seeded random starting points.  The simplex machine exposes an ask/tell
interface so that many independent searches can be driven in lockstep
against one batched objective (that is how per-initial-state Lyapunov
coefficients are labeled at scale); driving the machines one at a time
yields the exact same iterates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lyapunov import ControlledSystem, LyapunovWeights, evolve_batch
from .quantum import InitialStateParams, ValidationError, state_from_params
from .seeding import substream

DEFAULT_XTOL = 1e-6
DEFAULT_FTOL = 1e-8
DEFAULT_MAX_EVALS = 400
START_MARGIN = 0.02
# strict positivity floor for optimized Lyapunov coefficients (p_l > p_g = 0)
WEIGHT_FLOOR = 1e-9


class OptimizationError(RuntimeError):
    pass


@dataclass(frozen=True)
class BoxBounds:
    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self):
        lower = tuple(float(x) for x in self.lower)
        upper = tuple(float(x) for x in self.upper)
        if len(lower) != len(upper) or not lower:
            raise ValidationError("bounds must have equal, nonzero length")
        if any(lo >= hi for lo, hi in zip(lower, upper)):
            raise ValidationError("each lower bound must be strictly below its upper bound")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def dim(self) -> int:
        return len(self.lower)

    def lo(self) -> np.ndarray:
        return np.array(self.lower, dtype=float)

    def hi(self) -> np.ndarray:
        return np.array(self.upper, dtype=float)

    def clamp(self, x: np.ndarray) -> np.ndarray:
        return np.minimum(np.maximum(x, self.lo()), self.hi())

    def contains(self, x: np.ndarray) -> bool:
        return bool(np.all(x >= self.lo()) and np.all(x <= self.hi()))

    def random_interior(self, rng: np.random.Generator) -> np.ndarray:
        """Uniform start inside the box, keeping a 2% margin off every face."""
        u = rng.uniform(size=self.dim)
        span = self.hi() - self.lo()
        return self.lo() + (START_MARGIN + (1.0 - 2.0 * START_MARGIN) * u) * span


@dataclass
class OptimResult:
    x_best: np.ndarray
    f_best: float
    restarts_used: int
    evals: int


class NelderMeadMachine:
    """One Nelder-Mead search as an explicit ask/tell state machine.

    Standard coefficients (reflect 1, expand 2, contract 0.5, shrink 0.5);
    every proposed point is clamped into the box.  Terminates when both the
    simplex diameter and the objective spread fall below their tolerances,
    or at the evaluation budget.
    """

    def __init__(self, x0, bounds: BoxBounds, xtol=DEFAULT_XTOL, ftol=DEFAULT_FTOL,
                 max_evals=DEFAULT_MAX_EVALS):
        self.bounds = bounds
        self.xtol, self.ftol, self.max_evals = xtol, ftol, max_evals
        lo, hi = bounds.lo(), bounds.hi()
        n = bounds.dim
        pts = [bounds.clamp(np.asarray(x0, dtype=float))]
        for i in range(n):
            step = 0.05 * (hi[i] - lo[i])
            v = pts[0].copy()
            v[i] = v[i] + step if v[i] + step <= hi[i] else v[i] - step
            pts.append(v)
        self.sim = np.array(pts)
        self.fv = np.full(n + 1, np.nan)
        self.n = n
        self.evals = 0
        self.done = False
        self._phase = "init"
        self._init_i = 0
        self._pending = self.sim[0]

    def ask(self) -> np.ndarray:
        if self.done:
            raise OptimizationError("machine already converged")
        return self._pending

    def _order(self):
        order = np.argsort(self.fv, kind="stable")
        self.sim = self.sim[order]
        self.fv = self.fv[order]

    def _next_iteration(self):
        self._order()
        diam = float(np.max(np.abs(self.sim[1:] - self.sim[0])))
        spread = float(np.max(np.abs(self.fv[1:] - self.fv[0])))
        if (diam < self.xtol and spread < self.ftol) or self.evals >= self.max_evals:
            self.done = True
            return
        self._centroid = self.sim[:-1].mean(axis=0)
        self._xr = self.bounds.clamp(self._centroid + (self._centroid - self.sim[-1]))
        self._phase = "reflect"
        self._pending = self._xr

    def tell(self, f: float):
        f = float(f)
        if not np.isfinite(f):
            raise OptimizationError(
                f"objective returned non-finite value {f!r} at {self._pending.tolist()}"
            )
        self.evals += 1
        phase = self._phase
        if phase == "init":
            self.fv[self._init_i] = f
            self._init_i += 1
            if self._init_i <= self.n:
                self._pending = self.sim[self._init_i]
            else:
                self._next_iteration()
        elif phase == "reflect":
            self._fr = f
            if f < self.fv[0]:
                self._xe = self.bounds.clamp(
                    self._centroid + 2.0 * (self._centroid - self.sim[-1]))
                self._phase = "expand"
                self._pending = self._xe
            elif f < self.fv[-2]:
                self.sim[-1], self.fv[-1] = self._xr, f
                self._next_iteration()
            else:
                direction = 0.5 if f < self.fv[-1] else -0.5
                self._xk = self.bounds.clamp(
                    self._centroid + direction * (self._centroid - self.sim[-1]))
                self._phase = "contract"
                self._pending = self._xk
        elif phase == "expand":
            if f < self._fr:
                self.sim[-1], self.fv[-1] = self._xe, f
            else:
                self.sim[-1], self.fv[-1] = self._xr, self._fr
            self._next_iteration()
        elif phase == "contract":
            if f < min(self._fr, self.fv[-1]):
                self.sim[-1], self.fv[-1] = self._xk, f
                self._next_iteration()
            else:
                self._phase = "shrink"
                self._shrink_i = 1
                self.sim[1] = self.sim[0] + 0.5 * (self.sim[1] - self.sim[0])
                self._pending = self.sim[1]
        elif phase == "shrink":
            self.fv[self._shrink_i] = f
            self._shrink_i += 1
            if self._shrink_i <= self.n:
                self.sim[self._shrink_i] = self.sim[0] + 0.5 * (self.sim[self._shrink_i] - self.sim[0])
                self._pending = self.sim[self._shrink_i]
            else:
                self._next_iteration()

    def best(self) -> tuple[np.ndarray, float]:
        self._order()
        return self.sim[0].copy(), float(self.fv[0])


def minimize_multistart(objective, bounds: BoxBounds, restarts: int, rng_seed: int,
                        xtol=DEFAULT_XTOL, ftol=DEFAULT_FTOL,
                        max_evals=DEFAULT_MAX_EVALS) -> OptimResult:
    """Best of ``restarts`` seeded Nelder-Mead runs from random interior starts.

    Restart r draws its start from substream (rng_seed, r), so results are
    deterministic and a longer restart budget extends, never reshuffles, the
    shorter one.
    """
    if restarts < 1:
        raise ValidationError("restarts must be >= 1")
    best: OptimResult | None = None
    total_evals = 0
    for r in range(restarts):
        rng = substream(rng_seed, r)
        machine = NelderMeadMachine(bounds.random_interior(rng), bounds,
                                    xtol=xtol, ftol=ftol, max_evals=max_evals)
        while not machine.done:
            x = machine.ask()
            machine.tell(objective(x))
        total_evals += machine.evals
        x, fx = machine.best()
        if best is None or fx < best.f_best:
            best = OptimResult(x, fx, r + 1, 0)
    best.evals = total_evals
    best.restarts_used = restarts
    return best


def _weights_from_box_point(x: np.ndarray, goal_index: int, dim: int) -> LyapunovWeights:
    """Lift a box point onto the strict-positivity floor and build weights."""
    return LyapunovWeights.from_free(np.maximum(x, WEIGHT_FLOOR), goal_index, dim)


@dataclass
class WeightsOptimum:
    weights: LyapunovWeights
    infidelity: float
    evals: int
    restarts_used: int


def optimize_lyapunov_weights(system: ControlledSystem, initial, bounds: BoxBounds,
                              restarts: int, rng_seed: int, scheme=None,
                              dt: float | None = None,
                              xtol=DEFAULT_XTOL, ftol=DEFAULT_FTOL,
                              max_evals=DEFAULT_MAX_EVALS) -> WeightsOptimum:
    """Per-initial-state optimal Lyapunov coefficients by multi-start search.

    Minimizes the final infidelity 1 - F(T) over the n-1 non-goal
    coefficients.  ``initial`` may be an eigenbasis state vector or
    :class:`InitialStateParams`.  Box points sitting exactly on the lower
    boundary are lifted to the 1e-9 strict-positivity floor.
    """
    if bounds.dim != system.dim - 1:
        raise ValidationError(f"bounds must cover {system.dim - 1} coefficients")
    if isinstance(initial, InitialStateParams):
        initial = state_from_params(initial, system.basis)
    initial = np.asarray(initial, dtype=complex)
    goal = system.basis.goal_index

    def objective(x: np.ndarray) -> float:
        w = _weights_from_box_point(x, goal, system.dim)
        res = evolve_batch(system, initial[None, :], w.as_array()[None, :],
                           scheme=scheme, dt=dt)
        return 1.0 - float(res.fidelities[0])

    res = minimize_multistart(objective, bounds, restarts, rng_seed,
                              xtol=xtol, ftol=ftol, max_evals=max_evals)
    return WeightsOptimum(_weights_from_box_point(res.x_best, goal, system.dim),
                          res.f_best, res.evals, res.restarts_used)


def optimize_weights_lockstep(system: ControlledSystem, initials: np.ndarray,
                              bounds: BoxBounds, restarts: int, seeds,
                              scheme=None, dt: float | None = None,
                              xtol=DEFAULT_XTOL, ftol=DEFAULT_FTOL,
                              max_evals=DEFAULT_MAX_EVALS, threads: int = 1,
                              progress=None) -> list[WeightsOptimum]:
    """Run per-state multi-start searches in lockstep over batched evolutions.

    ``initials`` is (S, n); ``seeds`` gives each state's optimizer seed.  Each
    (state, restart) pair owns an independent machine; every round gathers
    one pending point per live machine and evaluates them in one batched
    integration.  Results are identical to calling
    :func:`optimize_lyapunov_weights` state by state.
    """
    initials = np.asarray(initials, dtype=complex)
    S = initials.shape[0]
    seeds = list(seeds)
    if len(seeds) != S:
        raise ValidationError("one seed per initial state is required")
    goal = system.basis.goal_index
    machines: list[NelderMeadMachine] = []
    owner: list[int] = []
    for s in range(S):
        for r in range(restarts):
            rng = substream(seeds[s], r)
            machines.append(NelderMeadMachine(bounds.random_interior(rng), bounds,
                                              xtol=xtol, ftol=ftol, max_evals=max_evals))
            owner.append(s)
    live = list(range(len(machines)))
    rounds = 0
    while live:
        pts = np.array([machines[i].ask() for i in live])
        p_full = np.array([
            _weights_from_box_point(x, goal, system.dim).as_array() for x in pts
        ])
        batch = evolve_batch(system, initials[[owner[i] for i in live]], p_full,
                             scheme=scheme, dt=dt, threads=threads)
        infid = 1.0 - batch.fidelities
        still = []
        for i, f in zip(live, infid):
            machines[i].tell(float(f))
            if not machines[i].done:
                still.append(i)
        live = still
        rounds += 1
        if progress is not None:
            progress(rounds, len(live), len(machines))

    results: list[WeightsOptimum] = []
    for s in range(S):
        best_x, best_f = None, np.inf
        evals = 0
        for i, o in enumerate(owner):
            if o != s:
                continue
            x, fx = machines[i].best()
            evals += machines[i].evals
            if fx < best_f:
                best_x, best_f = x, fx
        results.append(WeightsOptimum(_weights_from_box_point(best_x, goal, system.dim),
                                      best_f, evals, restarts))
    return results
