"""STL fragment: predicates, conjunctions, temporal operators, monitoring.

The fragment covers negation-free boolean structure over (possibly
negated) predicates, with one temporal layer: always G[a,b], eventually
F[a,b], or the composition F[a,b]G[a',b']. Quantitative semantics follow
the usual signed-margin convention: positive robustness means satisfied.

Conjunction robustness comes in two flavors. The exact form is the
minimum over conjuncts with a subgradient taken from the first minimizer.
The smooth form is the log-sum-exp under-approximation

    smin_eta(r_1..r_m) = -(1/eta) * ln(sum_j exp(-eta * r_j)),

which is <= min_j r_j everywhere, within ln(m)/eta of it, and is what the
feedback controller differentiates.

States are passed as a mapping from agent id to that agent's coordinate
vector (typically a position slice); gradients come back as a mapping
with one vector per participating agent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InsufficientDataError, InvalidParameterError

TOP_ROBUSTNESS = math.inf  # robustness sentinel for the trivially-true formula


def smooth_min(values, eta: float):
    """Log-sum-exp soft minimum and its weights, shifted for stability.

    Returns ``(value, weights)`` where weights are the softmax of
    ``-eta * values`` and also the gradient of the soft minimum with
    respect to each entry.
    """
    if eta <= 0:
        raise InvalidParameterError(f"eta must be positive, got {eta}")
    vals = np.asarray(values, dtype=float)
    if vals.size == 0:
        return TOP_ROBUSTNESS, np.zeros(0)
    shifted = -eta * (vals - vals.min())
    w = np.exp(shifted)
    total = w.sum()
    value = vals.min() - math.log(total) / eta
    return value, w / total


# ---------------------------------------------------------------------------
# Predicates
# ---------------------------------------------------------------------------

class Predicate:
    """Base class; subclasses define value_and_grad over participant states."""

    participants: tuple

    def value_and_grad(self, states: dict):
        raise NotImplementedError

    def optimum(self):
        """Global maximum of the predicate function, or +inf if unbounded."""
        raise NotImplementedError

    def _get(self, states, agent):
        try:
            return np.asarray(states[agent], dtype=float)
        except KeyError:
            raise InvalidParameterError(
                f"state of agent {agent} missing from predicate evaluation"
            )


class NormBallRelative(Predicate):
    """radius_sq - ||x_i - x_j - offset||^2 (pairwise formation/proximity)."""

    def __init__(self, i, j, radius_sq: float, offset=None, dim: int = 2):
        if radius_sq <= 0:
            raise InvalidParameterError("radius_sq must be positive")
        self.i, self.j = i, j
        self.radius_sq = float(radius_sq)
        self.offset = np.zeros(dim) if offset is None else np.asarray(offset, float)
        self.participants = (i, j)

    def value_and_grad(self, states):
        xi, xj = self._get(states, self.i), self._get(states, self.j)
        if xi.shape != self.offset.shape or xj.shape != self.offset.shape:
            raise InvalidParameterError("state dimension mismatch in relative norm ball")
        rel = xi - xj - self.offset
        value = self.radius_sq - float(rel @ rel)
        return value, {self.i: -2.0 * rel, self.j: 2.0 * rel}

    def optimum(self):
        return self.radius_sq


class NormBallAbsolute(Predicate):
    """radius_sq - ||x_i - center||^2 (reach/stay region)."""

    def __init__(self, i, center, radius_sq: float):
        if radius_sq <= 0:
            raise InvalidParameterError("radius_sq must be positive")
        self.i = i
        self.center = np.asarray(center, dtype=float)
        self.radius_sq = float(radius_sq)
        self.participants = (i,)

    def value_and_grad(self, states):
        xi = self._get(states, self.i)
        if xi.shape != self.center.shape:
            raise InvalidParameterError("state dimension mismatch in absolute norm ball")
        rel = xi - self.center
        return self.radius_sq - float(rel @ rel), {self.i: -2.0 * rel}

    def optimum(self):
        return self.radius_sq


class BoundPredicate(Predicate):
    """cbar_sq - ||stacked state||^2, the well-posedness guard."""

    def __init__(self, agents, cbar_sq: float):
        if cbar_sq <= 0:
            raise InvalidParameterError("cbar_sq must be positive")
        self.participants = tuple(agents)
        self.cbar_sq = float(cbar_sq)

    def value_and_grad(self, states):
        value = self.cbar_sq
        grads = {}
        for a in self.participants:
            xa = self._get(states, a)
            value -= float(xa @ xa)
            grads[a] = -2.0 * xa
        return value, grads

    def optimum(self):
        return self.cbar_sq


class AffinePredicate(Predicate):
    """sum_a coeff_a . x_a + const (halfplane constraints)."""

    def __init__(self, coeffs: dict, const: float = 0.0):
        self.coeffs = {a: np.asarray(c, dtype=float) for a, c in coeffs.items()}
        self.const = float(const)
        self.participants = tuple(sorted(self.coeffs))

    def value_and_grad(self, states):
        value = self.const
        grads = {}
        for a, c in self.coeffs.items():
            xa = self._get(states, a)
            if xa.shape != c.shape:
                raise InvalidParameterError("state dimension mismatch in affine predicate")
            value += float(c @ xa)
            grads[a] = c.copy()
        return value, grads

    def optimum(self):
        return math.inf


@dataclass(frozen=True)
class Literal:
    """A predicate or its negation (negation applies to predicates only)."""

    predicate: Predicate
    negated: bool = False

    def value_and_grad(self, states):
        value, grads = self.predicate.value_and_grad(states)
        if self.negated:
            return -value, {a: -g for a, g in grads.items()}
        return value, grads


class Conjunction:
    """Conjunction of literals; the empty conjunction is the true formula."""

    def __init__(self, literals):
        self.literals = tuple(
            Literal(l) if isinstance(l, Predicate) else l for l in literals
        )

    @property
    def participants(self) -> tuple:
        seen = []
        for lit in self.literals:
            for a in lit.predicate.participants:
                if a not in seen:
                    seen.append(a)
        return tuple(seen)

    def robustness_exact(self, states):
        """(value, grads, argmin): min over conjuncts, first-minimizer subgradient."""
        if not self.literals:
            return TOP_ROBUSTNESS, {}, -1
        best_value, best_grads, best_idx = math.inf, {}, -1
        for idx, lit in enumerate(self.literals):
            value, grads = lit.value_and_grad(states)
            if value < best_value:
                best_value, best_grads, best_idx = value, grads, idx
        return best_value, best_grads, best_idx

    def robustness_smooth(self, states, eta: float):
        """Soft-min value and its exact gradient (softmax-weighted conjuncts)."""
        if not self.literals:
            # The true formula is excluded from smoothing: +inf, zero gradient.
            return TOP_ROBUSTNESS, {}
        values, grads = [], []
        for lit in self.literals:
            v, g = lit.value_and_grad(states)
            values.append(v)
            grads.append(g)
        value, weights = smooth_min(values, eta)
        total = {}
        for w, g in zip(weights, grads):
            for a, vec in g.items():
                if a in total:
                    total[a] = total[a] + w * vec
                else:
                    total[a] = w * vec
        return value, total


def robustness(psi: Conjunction, states, mode: str = "exact", eta: float = 20.0):
    """Conjunction robustness in 'exact' or 'smooth' mode: (value, grads)."""
    if mode == "exact":
        value, grads, _ = psi.robustness_exact(states)
        return value, grads
    if mode == "smooth":
        return psi.robustness_smooth(states, eta)
    raise InvalidParameterError(f"unknown robustness mode {mode!r}")


# ---------------------------------------------------------------------------
# Temporal layer
# ---------------------------------------------------------------------------

class TemporalFormula:
    """G[a,b] psi, F[a,b] psi, or F[a,b] G[a2,b2] psi."""

    def __init__(self, op: str, body: Conjunction, a: float, b: float,
                 a2: float | None = None, b2: float | None = None):
        if op not in ("G", "F", "FG"):
            raise InvalidParameterError(f"unknown temporal operator {op!r}")
        if not (0 <= a <= b):
            raise InvalidParameterError(f"need 0 <= a <= b, got [{a}, {b}]")
        if op == "FG":
            if a2 is None or b2 is None:
                raise InvalidParameterError("FG needs the inner interval")
            if not (0 <= a2 <= b2):
                raise InvalidParameterError(f"need 0 <= a2 <= b2, got [{a2}, {b2}]")
        self.op = op
        self.body = body
        self.a, self.b = float(a), float(b)
        self.a2 = None if a2 is None else float(a2)
        self.b2 = None if b2 is None else float(b2)

    @property
    def horizon(self) -> float:
        """Latest time the formula can look at, evaluated from t=0."""
        return self.b + (self.b2 if self.op == "FG" else 0.0)


@dataclass(frozen=True)
class TimeWindow:
    lo: float
    hi: float

    def grid(self, step: float) -> np.ndarray:
        n = max(1, int(round((self.hi - self.lo) / step)) + 1)
        return np.linspace(self.lo, self.hi, n)


def time_window(phi: TemporalFormula, t_star: float | None = None) -> TimeWindow:
    """Window over which the body must hold, given the chosen t* for F/FG.

    For F and FG the paper-style reduction needs a committed satisfaction
    instant t*; by default we take the end of the outer interval, which
    leaves the funnel the longest time to contract.
    """
    if phi.op == "G":
        return TimeWindow(phi.a, phi.b)
    if t_star is None:
        t_star = phi.b
    if not (phi.a <= t_star <= phi.b):
        raise InvalidParameterError(
            f"t*={t_star} outside the outer interval [{phi.a}, {phi.b}]"
        )
    if phi.op == "F":
        return TimeWindow(t_star, t_star)
    return TimeWindow(t_star + phi.a2, t_star + phi.b2)


def _window_indices(times: np.ndarray, lo: float, hi: float):
    eps = 1e-9
    idx = np.nonzero((times >= lo - eps) & (times <= hi + eps))[0]
    return idx


def monitor_series(phi: TemporalFormula, times: np.ndarray, rho: np.ndarray):
    """Offline margin of phi at t=0 given the body robustness on a grid.

    G: min over samples in [a,b]; F: max over [a,b]; FG: max over outer
    samples t1 of the min over [t1+a2, t1+b2]. No interpolation between
    samples. Raises when the grid does not cover the formula horizon.
    """
    times = np.asarray(times, dtype=float)
    rho = np.asarray(rho, dtype=float)
    if times.shape != rho.shape:
        raise InvalidParameterError("times and robustness series differ in length")
    if times.size == 0 or times[-1] < phi.horizon - 1e-9:
        raise InsufficientDataError(
            f"trajectory ends at {times[-1] if times.size else 'nothing'} "
            f"but the formula horizon is {phi.horizon}"
        )
    if phi.op == "G":
        idx = _window_indices(times, phi.a, phi.b)
        return float(rho[idx].min())
    if phi.op == "F":
        idx = _window_indices(times, phi.a, phi.b)
        return float(rho[idx].max())
    best = -math.inf
    for t1 in times[_window_indices(times, phi.a, phi.b)]:
        idx = _window_indices(times, t1 + phi.a2, t1 + phi.b2)
        if idx.size:
            best = max(best, float(rho[idx].min()))
    return best


def monitor_trajectory(phi: TemporalFormula, times, states_per_step):
    """(satisfied, margin) of phi on logged states, exact-min semantics.

    ``states_per_step`` is a sequence of per-step state mappings as used
    by the predicates.
    """
    rho = np.array(
        [phi.body.robustness_exact(s)[0] for s in states_per_step], dtype=float
    )
    margin = monitor_series(phi, np.asarray(times, float), rho)
    return margin > 0.0, margin


def split_state_views(gc, gt, i):
    """Partition task i's participants into locally known vs estimated ids.

    Known ids are task participants inside i's closed communication
    neighborhood (their true states arrive over one hop); the rest must be
    estimated through the k-hop observer.
    """
    task = gt.task_neighborhood(i)
    closed = gc.closed_neighbors(i)
    known = frozenset(task & closed)
    estimated = frozenset(task - closed)
    return known, estimated
