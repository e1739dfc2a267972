"""Funnel-gradient feedback for STL tasks evaluated at mixed states.

Each task owner keeps its non-temporal formula inside a shrinking
corridor below a reference level rho_max: with the tightened envelope
Gamma(t), the normalized error

    e = (rho_hat - rho_max) / Gamma(t)      in (-1, 0)

is pushed through the strictly increasing transform
T(e) = ln(-(e+1)/e) with Jacobian J(e) = -1/(e(e+1)) >= 4, and every
agent applies

    u_i = -g_i(x_i)^T * sum_tasks  d(rho_hat)/dx_i * Gamma^-1 * J * epsilon.

rho_hat is the robustness at the mixed state: true states for
participants in direct communication, the owner's k-hop estimates for the
rest. Estimated participants are treated as constants when
differentiating, so only communicating participants receive a gradient
contribution; cross-cluster couplings vanish structurally.

Conjunctions are handled by smoothing both sides: the soft minimum of the
conjunct robustness values (with its exact gradient) runs against the
soft minimum of the per-conjunct envelopes. Both soft minima
under-approximate the true minima, so corridor membership of the smooth
pair certifies membership for every conjunct.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError
from .funnels import TaskFunnel
from .stl import Conjunction, Literal, NormBallAbsolute, NormBallRelative, TemporalFormula, smooth_min

E_GUARD = 1e-9


@dataclass(frozen=True)
class TaskError:
    """Normalized/transformed funnel error for one task at one instant."""

    e: float
    epsilon: float
    jacobian: float
    clamped: bool


def task_error(rho_hat: float, rho_max: float, gamma_t: float) -> TaskError:
    """Map the corridor position of rho_hat into the transformed error.

    gamma_t is the envelope value Gamma(t) > 0. Funnel membership means
    e in (-1, 0); values outside are clamped into the guarded interval
    (the run records the event and fails acceptance, clamping only keeps
    the numbers finite while the breach is diagnosed).
    """
    if gamma_t <= 0:
        raise InvalidParameterError(f"Gamma(t) must be positive, got {gamma_t}")
    e = (rho_hat - rho_max) / gamma_t
    clamped = not (-1.0 + E_GUARD <= e <= -E_GUARD)
    e = min(max(e, -1.0 + E_GUARD), -E_GUARD)
    epsilon = math.log(-(e + 1.0) / e)
    jacobian = -1.0 / (e * (e + 1.0))
    return TaskError(e=e, epsilon=epsilon, jacobian=jacobian, clamped=clamped)


def conjunction_funnel(funnels, t: float, eta: float):
    """Soft minimum of the per-conjunct envelopes Gamma_j(t).

    Exact for a single conjunct; for several it sits within ln(z)/eta
    below the smallest envelope. Returns (Gamma_bar, per-conjunct values).
    """
    values = np.array([f.Gamma(t) for f in funnels], dtype=float)
    gamma_bar, _ = smooth_min(values, eta)
    return float(gamma_bar), values


class ControlTask:
    """Runtime bundle for one agent's task: formula, funnels, participants."""

    def __init__(self, owner, name: str, temporal: TemporalFormula,
                 conjuncts, funnels, rho_max: float, known_ids, estimated_ids,
                 eta: float = 20.0):
        if len(conjuncts) != len(funnels):
            raise InvalidParameterError("one funnel per conjunct required")
        self.owner = owner
        self.name = name
        self.temporal = temporal
        self.conjuncts = tuple(
            Literal(c) if not isinstance(c, Literal) else c for c in conjuncts
        )
        self.funnels: tuple[TaskFunnel, ...] = tuple(funnels)
        self.rho_max = float(rho_max)
        self.known_ids = frozenset(known_ids)
        self.estimated_ids = frozenset(estimated_ids)
        self.eta = float(eta)
        self.body = Conjunction(self.conjuncts)

    def conjunct_values(self, states):
        values, grads = [], []
        for lit in self.conjuncts:
            v, g = lit.value_and_grad(states)
            values.append(v)
            grads.append(g)
        return np.array(values), grads

    def evaluate(self, states, t: float):
        """Smooth robustness, envelope, transformed error and gradients.

        states maps participant id to its position (true for known ids,
        the owner's estimate otherwise). Gradients are reported for known
        participants only; estimated ones are held constant.
        """
        values, grads = self.conjunct_values(states)
        rho_bar, weights = smooth_min(values, self.eta)
        gamma_bar, gamma_values = conjunction_funnel(self.funnels, t, self.eta)
        err = task_error(float(rho_bar), self.rho_max, gamma_bar)

        grad_known = {}
        for w, g in zip(weights, grads):
            for agent, vec in g.items():
                if agent in self.known_ids:
                    if agent in grad_known:
                        grad_known[agent] = grad_known[agent] + w * vec
                    else:
                        grad_known[agent] = w * vec
        return TaskEvaluation(
            task=self,
            rho_smooth=float(rho_bar),
            conjunct_rhos=values,
            gamma_bar=gamma_bar,
            conjunct_gammas=gamma_values,
            error=err,
            grad_known=grad_known,
        )


@dataclass
class TaskEvaluation:
    task: ControlTask
    rho_smooth: float
    conjunct_rhos: np.ndarray
    gamma_bar: float
    conjunct_gammas: np.ndarray
    error: TaskError
    grad_known: dict

    def drive(self) -> float:
        """Scalar weight Gamma^-1 * J * epsilon applied to the gradient."""
        return self.error.jacobian * self.error.epsilon / self.gamma_bar


def control_direction(agent, evaluations) -> dict:
    """Accumulate sum_tasks grad_i(rho_hat) * Gamma^-1 J epsilon per agent.

    Only tasks that structurally depend on the agent's true state
    contribute; the result is a map agent -> position-space vector which
    the simulation lifts through -g^T into actuator space.
    """
    total = None
    for ev in evaluations:
        vec = ev.grad_known.get(agent)
        if vec is None:
            continue
        term = ev.drive() * vec
        total = term if total is None else total + term
    return total


def literal_optimum(lit: Literal) -> float:
    """Supremum of a literal's robustness; +inf when unbounded above."""
    if lit.negated:
        return math.inf  # negated balls/bounds are unbounded above
    return lit.predicate.optimum()


def validate_rho_max(task: ControlTask, witness_states=None) -> dict:
    """Check 0 < rho_max < rho_opt for one task.

    For a single plain norm-ball conjunct the optimum is the squared
    radius, so the check is analytic. Otherwise a witness configuration
    supplies a certified lower bound on the optimum (robustness at the
    witness); without one the check is reported as unchecked.
    """
    analytic = None
    if len(task.conjuncts) == 1 and not task.conjuncts[0].negated:
        pred = task.conjuncts[0].predicate
        if isinstance(pred, (NormBallAbsolute, NormBallRelative)):
            analytic = pred.optimum()
    upper = min(literal_optimum(l) for l in task.conjuncts)

    entry = {
        "task": task.name,
        "rho_max": task.rho_max,
        "optimum_upper_bound": upper if math.isfinite(upper) else "inf",
    }
    if analytic is not None:
        entry["kind"] = "analytic"
        entry["rho_opt"] = analytic
        entry["passes"] = 0.0 < task.rho_max < analytic
        return entry
    if witness_states is not None:
        rho_w, _, _ = task.body.robustness_exact(witness_states)
        entry["kind"] = "lower-bound certificate"
        entry["witness_bound"] = rho_w
        entry["passes"] = 0.0 < task.rho_max < rho_w
        return entry
    entry["kind"] = "unchecked"
    entry["passes"] = (0.0 < task.rho_max < upper) if math.isfinite(upper) else None
    return entry
