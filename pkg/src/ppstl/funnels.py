"""Prescribed performance functions and funnel design.

A prescribed performance function (PPF) is positive, bounded, C^1, and has
a bounded derivative; it prescribes a shrinking envelope that an error
signal must stay inside. The only concrete family used here is the
decreasing exponential

    p(t) = (p0 - p_inf) * exp(-rate * t) + p_inf.

On top of that this module builds:

* sums and Euclidean norms of PPFs, with certified bounds carried along;
* the observer funnel design: given the induced matrices M = L + H and
  target error bounds delta per estimator row, pick disagreement funnels
  rho so that sum_r |M^-1|_jr * rho_r(t) <= delta_j(t) for every row and
  all t, tight for at least one row;
* the worst-case robustness penalty for norm-ball predicates evaluated at
  estimates, rho_t(t) = 2*delta(t)*r - delta(t)^2, which converts
  "estimated robustness positive" into "true robustness positive";
* task funnels gamma with the tightened envelope Gamma = gamma - rho_t
  and the three feasibility conditions (Gamma positive, window penalty
  margin, witness-certified optimum margin).

Everything in one design problem shares a single decay rate, which turns
the row inequalities into two algebraic checks (at t=0 and the limit
t->inf): the difference of two same-rate exponentials is monotone in
exp(-rate*t), so nonnegativity at both ends gives nonnegativity
everywhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import AssumptionViolationError, InfeasibleError, InvalidParameterError
from .graphs import InducedMatrices, min_eigenvalue_check
from .stl import TimeWindow

RATE_MATCH_TOL = 1e-12
TIGHT_TOL = 1e-9


@dataclass(frozen=True)
class ExpPpf:
    """Decreasing exponential PPF with initial value, floor and decay rate."""

    rho0: float
    rho_inf: float
    rate: float

    def __post_init__(self):
        if not (self.rho0 >= self.rho_inf > 0):
            raise InvalidParameterError(
                f"need rho0 >= rho_inf > 0, got ({self.rho0}, {self.rho_inf})"
            )
        if self.rate <= 0:
            raise InvalidParameterError(f"decay rate must be positive, got {self.rate}")

    def value(self, t):
        return (self.rho0 - self.rho_inf) * np.exp(-self.rate * np.asarray(t)) + self.rho_inf

    def derivative(self, t):
        return -self.rate * (self.rho0 - self.rho_inf) * np.exp(-self.rate * np.asarray(t))

    def __call__(self, t):
        return self.value(t)

    @property
    def bound(self) -> float:
        """Certified upper bound on the value (attained at t=0)."""
        return self.rho0

    @property
    def derivative_bound(self) -> float:
        """Certified bound on |d/dt| (attained at t=0)."""
        return self.rate * (self.rho0 - self.rho_inf)

    def scaled(self, s: float) -> "ExpPpf":
        return ExpPpf(s * self.rho0, s * self.rho_inf, self.rate)


class CertifiedPpf:
    """A time function plus certified PPF bounds (value and derivative).

    Produced by combining PPFs; keeps callables instead of a closed form.
    All combinations of decreasing inputs are themselves decreasing, which
    the penalty construction uses to take window maxima at the left edge.
    """

    def __init__(self, value, derivative, bound, derivative_bound, floor, decreasing=True):
        self._value = value
        self._derivative = derivative
        self.bound = float(bound)
        self.derivative_bound = float(derivative_bound)
        self.floor = float(floor)
        self.decreasing = bool(decreasing)

    def value(self, t):
        return self._value(np.asarray(t))

    def derivative(self, t):
        return self._derivative(np.asarray(t))

    def __call__(self, t):
        return self.value(t)


def ppf_sum(ppfs) -> CertifiedPpf:
    """Sum of PPFs, itself a PPF with summed certificates."""
    ppfs = list(ppfs)
    if not ppfs:
        raise InvalidParameterError("ppf_sum needs at least one function")
    return CertifiedPpf(
        value=lambda t: sum(p.value(t) for p in ppfs),
        derivative=lambda t: sum(p.derivative(t) for p in ppfs),
        bound=sum(p.bound for p in ppfs),
        derivative_bound=sum(p.derivative_bound for p in ppfs),
        floor=sum(getattr(p, "rho_inf", getattr(p, "floor", 0.0)) for p in ppfs),
    )


def ppf_norm(ppfs) -> CertifiedPpf:
    """Euclidean norm of a vector of PPFs, itself a PPF.

    The derivative is (v . v_dot)/||v||, bounded by ||v_dot|| via
    Cauchy-Schwarz; positivity of each component keeps the norm smooth.
    """
    ppfs = list(ppfs)
    if not ppfs:
        raise InvalidParameterError("ppf_norm needs at least one function")

    def value(t):
        return np.sqrt(sum(np.square(p.value(t)) for p in ppfs))

    def derivative(t):
        num = sum(p.value(t) * p.derivative(t) for p in ppfs)
        return num / value(t)

    return CertifiedPpf(
        value=value,
        derivative=derivative,
        bound=math.sqrt(sum(p.bound ** 2 for p in ppfs)),
        derivative_bound=math.sqrt(sum(p.derivative_bound ** 2 for p in ppfs)),
        floor=math.sqrt(
            sum(getattr(p, "rho_inf", getattr(p, "floor", 0.0)) ** 2 for p in ppfs)
        ),
    )


# ---------------------------------------------------------------------------
# Observer funnel design
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FunnelRow:
    delta: ExpPpf  # target bound on the reconstructed estimation error
    rho: ExpPpf    # funnel on the disagreement component


@dataclass(frozen=True)
class ObserverFunnelSet:
    """Per-estimator-row (delta, rho) pairs tied to one induced matrix."""

    matrices: InducedMatrices
    rows: tuple  # of FunnelRow
    tight_row: int  # row where the design constraint holds with equality at t=0

    def rho_values(self, t) -> np.ndarray:
        return np.array([r.rho.value(t) for r in self.rows])

    def delta_values(self, t) -> np.ndarray:
        return np.array([r.delta.value(t) for r in self.rows])

    def row_constraint_slack(self, t) -> np.ndarray:
        """delta_j(t) - sum_r |M^-1|_jr rho_r(t), nonnegative by design."""
        amat = np.abs(np.linalg.inv(self.matrices.M))
        return self.delta_values(t) - amat @ self.rho_values(t)


def design_observer_funnels(
    mats: InducedMatrices, deltas, shares=None
) -> ObserverFunnelSet:
    """Pick disagreement funnels rho_r = s_r * beta(t) under the row bounds.

    beta is the largest same-rate exponential with
    sum_r |M^-1|_jr s_r beta(t) <= delta_j(t) for every row j; the binding
    row holds with equality at t=0. All deltas must share one decay rate
    so the two-endpoint argument applies.
    """
    deltas = list(deltas)
    eta = len(mats.members)
    if len(deltas) != eta:
        raise InvalidParameterError(
            f"need one delta per row: got {len(deltas)} for eta={eta}"
        )
    rates = {round(d.rate / deltas[0].rate, 9) for d in deltas}
    if rates != {1.0}:
        raise InvalidParameterError("all deltas must share one decay rate")
    min_eigenvalue_check(mats)

    if shares is None:
        shares = np.ones(eta)
    else:
        shares = np.asarray(shares, dtype=float)
        if shares.shape != (eta,) or np.any(shares <= 0):
            raise InvalidParameterError("shares must be positive, one per row")

    amat = np.abs(np.linalg.inv(mats.M))
    weights = amat @ shares  # c_j = sum_r |M^-1|_jr s_r
    start_ratios = np.array([d.rho0 for d in deltas]) / weights
    floor_ratios = np.array([d.rho_inf for d in deltas]) / weights
    beta0 = float(start_ratios.min())
    beta_inf = float(floor_ratios.min())
    tight_row = int(np.argmin(start_ratios))
    rate = deltas[0].rate

    rows = tuple(
        FunnelRow(delta=d, rho=ExpPpf(s * beta0, s * beta_inf, rate))
        for d, s in zip(deltas, shares)
    )
    design = ObserverFunnelSet(matrices=mats, rows=rows, tight_row=tight_row)
    slack0 = design.row_constraint_slack(0.0)
    scale = max(1.0, max(d.rho0 for d in deltas))
    if slack0.min() < -TIGHT_TOL * scale or abs(slack0[tight_row]) > 1e-7 * scale:
        raise AssumptionViolationError("observer funnel design failed its own bounds")
    return design


def legacy_norm_constraint_check(rhos, mats: InducedMatrices, deltas, n_samples=200) -> bool:
    """Whole-vector norm bound ||rho(t)|| <= lambda_min(M) * min_j delta_j(t).

    The older, more conservative admissibility test; kept as the oracle
    side of the inclusion property (anything passing this check also
    passes the row-wise design constraint).
    """
    lam = min_eigenvalue_check(mats)
    slowest = min(min(p.rate for p in rhos), min(d.rate for d in deltas))
    tgrid = np.linspace(0.0, 5.0 / slowest, n_samples)
    rho_sq = sum(np.square(p.value(tgrid)) for p in rhos)
    min_delta = np.min(np.stack([d.value(tgrid) for d in deltas]), axis=0)
    return bool(np.all(np.sqrt(rho_sq) <= lam * min_delta + TIGHT_TOL))


# ---------------------------------------------------------------------------
# Worst-case robustness penalties
# ---------------------------------------------------------------------------

class RhoT:
    """Worst-case robustness penalty; callable in t, decreasing, PPF-like."""

    def __init__(self, value, derivative, bound, derivative_bound, floor):
        self._value = value
        self._derivative = derivative
        self.bound = float(bound)
        self.derivative_bound = float(derivative_bound)
        self.floor = float(floor)

    def value(self, t):
        return self._value(np.asarray(t, dtype=float))

    def derivative(self, t):
        return self._derivative(np.asarray(t, dtype=float))

    def __call__(self, t):
        return self.value(t)

    def max_on(self, lo: float, hi: float) -> float:
        return float(self.value(lo))  # decreasing: window maximum at the left edge

    @staticmethod
    def zero() -> "RhoT":
        """No estimated participants: the penalty vanishes identically."""
        return RhoT(
            value=lambda t: np.zeros_like(np.asarray(t, dtype=float)),
            derivative=lambda t: np.zeros_like(np.asarray(t, dtype=float)),
            bound=0.0, derivative_bound=0.0, floor=0.0,
        )


def rho_t_normball(delta_norm, r: float) -> RhoT:
    """Triangle-inequality penalty 2*delta(t)*r - delta(t)^2 for one participant.

    delta_norm is the norm-aggregated error bound of the estimated
    participant (a PPF); it must stay strictly below the predicate radius
    r, otherwise the worst-case error can consume the whole predicate and
    the relaxation is infeasible.
    """
    if r <= 0:
        raise InvalidParameterError("predicate radius must be positive")
    d0 = float(delta_norm.value(0.0))
    if d0 >= r:
        raise InfeasibleError(
            f"error bound {d0:.4g} >= predicate radius {r:.4g}: "
            "worst-case estimation error consumes the predicate",
            binding="relaxation-radius",
        )

    def value(t):
        d = delta_norm.value(t)
        return 2.0 * d * r - np.square(d)

    def derivative(t):
        d = delta_norm.value(t)
        return 2.0 * delta_norm.derivative(t) * (r - d)

    return RhoT(
        value=value,
        derivative=derivative,
        bound=2.0 * d0 * r - d0 ** 2,
        derivative_bound=2.0 * delta_norm.derivative_bound * r,
        floor=2.0 * delta_norm.floor * r - delta_norm.floor ** 2,
    )


def rho_t_sum(parts) -> RhoT:
    """Sum of per-participant penalties (conservative for several estimates)."""
    parts = list(parts)
    if not parts:
        return RhoT.zero()
    return RhoT(
        value=lambda t: sum(p.value(t) for p in parts),
        derivative=lambda t: sum(p.derivative(t) for p in parts),
        bound=sum(p.bound for p in parts),
        derivative_bound=sum(p.derivative_bound for p in parts),
        floor=sum(p.floor for p in parts),
    )


# ---------------------------------------------------------------------------
# Task funnels
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FunnelMargins:
    """Absolute slacks used when sizing a task funnel.

    ss pads the steady-state funnel width, win pads the in-window
    satisfaction bound, init pads the strict initialization inequality.
    """

    ss: float
    win: float
    init: float = 1e-3

    @staticmethod
    def defaults(rho_max: float) -> "FunnelMargins":
        return FunnelMargins(ss=0.05 * rho_max, win=0.01 * rho_max, init=1e-3)


@dataclass(frozen=True)
class TaskFunnel:
    """Funnel gamma with penalty rho_t; the working envelope is their gap."""

    gamma: ExpPpf
    rho_max: float
    rho_t: RhoT
    window: TimeWindow

    def Gamma(self, t):
        return self.gamma.value(t) - self.rho_t.value(t)

    def Gamma_derivative(self, t):
        return self.gamma.derivative(t) - self.rho_t.derivative(t)

    def initialization_ok(self, init_robustness: float) -> bool:
        """Strict membership -Gamma(0) < rho_hat(0) - rho_max < 0."""
        gap = init_robustness - self.rho_max
        return -float(self.Gamma(0.0)) < gap < 0.0


def build_task_funnel(
    rho_t: RhoT,
    rho_max: float,
    init_robustness: float,
    window: TimeWindow,
    margins: FunnelMargins | None = None,
    n_conjuncts: int = 1,
    eta: float = 20.0,
) -> TaskFunnel:
    """Size gamma so the funnel is feasible, initialized, and window-tight.

    The steady value is the ss margin; the value at the window entry is
    capped at rho_max - max-window rho_t - win margin (so the lower funnel
    bound certifies satisfaction across the window); the initial value
    covers the measured initial robustness with strict slack, enlarged by
    2*ln(z)/eta when the funnel feeds a z-conjunct soft minimum; the decay
    rate is solved so the cap binds exactly at the window entry.
    """
    if rho_max <= 0:
        raise InvalidParameterError("rho_max must be positive")
    if margins is None:
        margins = FunnelMargins.defaults(rho_max)

    penalty_win = rho_t.max_on(window.lo, window.hi)
    if rho_max - penalty_win <= 0:
        raise InfeasibleError(
            f"window penalty {penalty_win:.4g} exceeds rho_max {rho_max:.4g}",
            binding="window-penalty",
        )
    gamma_inf = margins.ss
    target = rho_max - penalty_win - margins.win
    if target <= gamma_inf:
        raise InfeasibleError(
            f"window bound {target:.4g} does not clear the steady width {gamma_inf:.4g}",
            binding="window-margin",
        )
    if init_robustness >= rho_max:
        raise InfeasibleError(
            f"initial robustness {init_robustness:.4g} is not below rho_max {rho_max:.4g}",
            binding="initialization-upper",
        )
    slack = margins.init + (2.0 * math.log(n_conjuncts) / eta if n_conjuncts > 1 else 0.0)
    gamma0 = max(rho_max - init_robustness + float(rho_t.value(0.0)) + slack, gamma_inf)

    if gamma0 <= target:
        rate = 1.0  # cap not binding; any decay keeps the window bound
    elif window.lo <= 0:
        raise InfeasibleError(
            "window starts at t=0 but the initialization bound exceeds the window cap",
            binding="window-start",
        )
    else:
        rate = math.log((gamma0 - gamma_inf) / (target - gamma_inf)) / window.lo

    funnel = TaskFunnel(
        gamma=ExpPpf(gamma0, gamma_inf, rate),
        rho_max=rho_max,
        rho_t=rho_t,
        window=window,
    )
    _validate_task_funnel(funnel)
    if not funnel.initialization_ok(init_robustness):
        raise InfeasibleError(
            "funnel cannot cover the initial robustness strictly",
            binding="initialization-strict",
        )
    return funnel


def _validate_task_funnel(funnel: TaskFunnel, grid_step: float = 1e-3):
    """Gamma positive everywhere; satisfaction bound positive on the window."""
    if funnel.gamma.rho_inf - funnel.rho_t.floor <= 0:
        raise InfeasibleError(
            f"steady funnel width {funnel.gamma.rho_inf:.4g} does not exceed "
            f"steady penalty {funnel.rho_t.floor:.4g}",
            binding="Gamma-steady",
        )
    horizon = max(funnel.window.hi, 5.0 / funnel.gamma.rate) + 1.0
    tgrid = np.linspace(0.0, horizon, 2048)
    if np.min(funnel.Gamma(tgrid)) <= 0:
        raise InfeasibleError("Gamma(t) is not positive on the horizon", binding="Gamma-positivity")
    wgrid = funnel.window.grid(grid_step)
    slack = -funnel.gamma.value(wgrid) + funnel.rho_max - funnel.rho_t.value(wgrid)
    if np.min(slack) <= 0:
        raise InfeasibleError(
            "in-window satisfaction bound is not positive", binding="window-bound"
        )


# ---------------------------------------------------------------------------
# Feasibility reporting
# ---------------------------------------------------------------------------

@dataclass
class TaskFeasibilityInput:
    """Per-task data for the feasibility conditions.

    witness_rhos holds the conjunct robustness values evaluated at the
    user-supplied witness configuration (None when no witness is given).
    """

    name: str
    funnels: list            # one TaskFunnel per conjunct
    witness_rhos: list | None = None


@dataclass
class FeasibilityReport:
    condition_i: bool
    condition_ii: bool
    condition_iii: str  # "pass" | "fail" | "unchecked"
    per_task: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.condition_i and self.condition_ii and self.condition_iii != "fail"

    def to_dict(self) -> dict:
        return {
            "condition_i_gamma_positive": self.condition_i,
            "condition_ii_window_penalty": self.condition_ii,
            "condition_iii_witness_optimum": self.condition_iii,
            "per_task": self.per_task,
            "ok": self.ok,
        }


def feasibility_report(entries, grid_points: int = 2048) -> FeasibilityReport:
    """Evaluate the three funnel feasibility conditions task by task.

    (i) every tightened envelope Gamma stays positive on a dense grid;
    (ii) rho_max clears the window maximum of every penalty;
    (iii) at the witness configuration, every conjunct's robustness clears
    its window penalty — a certified lower bound for the optimum. Tasks
    without a witness leave (iii) unchecked rather than failed.
    """
    cond_i = True
    cond_ii = True
    witness_margins = []
    any_witness = False
    per_task = []
    for entry in entries:
        horizon = max(
            max(f.window.hi for f in entry.funnels),
            max(5.0 / f.gamma.rate for f in entry.funnels),
        ) + 1.0
        tgrid = np.linspace(0.0, horizon, grid_points)
        gamma_min = min(float(np.min(f.Gamma(tgrid))) for f in entry.funnels)
        pen_margin = min(
            f.rho_max - f.rho_t.max_on(f.window.lo, f.window.hi) for f in entry.funnels
        )
        task_i = gamma_min > 0
        task_ii = pen_margin > 0
        cond_i &= task_i
        cond_ii &= task_ii
        task_entry = {
            "task": entry.name,
            "gamma_min": gamma_min,
            "window_penalty_margin": pen_margin,
            "condition_i": task_i,
            "condition_ii": task_ii,
        }
        if entry.witness_rhos is not None:
            any_witness = True
            margin = min(
                rho - f.rho_t.max_on(f.window.lo, f.window.hi)
                for rho, f in zip(entry.witness_rhos, entry.funnels)
            )
            witness_margins.append(margin)
            task_entry["witness_margin"] = margin
        per_task.append(task_entry)

    if any_witness and min(witness_margins) <= 0:
        cond_iii = "fail"
    elif any_witness and all(e.witness_rhos is not None for e in entries):
        cond_iii = "pass"
    else:
        cond_iii = "unchecked"
    return FeasibilityReport(
        condition_i=cond_i,
        condition_ii=cond_ii,
        condition_iii=cond_iii,
        per_task=per_task,
    )
