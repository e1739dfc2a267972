"""Scenario runtime assembly and the synchronous simulation loop.

The loop advances plants and observers as one coupled ODE with classical
RK4. Within a step the disturbance is held constant; at every RK4 stage a
single consistent snapshot of all states and estimates is formed, and
every cross-agent quantity (neighbor estimates, shared true states, task
gradients) is read from that snapshot through locality-scoped views. Runs
are deterministic given (scenario, seed, dt): one PCG64 stream drives the
estimate initialization and then the per-step disturbance draws.

Per committed step the engine logs states, inputs, disturbances, all
observer quantities (estimates, disagreements, funnels, reconstruction
errors) and all task quantities (smooth/estimated and exact/true
robustness, envelopes, transformed errors), and checks the funnel
invariants; violations are recorded as events and mark the run failed,
but integration continues to t_end so the breach can be analyzed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .controller import ControlTask, validate_rho_max
from .dynamics import make_dynamics, sample_disturbance
from .errors import (
    AssumptionViolationError,
    InfeasibleError,
    ScenarioError,
)
from .funnels import (
    ExpPpf,
    FunnelMargins,
    RhoT,
    TaskFeasibilityInput,
    TaskFunnel,
    build_task_funnel,
    design_observer_funnels,
    feasibility_report,
    ppf_norm,
    rho_t_normball,
    rho_t_sum,
    _validate_task_funnel,
)
from .graphs import (
    check_assumptions,
    cluster_decomposition,
    induced_matrices,
    k_hop_neighbors,
    min_eigenvalue_check,
    min_required_k,
)
from .observer import (
    BankView,
    ObserverBank,
    ReadCounters,
    disagreement,
    disagreement_rows,
    observer_derivative,
)
from .scenario import Scenario
from .stl import (
    AffinePredicate,
    BoundPredicate,
    Conjunction,
    Literal,
    NormBallAbsolute,
    NormBallRelative,
    TemporalFormula,
    monitor_series,
    split_state_views,
    time_window,
)

RHO_MAX_DEFAULT_FRACTION = 47.0 / 60.0  # the 7.05-under-9 slack pattern


def _build_predicate(conj, pos_dim: int):
    p = conj.params
    if conj.kind == "norm_ball_absolute":
        pred = NormBallAbsolute(p["agent"], p["center"], p["radius_sq"])
    elif conj.kind == "norm_ball_relative":
        pred = NormBallRelative(
            p["i"], p["j"], p["radius_sq"], offset=p.get("offset"), dim=pos_dim
        )
    elif conj.kind == "bound":
        pred = BoundPredicate(p["agents"], p["cbar_sq"])
    elif conj.kind == "affine":
        pred = AffinePredicate(p["coeffs"], p.get("const", 0.0))
    else:
        raise ScenarioError([f"unknown conjunct kind {conj.kind!r}"])
    return Literal(pred, negated=conj.negated)


@dataclass
class AgentRuntime:
    id: int
    dynamics: object
    x0: np.ndarray

    @property
    def dim(self):
        return self.dynamics.dim


class Runtime:
    """Everything derivable from a scenario without drawing random numbers."""

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self.gc = scenario.comm_graph()
        self.gt = scenario.task_graph()
        self.decomposition = cluster_decomposition(self.gc, self.gt)
        self.assumptions = check_assumptions(self.gc, self.gt, self.decomposition)
        if not self.assumptions.ok:
            raise AssumptionViolationError(
                "scenario violates structural assumptions: "
                + "; ".join(self.assumptions.failures)
            )

        self.agents = []
        for spec in sorted(scenario.agents, key=lambda a: a.id):
            dyn = make_dynamics(spec.dynamics_kind, spec.dynamics_params)
            x0 = np.asarray(spec.initial_state, dtype=float)
            if x0.shape != (dyn.dim,):
                raise ScenarioError(
                    [f"agent {spec.id}: initial state has {x0.size} entries, "
                     f"dynamics needs {dyn.dim}"]
                )
            self.agents.append(AgentRuntime(id=spec.id, dynamics=dyn, x0=x0))
        self.index_of = {a.id: i for i, a in enumerate(self.agents)}
        self.n_agents = len(self.agents)
        self.dim_max = max(a.dim for a in self.agents)
        self.input_dim_max = max(a.dynamics.input_dim for a in self.agents)

        self.required_k = min_required_k(self.gc, self.gt)
        k_cfg = scenario.observer.k
        if k_cfg == "auto":
            self.k = max(2, self.required_k) if self.required_k > 0 else 0
        else:
            self.k = int(k_cfg)

        self.banks = []
        self.bank_of = {}
        self.row_of = {}
        if self.k >= 2:
            for target in self.gc.agents:
                nbh = k_hop_neighbors(self.gc, target, self.k)
                if nbh.size == 0:
                    continue
                mats = induced_matrices(self.gc, nbh)
                delta_cfg = scenario.observer.delta_overrides.get(
                    target, scenario.observer.delta_default
                )
                delta = ExpPpf(delta_cfg["rho0"], delta_cfg["rho_inf"], delta_cfg["rate"])
                shares = scenario.observer.shares.get(target)
                design = design_observer_funnels(mats, [delta] * nbh.size, shares)
                bank = ObserverBank(
                    self.gc, nbh, mats, design,
                    dim=self.agents[self.index_of[target]].dim,
                )
                self.bank_of[target] = len(self.banks)
                for row, est in enumerate(bank.estimators):
                    self.row_of[(target, est)] = row
                self.banks.append(bank)

        self._build_tasks()
        self.lambda_min = {
            b.target: min_eigenvalue_check(b.mats) for b in self.banks
        }

    # -- task assembly ----------------------------------------------------

    def _pos_dim(self, agent_id) -> int:
        return len(self.agents[self.index_of[agent_id]].dynamics.pos_idx)

    def _build_tasks(self):
        self.tasks = []
        for spec in sorted(self.scenario.tasks, key=lambda t: t.agent):
            owner = spec.agent
            pos_dim = self._pos_dim(owner)
            literals = [_build_predicate(c, pos_dim) for c in spec.conjuncts]
            known, estimated = split_state_views(self.gc, self.gt, owner)
            for p in estimated:
                if self.k < 2 or p not in k_hop_neighbors(self.gc, owner, self.k).members:
                    raise AssumptionViolationError(
                        f"task {spec.name}: agent {owner} cannot estimate {p} with k={self.k}"
                    )
            if spec.operator == "G":
                temporal = TemporalFormula("G", Conjunction(literals),
                                           spec.interval[0], spec.interval[1])
            elif spec.operator == "F":
                temporal = TemporalFormula("F", Conjunction(literals),
                                           spec.interval[0], spec.interval[1])
            else:
                temporal = TemporalFormula("FG", Conjunction(literals),
                                           spec.interval[0], spec.interval[1],
                                           spec.inner_interval[0], spec.inner_interval[1])
            window = time_window(temporal, spec.t_star)

            rho_max = spec.rho_max
            if rho_max is None:
                upper = min(
                    lit.predicate.optimum() for lit in literals if not lit.negated
                )
                if not math.isfinite(upper):
                    raise ScenarioError(
                        [f"task {spec.name}: rho_max must be given for unbounded predicates"]
                    )
                rho_max = RHO_MAX_DEFAULT_FRACTION * upper

            rho_ts = [self._conjunct_rho_t(spec, lit, owner, estimated) for lit in literals]
            eta = spec.eta if spec.eta is not None else self.scenario.sim.eta
            task = ControlTask(
                owner=owner, name=spec.name, temporal=temporal,
                conjuncts=literals, funnels=[None] * len(literals),
                rho_max=rho_max, known_ids=known, estimated_ids=estimated, eta=eta,
            )
            task.window = window
            task.rho_ts = rho_ts
            task.spec = spec
            self.tasks.append(task)

    def _conjunct_rho_t(self, spec, lit: Literal, owner, estimated) -> RhoT:
        involved = [p for p in lit.predicate.participants if p in estimated]
        if not involved:
            return RhoT.zero()
        if lit.negated:
            raise ScenarioError(
                [f"task {spec.name}: estimated participants in negated "
                 "conjuncts have no worst-case penalty"]
            )
        deltas = []
        for p in involved:
            bank = self.banks[self.bank_of[p]]
            row = self.row_of[(p, owner)]
            delta = bank.funnels.rows[row].delta
            deltas.append(ppf_norm([delta] * self._pos_dim(p)))

        pred = lit.predicate
        if isinstance(pred, (NormBallAbsolute, NormBallRelative, BoundPredicate)):
            radius = math.sqrt(pred.optimum())
            total0 = sum(float(d.value(0.0)) for d in deltas)
            if total0 >= radius:
                raise InfeasibleError(
                    f"task {spec.name}: combined error bound {total0:.4g} reaches "
                    f"the predicate radius {radius:.4g}",
                    binding="relaxation-radius",
                )
            return rho_t_sum([rho_t_normball(d, radius) for d in deltas])
        if isinstance(pred, AffinePredicate):
            parts = []
            for p, d in zip(involved, deltas):
                coeff = float(np.linalg.norm(pred.coeffs[p]))
                parts.append(RhoT(
                    value=lambda t, c=coeff, dn=d: c * dn.value(t),
                    derivative=lambda t, c=coeff, dn=d: c * dn.derivative(t),
                    bound=coeff * d.bound,
                    derivative_bound=coeff * d.derivative_bound,
                    floor=coeff * d.floor,
                ))
            return rho_t_sum(parts)
        raise ScenarioError(
            [f"task {spec.name}: no worst-case penalty for predicate "
             f"{type(pred).__name__} with estimated participants"]
        )

    # -- state helpers ----------------------------------------------------

    def initial_states(self) -> np.ndarray:
        states = np.zeros((self.n_agents, self.dim_max))
        for i, a in enumerate(self.agents):
            states[i, : a.dim] = a.x0
        return states

    def positions(self, states: np.ndarray) -> np.ndarray:
        pos = np.empty((self.n_agents, 2))
        for i, a in enumerate(self.agents):
            idx = a.dynamics.pos_idx
            pos[i, 0] = states[i, idx[0]]
            pos[i, 1] = states[i, idx[1]]
        return pos

    def mixed_positions(self, task: ControlTask, pos: np.ndarray, est_list) -> dict:
        """Owner's view: true positions for known ids, estimates otherwise."""
        states = {}
        for p in task.body.participants:
            if p in task.known_ids:
                states[p] = pos[self.index_of[p]]
            else:
                bank = self.banks[self.bank_of[p]]
                row = self.row_of[(p, task.owner)]
                x = est_list[self.bank_of[p]][row]
                states[p] = x[list(bank_pos_idx(bank, self))]
        return states

    def true_positions_map(self, pos: np.ndarray, ids) -> dict:
        return {a: pos[self.index_of[a]] for a in ids}


def bank_pos_idx(bank: ObserverBank, runtime: Runtime):
    return runtime.agents[runtime.index_of[bank.target]].dynamics.pos_idx


# ---------------------------------------------------------------------------
# Funnel design at run start
# ---------------------------------------------------------------------------

def initialize_run(runtime: Runtime, rng: np.random.Generator):
    """Draw estimate initializations and size every task funnel.

    Estimates are drawn target by target in ascending order (seeded), then
    each conjunct funnel is built against the measured initial robustness.
    The strict funnel-membership check at t=0 runs before any integration.
    """
    states = runtime.initial_states()
    est_list = []
    for bank in runtime.banks:
        bank.initialize(
            states[runtime.index_of[bank.target], : bank.dim], rng,
            fill=runtime.scenario.observer.init_fill,
        )
        est_list.append(bank.estimates.copy())

    pos = runtime.positions(states)
    for task in runtime.tasks:
        mixed = runtime.mixed_positions(task, pos, est_list)
        values, _ = task.conjunct_values(mixed)
        init_rho = float(values.min())
        spec = task.spec
        margins = None
        if spec.margins is not None:
            base = FunnelMargins.defaults(task.rho_max)
            margins = FunnelMargins(
                ss=spec.margins.get("ss", base.ss),
                win=spec.margins.get("win", base.win),
                init=spec.margins.get("init", base.init),
            )
        funnels = []
        for lit, rho_t in zip(task.conjuncts, task.rho_ts):
            if spec.funnel is not None:
                funnel = TaskFunnel(
                    gamma=ExpPpf(spec.funnel["gamma0"], spec.funnel["gamma_inf"],
                                 spec.funnel["rate"]),
                    rho_max=task.rho_max, rho_t=rho_t, window=task.window,
                )
                _validate_task_funnel(funnel)
            else:
                funnel = build_task_funnel(
                    rho_t, task.rho_max, init_rho, task.window,
                    margins=margins, n_conjuncts=len(task.conjuncts), eta=task.eta,
                )
            funnels.append(funnel)
        task.funnels = tuple(funnels)
        ev = task.evaluate(mixed, 0.0)
        if ev.error.clamped:
            raise InfeasibleError(
                f"task {task.name}: initialization violates funnel membership "
                f"(rho_hat(0)={ev.rho_smooth:.4g}, rho_max={task.rho_max:.4g}, "
                f"Gamma(0)={ev.gamma_bar:.4g})",
                binding="initialization",
            )
    return states, est_list


# ---------------------------------------------------------------------------
# The simulation loop
# ---------------------------------------------------------------------------

@dataclass
class SimEvents:
    saturations: int = 0
    observer_exits: int = 0
    task_exits: int = 0
    locality_breaches: int = 0
    entries: list = field(default_factory=list)
    first_breach: dict | None = None

    @property
    def breach_count(self) -> int:
        return self.observer_exits + self.task_exits + self.locality_breaches

    @property
    def failed(self) -> bool:
        return self.breach_count > 0 or self.saturations > 0

    def record(self, t, kind, subject, detail, limit=200):
        entry = {"t": t, "kind": kind, "subject": subject, "detail": detail}
        if len(self.entries) < limit:
            self.entries.append(entry)
        if kind != "saturation" and self.first_breach is None:
            self.first_breach = entry

    def to_dict(self) -> dict:
        return {
            "counts": {
                "saturations": self.saturations,
                "observer_funnel_exits": self.observer_exits,
                "task_funnel_exits": self.task_exits,
                "locality_breaches": self.locality_breaches,
            },
            "failed": self.failed,
            "first_breach": self.first_breach,
            "events": self.entries,
        }


class Trajectory:
    """Uniform-grid log with a frozen column schema."""

    def __init__(self, columns, n_rows):
        self.columns = list(columns)
        self._index = {name: i for i, name in enumerate(self.columns)}
        self.data = np.zeros((n_rows, len(self.columns)))
        self.n_rows = n_rows

    def set_row(self, r, values: dict):
        row = self.data[r]
        for name, v in values.items():
            row[self._index[name]] = v

    def column(self, name) -> np.ndarray:
        return self.data[:, self._index[name]]

    @property
    def times(self) -> np.ndarray:
        return self.column("t")

    def to_csv(self, path, fmt="%.10g"):
        header = ",".join(self.columns)
        np.savetxt(path, self.data, fmt=fmt, delimiter=",", header=header, comments="")

    @staticmethod
    def from_csv(path) -> "Trajectory":
        with open(path) as fh:
            header = fh.readline().strip()
        if not header or header.split(",")[0] != "t":
            raise ScenarioError([f"{path}: not a trajectory CSV (missing 't' column)"])
        columns = header.split(",")
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        traj = Trajectory(columns, data.shape[0])
        traj.data = data
        return traj


def _columns(runtime: Runtime):
    cols = ["t"]
    for a in runtime.agents:
        cols += [f"x{a.id}_{c}" for c in range(a.dim)]
    for a in runtime.agents:
        cols += [f"u{a.id}_{c}" for c in range(a.dynamics.input_dim)]
    for a in runtime.agents:
        cols += [f"w{a.id}_{c}" for c in range(a.dim)]
    for bank in runtime.banks:
        for est in bank.estimators:
            cols += [f"xhat{bank.target}_{est}_{c}" for c in range(bank.dim)]
            cols += [f"xi{bank.target}_{est}_{c}" for c in range(bank.dim)]
            cols += [f"xerr{bank.target}_{est}_{c}" for c in range(bank.dim)]
            cols += [f"rho{bank.target}_{est}", f"delta{bank.target}_{est}"]
    for task in runtime.tasks:
        cols += [f"rhohat_{task.name}", f"rhotrue_{task.name}",
                 f"Gamma_{task.name}", f"e_{task.name}", f"eps_{task.name}"]
        for m in range(len(task.conjuncts)):
            cols += [f"rhoc_{task.name}_{m}", f"rhotruec_{task.name}_{m}",
                     f"gammac_{task.name}_{m}", f"rhotc_{task.name}_{m}"]
    return cols


@dataclass
class SimResult:
    trajectory: Trajectory
    events: SimEvents
    runtime: Runtime
    max_input_norm: dict
    state_excursion: dict

    @property
    def failed(self) -> bool:
        return self.events.failed


def run_simulation(scenario: Scenario, seed=None, dt=None, t_end=None,
                   parallel=False, instrument=False) -> SimResult:
    """Simulate a scenario; deterministic given (scenario, seed, dt).

    ``parallel`` computes per-bank/per-task round quantities through a
    thread pool with a fixed reduction order (bit-identical output);
    ``instrument`` routes disagreements through the row-level scoped
    accessors and cross-checks them against the vectorized path.
    """
    runtime = Runtime(scenario)
    sim = scenario.sim
    seed = sim.seed if seed is None else seed
    dt = sim.dt if dt is None else dt
    t_end = sim.t_end if t_end is None else t_end

    rng = np.random.default_rng(seed)
    states, est_list = initialize_run(runtime, rng)
    events = SimEvents()
    counters = ReadCounters()
    n_steps = int(round(t_end / dt))
    log_every = sim.log_every
    log_rows = n_steps // log_every + 1
    traj = Trajectory(_columns(runtime), log_rows)

    executor = ThreadPoolExecutor(max_workers=4) if parallel else None
    pool_map = executor.map if executor else map

    if n_steps % log_every != 0:
        raise ScenarioError(
            [f"sim: t_end/dt = {n_steps} steps not divisible by log_every={log_every}"]
        )

    banks = runtime.banks
    tasks = runtime.tasks
    agents = runtime.agents
    index_of = runtime.index_of
    coupled = np.array([getattr(a.dynamics, "coupling_gain", 0.0) for a in agents])
    coupling_eps = max(
        (getattr(a.dynamics, "coupling_eps", 1e-4) for a in agents), default=1e-4
    )
    any_coupling = bool(np.any(coupled > 0))

    max_u = {a.id: 0.0 for a in agents}
    excursion = {a.id: 0.0 for a in agents}

    def observer_terms(args):
        bank, est = args
        view = BankView(bank, est, states_sub[index_of[bank.target], : bank.dim],
                        counters)
        if instrument:
            xi = disagreement_rows(bank, view)
            xi_fast = disagreement(bank, view)
            if not np.allclose(xi, xi_fast, atol=1e-12):
                raise AssumptionViolationError("row/vector disagreement paths differ")
        else:
            xi = disagreement(bank, view)
        dxh, clamped = observer_derivative(bank, xi, t_sub)
        return xi, dxh, clamped

    def evaluate_tasks(pos, est_sub, t):
        out = []
        for task in tasks:
            mixed = runtime.mixed_positions(task, pos, est_sub)
            out.append(task.evaluate(mixed, t))
        return out

    def control_vector(evals, pos_states):
        u = np.zeros((runtime.n_agents, runtime.input_dim_max))
        for idx, agent in enumerate(agents):
            total = None
            for ev in evals:
                vec = ev.grad_known.get(agent.id)
                if vec is None:
                    continue
                term = ev.drive() * vec
                total = term if total is None else total + term
            if total is None:
                continue
            lifted = np.zeros(agent.dim)
            for c, p in enumerate(agent.dynamics.pos_idx):
                lifted[p] = total[c]
            g = agent.dynamics.input_matrix(pos_states[idx, : agent.dim])
            u[idx, : agent.dynamics.input_dim] = -g.T @ lifted
        return u

    def repulsion(pos):
        rel = pos[:, None, :] - pos[None, :, :]
        dist = np.sqrt(np.sum(rel * rel, axis=2))
        np.fill_diagonal(dist, np.inf)
        f = np.sum(rel / (dist + coupling_eps)[:, :, None], axis=1)
        return coupled[:, None] * f

    def derivatives(states_arg, est_arg, t, w):
        nonlocal states_sub, t_sub
        states_sub, t_sub = states_arg, t
        terms = list(pool_map(observer_terms, zip(banks, est_arg)))
        pos = runtime.positions(states_arg)
        evals = evaluate_tasks(pos, est_arg, t)
        u = control_vector(evals, states_arg)
        dstates = np.zeros_like(states_arg)
        rep = repulsion(pos) if any_coupling else None
        for idx, agent in enumerate(agents):
            dyn = agent.dynamics
            x = states_arg[idx, : agent.dim]
            drift = dyn.derivative(
                x, u[idx, : dyn.input_dim], (), w[idx, : agent.dim]
            )
            if rep is not None and coupled[idx] > 0:
                drift = drift - np.concatenate([rep[idx], np.zeros(agent.dim - 2)])
            dstates[idx, : agent.dim] = drift
        dest = [term[1] for term in terms]
        return dstates, dest, terms, evals, u

    states_sub, t_sub = states, 0.0

    def log_step(r, t, terms, evals, u, w):
        row = {"t": t}
        for idx, a in enumerate(agents):
            for c in range(a.dim):
                row[f"x{a.id}_{c}"] = states[idx, c]
                row[f"w{a.id}_{c}"] = w[idx, c]
            for c in range(a.dynamics.input_dim):
                row[f"u{a.id}_{c}"] = u[idx, c]
        for b, bank in enumerate(banks):
            xi = terms[b][0]
            est = est_list[b]
            x_true = states[index_of[bank.target], : bank.dim]
            rho = bank.rho(t)
            delta = bank.delta(t)
            for j, estq in enumerate(bank.estimators):
                for c in range(bank.dim):
                    row[f"xhat{bank.target}_{estq}_{c}"] = est[j, c]
                    row[f"xi{bank.target}_{estq}_{c}"] = xi[j, c]
                    row[f"xerr{bank.target}_{estq}_{c}"] = est[j, c] - x_true[c]
                row[f"rho{bank.target}_{estq}"] = rho[j]
                row[f"delta{bank.target}_{estq}"] = delta[j]
        pos = runtime.positions(states)
        for task, ev in zip(tasks, evals):
            true_states = runtime.true_positions_map(pos, task.body.participants)
            values_true, _ = task.conjunct_values(true_states)
            row[f"rhohat_{task.name}"] = ev.rho_smooth
            row[f"rhotrue_{task.name}"] = float(values_true.min())
            row[f"Gamma_{task.name}"] = ev.gamma_bar
            row[f"e_{task.name}"] = ev.error.e
            row[f"eps_{task.name}"] = ev.error.epsilon
            for m in range(len(task.conjuncts)):
                row[f"rhoc_{task.name}_{m}"] = ev.conjunct_rhos[m]
                row[f"rhotruec_{task.name}_{m}"] = values_true[m]
                row[f"gammac_{task.name}_{m}"] = task.funnels[m].gamma.value(t)
                row[f"rhotc_{task.name}_{m}"] = float(task.funnels[m].rho_t.value(t))
        traj.set_row(r, row)

    def check_invariants(t, terms, evals):
        for b, bank in enumerate(banks):
            xi = terms[b][0]
            rho = bank.rho(t)[:, None]
            ratio = np.abs(xi) / rho
            worst = float(ratio.max(initial=0.0))
            if worst >= 1.0:
                events.observer_exits += 1
                j, c = np.unravel_index(int(np.argmax(ratio)), ratio.shape)
                events.record(
                    t, "observer-funnel-exit",
                    f"target {bank.target} estimator {bank.estimators[j]}",
                    f"|xi|={abs(xi[j, c]):.5g} >= rho={rho[j, 0]:.5g} (component {c})",
                )
            elif terms[b][2] > 0:
                events.saturations += terms[b][2]
                events.record(t, "saturation", f"target {bank.target}",
                              f"{terms[b][2]} normalized components clamped")
        for task, ev in zip(tasks, evals):
            if ev.error.clamped:
                events.task_exits += 1
                events.record(
                    t, "task-funnel-exit", task.name,
                    f"rho_hat={ev.rho_smooth:.5g} rho_max={task.rho_max:.5g} "
                    f"Gamma={ev.gamma_bar:.5g}",
                )

    t = 0.0
    zero_w = np.zeros((runtime.n_agents, runtime.dim_max))
    for step in range(n_steps + 1):
        w = (
            sample_disturbance(rng, sim.w_max, (runtime.n_agents, runtime.dim_max))
            if step < n_steps else zero_w
        )
        for idx, a in enumerate(agents):
            w[idx, a.dim:] = 0.0
        d1, dest1, terms, evals, u = derivatives(states, est_list, t, w)
        if step % log_every == 0:
            log_step(step // log_every, t, terms, evals, u, w)
        check_invariants(t, terms, evals)
        for idx, a in enumerate(agents):
            max_u[a.id] = max(max_u[a.id], float(np.linalg.norm(u[idx, : a.dynamics.input_dim])))
            excursion[a.id] = max(excursion[a.id], float(np.linalg.norm(states[idx, : a.dim])))
        if step == n_steps:
            break

        half = 0.5 * dt
        s2 = states + half * d1
        e2 = [e + half * d for e, d in zip(est_list, dest1)]
        d2, dest2, _, _, _ = derivatives(s2, e2, t + half, w)
        s3 = states + half * d2
        e3 = [e + half * d for e, d in zip(est_list, dest2)]
        d3, dest3, _, _, _ = derivatives(s3, e3, t + half, w)
        s4 = states + dt * d3
        e4 = [e + dt * d for e, d in zip(est_list, dest3)]
        d4, dest4, _, _, _ = derivatives(s4, e4, t + dt, w)

        states = states + (dt / 6.0) * (d1 + 2.0 * d2 + 2.0 * d3 + d4)
        est_list = [
            e + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            for e, k1, k2, k3, k4 in zip(est_list, dest1, dest2, dest3, dest4)
        ]
        t = round((step + 1) * dt, 12)

    if executor:
        executor.shutdown()
    events.locality_breaches = counters.breaches
    return SimResult(
        trajectory=traj, events=events, runtime=runtime,
        max_input_norm=max_u, state_excursion=excursion,
    )


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

def true_robustness_series(traj: Trajectory, runtime: Runtime, task) -> np.ndarray:
    """Exact-min robustness of a task on the logged true states."""
    return traj.column(f"rhotrue_{task.name}")


def satisfaction_report(result: SimResult) -> dict:
    """Per-task margins, funnel slacks, observer ratios and event counts."""
    traj = result.trajectory
    runtime = result.runtime
    events = result.events
    times = traj.times
    report_tasks = []
    all_pass = True
    for task in runtime.tasks:
        rho_true = true_robustness_series(traj, runtime, task)
        margin = monitor_series(task.temporal, times, rho_true)
        rho_hat = traj.column(f"rhohat_{task.name}")
        gamma_bar = traj.column(f"Gamma_{task.name}")
        slack = np.minimum(
            rho_hat - (task.rho_max - gamma_bar), task.rho_max - rho_hat
        )
        ratios = []
        for p in sorted(task.estimated_ids):
            bank = runtime.banks[runtime.bank_of[p]]
            err = np.stack([
                traj.column(f"xerr{p}_{task.owner}_{c}") for c in range(bank.dim)
            ])
            delta = traj.column(f"delta{p}_{task.owner}")
            ratios.append(float((np.abs(err) / delta).max()))
        satisfied = margin > 0.0
        all_pass &= satisfied
        report_tasks.append({
            "task": task.name,
            "agent": task.owner,
            "operator": task.temporal.op,
            "window": [task.window.lo, task.window.hi],
            "monitor_margin": margin,
            "satisfied": bool(satisfied),
            "min_funnel_slack": float(slack.min()),
            "max_error_to_bound_ratio": max(ratios) if ratios else None,
        })
    overall = all_pass and events.breach_count == 0 and events.saturations == 0
    return {
        "tasks": report_tasks,
        "n_tasks": len(report_tasks),
        "n_satisfied": sum(1 for t in report_tasks if t["satisfied"]),
        "events": events.to_dict()["counts"],
        "max_input_norm": {str(k): v for k, v in result.max_input_norm.items()},
        "max_state_norm": {str(k): v for k, v in result.state_excursion.items()},
        "pass": bool(overall),
    }


def graphs_report(runtime: Runtime) -> dict:
    """Decomposition, k-hop sets and spectral margins as a JSON-able dict."""
    dec = runtime.decomposition
    report = {
        "n_agents": runtime.n_agents,
        "clusters": [sorted(c) for c in dec.clusters],
        "cluster_edges": sorted(list(e) for e in dec.cluster_edges),
        "topo_order": list(dec.topo_order),
        "leaf_clusters": list(dec.leaf_labels()),
        "min_required_k": runtime.required_k,
        "k": runtime.k,
        "k_hop_sets": {
            str(b.target): list(b.estimators) for b in runtime.banks
        },
        "lambda_min": {str(t): lam for t, lam in sorted(runtime.lambda_min.items())},
        "assumptions": runtime.assumptions.to_dict(),
    }
    return report


def feasibility_inputs(runtime: Runtime):
    """Assemble per-task feasibility entries (requires designed funnels)."""
    witness = runtime.scenario.witness_states
    entries = []
    for task in runtime.tasks:
        witness_rhos = None
        if witness:
            missing = [p for p in task.body.participants if p not in witness]
            if not missing:
                wstates = {p: np.asarray(witness[p], float) for p in task.body.participants}
                witness_rhos = [
                    lit.value_and_grad(wstates)[0] for lit in task.conjuncts
                ]
        entries.append(TaskFeasibilityInput(
            name=task.name, funnels=list(task.funnels), witness_rhos=witness_rhos,
        ))
    return entries


def feasibility_check(scenario: Scenario) -> dict:
    """Design funnels exactly as a run would, then evaluate conditions.

    Uses the scenario seed, so the report matches what `simulate` will do.
    """
    runtime = Runtime(scenario)
    rng = np.random.default_rng(scenario.sim.seed)
    initialize_run(runtime, rng)
    report = feasibility_report(feasibility_inputs(runtime))
    doc = report.to_dict()
    witness = {
        p: np.asarray(v, float) for p, v in runtime.scenario.witness_states.items()
    }
    checks = []
    for task in runtime.tasks:
        covered = witness and all(p in witness for p in task.body.participants)
        checks.append(validate_rho_max(task, witness if covered else None))
    doc["rho_max_checks"] = checks
    return doc
