"""Decentralized k-hop prescribed-performance state observer.

One :class:`ObserverBank` exists per target agent with a nonempty k-hop
neighborhood. Row j of the bank is the estimate of the target's state held
by the j-th k-hop neighbor (the "estimator"). Each round, every estimator
forms a disagreement

    xi_j = sum_{l in C_j} (xhat_j - xhat_l) + h_j * (xhat_j - x_target),

where C_j is the set of fellow estimators the estimator can talk to
directly and h_j counts the direct neighbors it shares with the target
(those relay the target's true state). Stacked over rows this is exactly
xi = M (xhat - x_target) with M = L + H from the induced subgraph.

The disagreement is normalized by its funnel, e = xi / rho(t), pushed
through the barrier transform T(e) = ln((1+e)/(1-e)), and each estimate
descends the transformed error:

    d/dt xhat_j = -(1/rho_j(t)) * T'(e_j) * T(e_j).

Keeping |xi_j| < rho_j(t) then keeps the true estimation error under the
designed bound delta_j(t) through |xhat_j - x| <= sum_r |M^-1|_jr |xi_r|.

Locality is enforced through :class:`BankView`: all reads go through
accessors scoped to the Assumption-level exchange pattern (fellow
estimators one hop away, plus the relayed target state where a shared
neighbor exists); anything else raises :class:`LocalityError`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import AssumptionViolationError, LocalityError
from .funnels import ObserverFunnelSet
from .graphs import CommGraph, InducedMatrices, KHopNeighborhood, min_eigenvalue_check

E_GUARD = 1e-9  # normalized disagreement is kept inside +-(1 - E_GUARD)


def transform(e):
    """Barrier transform T(e) = ln((1+e)/(1-e)) and its derivative.

    Vectorized; inputs must already lie strictly inside (-1, 1).
    T is odd and strictly increasing, T(0) = 0, and J = 2/(1-e^2) >= 2.
    """
    e = np.asarray(e, dtype=float)
    T = np.log((1.0 + e) / (1.0 - e))
    J = 2.0 / (1.0 - e * e)
    return T, J


def clamp_normalized(e):
    """Clamp e into the guarded interval; returns (clamped, n_clamped).

    The transform is singular at +-1; theory keeps e interior, so any
    clamp indicates the discretization is too coarse and is surfaced as a
    saturation event by the caller.
    """
    e = np.asarray(e, dtype=float)
    limit = 1.0 - E_GUARD
    clipped = np.clip(e, -limit, limit)
    return clipped, int(np.count_nonzero(np.abs(e) > limit))


class ObserverBank:
    """Estimates of one target's state held by its k-hop neighbors."""

    def __init__(self, comm: CommGraph, nbh: KHopNeighborhood,
                 mats: InducedMatrices, funnels: ObserverFunnelSet, dim: int):
        if nbh.members != mats.members:
            raise AssumptionViolationError("neighborhood and matrices disagree on members")
        self.target = nbh.owner
        self.estimators = nbh.members
        self.dim = dim
        self.mats = mats
        self.funnels = funnels
        min_eigenvalue_check(mats)
        self.minv_abs = np.abs(np.linalg.inv(mats.M))
        self.h = np.diag(mats.H).copy()
        members = set(self.estimators)
        # Row scopes: fellow estimators in direct communication.
        self.peer_ids = tuple(
            tuple(sorted(set(comm.neighbors(est)) & members)) for est in self.estimators
        )
        self.peer_idx = tuple(
            np.array([nbh.index_of(p) for p in peers], dtype=int)
            for peers in self.peer_ids
        )
        self.estimates = np.zeros((nbh.size, dim))

    @property
    def size(self) -> int:
        return len(self.estimators)

    def rho(self, t) -> np.ndarray:
        return self.funnels.rho_values(t)

    def delta(self, t) -> np.ndarray:
        return self.funnels.delta_values(t)

    def reconstruct_error_bound(self, t) -> np.ndarray:
        """Certified per-row bound on |xhat - x|: sum_r |M^-1|_jr rho_r(t)."""
        return self.minv_abs @ self.rho(t)

    def initialize(self, x_target: np.ndarray, rng: np.random.Generator,
                   fill: float = 0.45):
        """Seeded rejection sampling of estimates around the true state.

        Offsets are drawn uniformly at a scale that keeps |xi(0)| inside
        fill * rho(0); draws violating the bound are rejected and retried
        at 80% scale.
        """
        rho0 = self.rho(0.0)
        row_norm = np.abs(self.mats.M).sum(axis=1)
        scale = fill * float(np.min(rho0 / row_norm))
        for _ in range(64):
            offsets = rng.uniform(-scale, scale, size=(self.size, self.dim))
            xi0 = self.mats.M @ offsets
            if np.all(np.abs(xi0) < rho0[:, None]):
                self.estimates = x_target[None, :] + offsets
                return
            scale *= 0.8
        raise AssumptionViolationError(
            f"could not initialize estimates of target {self.target} inside the funnel"
        )


@dataclass
class ReadCounters:
    """Per-round tallies of scoped reads (instrumentation hook)."""

    estimate_reads: int = 0
    truth_reads: int = 0
    breaches: int = 0


class BankView:
    """Locality-scoped snapshot access for one bank's synchronous round.

    Wraps frozen copies of the round data; row-level accessors check the
    exchange scope and raise LocalityError on anything outside it.
    """

    def __init__(self, bank: ObserverBank, estimates: np.ndarray,
                 x_target: np.ndarray, counters: ReadCounters | None = None):
        self.bank = bank
        self._estimates = estimates
        self._x_target = x_target
        self.counters = counters if counters is not None else ReadCounters()

    def own_estimate(self, row: int) -> np.ndarray:
        self.counters.estimate_reads += 1
        return self._estimates[row]

    def peer_estimates(self, row: int) -> np.ndarray:
        """Estimates of the fellow estimators row can hear directly."""
        idx = self.bank.peer_idx[row]
        self.counters.estimate_reads += len(idx)
        return self._estimates[idx]

    def estimate_of(self, row: int, holder) -> np.ndarray:
        """Single peer lookup; holder must be in row's exchange scope."""
        if holder not in self.bank.peer_ids[row]:
            self.counters.breaches += 1
            raise LocalityError(
                f"estimator {self.bank.estimators[row]} of target {self.bank.target} "
                f"cannot read the estimate held by agent {holder}"
            )
        self.counters.estimate_reads += 1
        return self._estimates[self.bank.estimators.index(holder)]

    def shared_truth(self, row: int) -> np.ndarray:
        """Target's true state, available only via shared direct neighbors."""
        if self.bank.h[row] <= 0:
            self.counters.breaches += 1
            raise LocalityError(
                f"estimator {self.bank.estimators[row]} shares no neighbor with "
                f"target {self.bank.target}; its true state is out of scope"
            )
        self.counters.truth_reads += 1
        return self._x_target

    def round_data(self):
        """Bulk accessor for the vectorized disagreement.

        Returns the full estimate block and the target state; counters
        reflect the structural per-row scope (peers + own per row, truth
        only where a shared neighbor exists).
        """
        self.counters.estimate_reads += self.bank.size + sum(
            len(p) for p in self.bank.peer_idx
        )
        self.counters.truth_reads += int(np.count_nonzero(self.bank.h > 0))
        return self._estimates, self._x_target


def disagreement_rows(bank: ObserverBank, view: BankView) -> np.ndarray:
    """Per-row disagreement xi from row-level locality-scoped reads.

    Row j combines mismatches against its reachable fellow estimators and,
    where shared neighbors exist, against the relayed true state. The
    stacked result equals M @ (xhat - x_target) (checked in tests; the
    error itself is never locally available).
    """
    xi = np.empty((bank.size, bank.dim))
    for row in range(bank.size):
        own = view.own_estimate(row)
        peers = view.peer_estimates(row)
        acc = len(peers) * own - peers.sum(axis=0) if len(peers) else np.zeros(bank.dim)
        if bank.h[row] > 0:
            acc = acc + bank.h[row] * (own - view.shared_truth(row))
        xi[row] = acc
    return xi


def disagreement(bank: ObserverBank, view: BankView) -> np.ndarray:
    """Vectorized disagreement, identical reads to :func:`disagreement_rows`.

    Uses xi = L xhat + h * (xhat - x_target); the gather pattern of L and
    h is exactly the per-row exchange scope, so the bulk accessor can
    account for the same reads without the Python-level row loop.
    """
    xhat, x_target = view.round_data()
    return bank.mats.L @ xhat + bank.h[:, None] * (xhat - x_target)


def observer_derivative(bank: ObserverBank, xi: np.ndarray, t: float):
    """Estimate dynamics -(1/rho) J(e) T(e), plus the clamp count.

    xi is (size, dim); rho is evaluated per row and shared across state
    components (the multi-dimensional case runs componentwise).
    """
    rho = bank.rho(t)[:, None]
    e, clamped = clamp_normalized(xi / rho)
    T, J = transform(e)
    return -(J * T) / rho, clamped
