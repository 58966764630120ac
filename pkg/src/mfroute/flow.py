"""Origin split fractions, delayed flows, mass conservation, and the psi map.

Flows are the agents' own delayed estimates: the outflow of an edge at time
t replays the origin injection (or the predecessor's outflow) from one
assumed traverse time earlier, gated by whether the policy actually moves.
Mass is integrated by explicit Euler with negative undershoot clipped at
zero and recorded, never silently discarded.

The integrator keeps the discrete balance auditable: per-step injections are
normalized so that their running sum telescopes to dt * throughput exactly,
and the moved-mass terms are computed once per pair so that every unit that
leaves a row is bit-identical to the unit entering its successor row.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateSimplex, MassBoundExceeded, ShapeMismatch
from .network import Network, PathSet
from .scenario import Scenario
from .value import (EdgeCongestion, MassField, Policy, ValueTable,
                    congestion_total, value_backward)
from .preference import (PathCostTable, PreferenceTrajectory, build_preferences)


@dataclass(frozen=True)
class FlowField:
    """Outgoing flow per (edge, path) pair, zero before the traverse delay."""

    values: np.ndarray


@dataclass(frozen=True)
class IntegrationResult:
    """Euler-integrated mass plus the exact per-step increment terms.

    ``injections[p, i]`` is the mass entering path p's first edge during step
    i and ``moved[r, i]`` the mass leaving pair r; the pre-clip update is
    rho[r, i+1] = rho[r, i] + (plus[r, i] - moved[r, i]) with plus the row's
    injection or its predecessor's moved term.  Injections are computed so
    that their per-step sum (ascending path order) equals dt * throughput
    exactly, which is what makes the conservation audit exact.
    """

    mass: MassField
    injections: np.ndarray = field(repr=False)  # (n_paths, steps)
    moved: np.ndarray = field(repr=False)       # (pairs, steps)
    clip_total: float = 0.0
    clip_max: float = 0.0
    clip_count: int = 0


@dataclass(frozen=True)
class PsiResult:
    """One full evaluation of the mass-to-mass map with all stage outputs."""

    mass: MassField
    congestion: EdgeCongestion
    value: ValueTable
    policy: Policy
    costs: PathCostTable
    preference: PreferenceTrajectory
    local: np.ndarray = field(repr=False)
    flows: FlowField = None
    integration: IntegrationResult = None
    k_idx_edges: np.ndarray = field(repr=False, default=None)
    arrival: object = None  # ArrivalConstraint in constrained mode


def local_decision(ps: PathSet, z: np.ndarray) -> np.ndarray:
    """Fraction of entering agents assigned to each origin-outgoing pair.

    Nonzero only on the first pair of each path, where it is that path's
    share of the current preference total.
    """
    z = np.asarray(z, dtype=float)
    totals = z.sum(axis=0)
    if np.any(totals <= 0.0):
        raise DegenerateSimplex("preference vector sums to a nonpositive value")
    g = np.zeros((ps.pair_count,) + totals.shape)
    first_rows = np.flatnonzero(ps.first_mask)
    g[first_rows] = z[ps.pair_path_idx[first_rows]] / totals
    return g


def compute_flows(net: Network, ps: PathSet, policy: Policy, z: np.ndarray,
                  lam: np.ndarray, k_idx_edges: np.ndarray) -> FlowField:
    """Delayed outgoing flows, evaluated in path order.

    A first edge replays the origin inflow from ``k`` steps earlier; any
    other edge replays its predecessor's outflow.  Both are gated by the
    sign of the control chosen at the replayed entry time, so stopped
    traffic emits no flow.
    """
    n_nodes = lam.shape[0]
    g = local_decision(ps, z)
    moving = policy.tau_idx >= 0
    f = np.zeros((ps.pair_count, n_nodes))
    for rows in ps.path_rows:
        for pos, r in enumerate(rows):
            r = int(r)
            ke = int(k_idx_edges[ps.pair_edge_idx[r]])
            m = n_nodes - ke
            gate = moving[r, :m].astype(float)
            if pos == 0:
                f[r, ke:] = (lam[:m] * g[r, :m]) * gate
            else:
                f[r, ke:] = f[r - 1, :m] * gate
    return FlowField(values=f)


def mass_rhs(ps: PathSet, flows: FlowField, z: np.ndarray,
             lam: np.ndarray) -> np.ndarray:
    """Conservation right-hand side: origin inflow plus upstream outflow minus own outflow."""
    f = flows.values
    g = local_decision(ps, z)
    f_prec = np.zeros_like(f)
    nonfirst = np.flatnonzero(~ps.first_mask)
    f_prec[nonfirst] = f[nonfirst - 1]  # predecessor pair is the previous row
    return (lam[None, :] * g + f_prec) - f


def injection_terms(z_cols: np.ndarray, lam_cols: np.ndarray, dt: float) -> np.ndarray:
    """Per-path injected mass for each step, summing exactly to dt * throughput.

    The last path's share is computed as the residual of the step budget so
    the ascending-path running sum reproduces dt * lam bitwise; each share
    still equals budget * z_p / sum(z) up to one rounding.
    """
    budget = dt * lam_cols
    # Left-associated accumulation in ascending path order; the conservation
    # audit recomputes these shares with the same order and expects bit
    # equality, and numpy's pairwise axis sum would differ for many paths.
    totals = np.array(z_cols[0], dtype=float)
    for p in range(1, z_cols.shape[0]):
        totals = totals + z_cols[p]
    if np.any(totals <= 0.0):
        raise DegenerateSimplex("preference vector sums to a nonpositive value")
    shares = z_cols / totals
    n_paths = z_cols.shape[0]
    inj = np.empty_like(shares)
    if n_paths == 1:
        inj[0] = budget
        return inj
    partial = np.zeros_like(budget)
    for p in range(n_paths - 1):
        inj[p] = budget * shares[p]
        partial = partial + inj[p]
    last = budget - partial
    # one subtraction is not always enough: when the last share exceeds half
    # the budget the rounded difference can re-add one ulp off, so correct
    # until partial + last reproduces the budget exactly
    for _ in range(4):
        total = partial + last
        if np.all(total == budget):
            break
        last = last + (budget - total)
    inj[n_paths - 1] = last
    return inj


def integrate_mass(ps: PathSet, scen: Scenario, flows: FlowField, z: np.ndarray,
                   lam: np.ndarray, rho0: np.ndarray) -> IntegrationResult:
    """Explicit Euler integration of the conservation law.

    Negative undershoot (possible at Euler order with delayed flows) is
    clipped at zero and its magnitude reported.  Raises
    :class:`MassBoundExceeded` if any total edge mass exceeds the configured
    maximum, which a validated scenario should make impossible.
    """
    grid = scen.grid
    n = grid.steps
    f = flows.values
    if f.shape != (ps.pair_count, n + 1) or z.shape[1] != n + 1:
        raise ShapeMismatch("flow/preference arrays do not match the grid")
    inj = injection_terms(z[:, :n], lam[:n], grid.dt)
    mov = grid.dt * f[:, :n]
    plus = np.empty_like(mov)
    first_rows = np.flatnonzero(ps.first_mask)
    nonfirst = np.flatnonzero(~ps.first_mask)
    plus[first_rows] = inj[ps.pair_path_idx[first_rows]]
    plus[nonfirst] = mov[nonfirst - 1]
    delta = plus - mov

    clip_total = 0.0
    clip_max = 0.0
    clip_count = 0
    if not np.any(rho0):
        # cumsum accumulates left to right, matching the stepwise loop below
        cum = np.cumsum(delta, axis=1)
        if np.all(cum >= 0.0):
            mass = np.empty((ps.pair_count, n + 1))
            mass[:, 0] = 0.0
            mass[:, 1:] = cum
            _check_mass_bound(ps, scen, mass)
            return IntegrationResult(mass=MassField(values=mass), injections=inj,
                                     moved=mov)
    mass = np.empty((ps.pair_count, n + 1))
    mass[:, 0] = rho0
    state = np.array(rho0, dtype=float)
    for i in range(n):
        pre = state + delta[:, i]
        state = np.maximum(pre, 0.0)
        clipped = state - pre
        if np.any(clipped > 0.0):
            clip_total += float(clipped.sum())
            clip_max = max(clip_max, float(clipped.max()))
            clip_count += int(np.count_nonzero(clipped))
        mass[:, i + 1] = state
    _check_mass_bound(ps, scen, mass)
    return IntegrationResult(mass=MassField(values=mass), injections=inj, moved=mov,
                             clip_total=clip_total, clip_max=clip_max,
                             clip_count=clip_count)


def _check_mass_bound(ps: PathSet, scen: Scenario, mass: np.ndarray) -> None:
    n_edges = int(ps.pair_edge_idx.max()) + 1
    totals = np.zeros((n_edges, mass.shape[1]))
    np.add.at(totals, ps.pair_edge_idx, mass)
    worst = float(totals.max())
    if worst > scen.rho_max:
        raise MassBoundExceeded(
            f"total edge mass {worst:g} exceeds rho_max {scen.rho_max:g}")


def apply_psi(net: Network, ps: PathSet, scen: Scenario, mass: MassField) -> PsiResult:
    """Full pipeline: mass -> values/policy -> costs -> preferences -> flows -> mass."""
    cong = congestion_total(net, ps, scen, mass)
    arrival = None
    if scen.constrained.enabled:
        from .constrained import arrival_tables, build_speed_limits

        limits = build_speed_limits(net, scen)
        arrival = arrival_tables(net, scen, cong, limits)
        table, policy = value_backward(net, ps, scen, mass, congestion=cong,
                                       arrival_floor=arrival.floor_idx)
        k_idx_edges = arrival.k_idx
    else:
        table, policy = value_backward(net, ps, scen, mass, congestion=cong)
        k_idx_edges = np.full(len(net.edges), scen.k_idx, dtype=np.int64)
    costs, pref = build_preferences(net, ps, scen, cong, policy)
    g = local_decision(ps, pref.z)
    flows = compute_flows(net, ps, policy, pref.z, scen.lam, k_idx_edges)
    integ = integrate_mass(ps, scen, flows, pref.z, scen.lam, scen.rho0)
    return PsiResult(mass=integ.mass, congestion=cong, value=table, policy=policy,
                     costs=costs, preference=pref, local=g, flows=flows,
                     integration=integ, k_idx_edges=k_idx_edges, arrival=arrival)
