"""Backward value functions and the constant-speed traversal policy.

Given a mass field, each (edge, path) pair gets a value table over the grid
and a policy: the optimal head-arrival node tau (or "stay put") and the
constant traversal speed length / (tau - t).  Edges of a path are processed
in reverse, so a pair's table only depends on its successor's table.

Candidate arrival times are restricted to grid nodes strictly after the
entry node; the continuous minimization is approximated to first order in
the grid step, consistent with the Euler mass integration.

Float expressions here are deliberately fixed:  a moving candidate costs
``(l*l)/(2*(t[j]-t[i])) + (Phi[j]-Phi[i])`` plus the continuation, grouped
exactly in that order.  The exhaustive enumeration in :mod:`mfroute.oracle`
evaluates the same expressions, which is what makes the oracle comparison
exact rather than tolerance-based.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import OutOfRange, ShapeMismatch
from .network import Network, PathSet
from .scenario import Scenario, TimeGrid, prefix_integral


@dataclass(frozen=True)
class MassField:
    """Per-(edge, path) mass trajectories, one row per pair, path-major."""

    values: np.ndarray

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True)
class ValueTable:
    """Minimal remaining cost per (edge, path) pair and grid node."""

    values: np.ndarray


@dataclass(frozen=True)
class Policy:
    """Optimal constant-speed controls extracted from the value tables.

    ``tau_idx`` holds the arrival grid index, with -1 meaning the agent stays
    at the edge tail for the rest of the horizon; ``tau_time`` mirrors it with
    +inf for staying, and ``speed`` is length / (tau - t), 0 when staying.
    """

    tau_idx: np.ndarray = field(repr=False)
    tau_time: np.ndarray = field(repr=False)
    speed: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class EdgeCongestion:
    """Total mass per edge plus the congestion-cost prefix integrals."""

    totals: np.ndarray      # (n_edges, nodes)
    phi_values: np.ndarray  # phi_e(totals)
    phi_prefix: np.ndarray  # cumulative integral of phi_values


def congestion_total(net: Network, ps: PathSet, scen: Scenario,
                     mass: MassField) -> EdgeCongestion:
    """Sum pair masses into per-edge totals and integrate the congestion cost."""
    n_nodes = scen.grid.steps + 1
    if mass.values.shape != (ps.pair_count, n_nodes):
        raise ShapeMismatch(
            f"mass field must have shape {(ps.pair_count, n_nodes)}, "
            f"got {mass.values.shape}")
    totals = np.zeros((len(net.edges), n_nodes))
    np.add.at(totals, ps.pair_edge_idx, mass.values)
    phi_values = np.empty_like(totals)
    for e, cost in enumerate(scen.phi):
        phi_values[e] = cost(totals[e])
    phi_prefix = prefix_integral(phi_values, scen.grid)
    return EdgeCongestion(totals=totals, phi_values=phi_values, phi_prefix=phi_prefix)


def value_backward(net: Network, ps: PathSet, scen: Scenario, mass: MassField,
                   *, congestion: EdgeCongestion | None = None,
                   arrival_floor: np.ndarray | None = None
                   ) -> tuple[ValueTable, Policy]:
    """Compute value tables and the arrival-time policy for a given mass field.

    ``arrival_floor``, when given, is an integer (n_edges, nodes) table of the
    earliest admissible arrival index per edge and entry node (values past the
    last node mark the moving branch as infeasible).  Without it every node
    strictly after the entry is admissible.

    For the last edge of a path the only moving candidate is arriving at the
    final node; staying costs alpha * length plus the remaining congestion
    integral.  For interior edges the stay penalty is alpha times the shortest
    remaining distance from the edge tail, and a candidate arriving at the
    final node pays the cheaper of that penalty and the successor's final
    value.  Within ``eps_tie`` of the best moving cost the latest arrival
    wins, and an exact tie between staying and moving resolves to moving.
    """
    grid = scen.grid
    n = grid.steps
    t = grid.nodes
    cong = congestion if congestion is not None else congestion_total(net, ps, scen, mass)
    eps_tie = scen.solver.eps_tie
    alpha = scen.alpha

    n_pairs = ps.pair_count
    values = np.empty((n_pairs, n + 1))
    tau_idx = np.full((n_pairs, n + 1), -1, dtype=np.int64)
    node_ids = np.arange(n + 1)

    for rows in ps.path_rows:
        for pos in range(len(rows) - 1, -1, -1):
            r = int(rows[pos])
            e = int(ps.pair_edge_idx[r])
            length = float(net.lengths[e])
            phi = cong.phi_prefix[e]
            tail_cost = alpha * (length if pos == len(rows) - 1 else float(net.dist_tail[e]))
            stay = tail_cost + (phi[n] - phi)

            floor_e = arrival_floor[e] if arrival_floor is not None else None
            if pos == len(rows) - 1:
                # Only candidate: arrive exactly at the final node.
                with np.errstate(divide="ignore"):
                    move = (length * length) / (2.0 * (t[n] - t)) + (phi[n] - phi)
                feasible = node_ids < n
                if floor_e is not None:
                    feasible = feasible & (floor_e <= n)
                move = np.where(feasible, move, np.inf)
                move_wins = move <= stay
                values[r] = np.minimum(stay, move)
                tau_idx[r] = np.where(move_wins, n, -1)
                continue

            v_succ = values[int(rows[pos + 1])]
            cont = v_succ.copy()
            cont[n] = min(tail_cost, v_succ[n])
            with np.errstate(divide="ignore", invalid="ignore"):
                kin = (length * length) / (2.0 * (t[None, :] - t[:, None]))
            move = (kin + (phi[None, :] - phi[:, None])) + cont[None, :]
            min_arrival_idx = node_ids + 1 if floor_e is None \
                else np.maximum(node_ids + 1, floor_e)
            valid = node_ids[None, :] >= min_arrival_idx[:, None]
            move = np.where(valid, move, np.inf)
            best = move.min(axis=1)
            values[r] = np.minimum(stay, best)
            move_wins = best <= stay
            threshold = best + eps_tie * np.maximum(1.0, np.abs(best))
            within = move <= threshold[:, None]
            latest = n - np.argmax(within[:, ::-1], axis=1)
            tau_idx[r] = np.where(move_wins, latest, -1)

    tau_time = np.where(tau_idx >= 0, t[np.maximum(tau_idx, 0)], np.inf)
    pair_lengths = net.lengths[ps.pair_edge_idx]
    speed = np.where(tau_idx >= 0,
                     pair_lengths[:, None] / (tau_time - t[None, :]), 0.0)
    return ValueTable(values=values), Policy(tau_idx=tau_idx, tau_time=tau_time,
                                             speed=speed)


def value_at(table: ValueTable, ps: PathSet, grid: TimeGrid, edge_id: str,
             path_idx: int, time: float) -> float:
    """Linearly interpolated value at an off-grid time."""
    if not (0.0 <= time <= grid.horizon):
        raise OutOfRange(f"time {time} outside [0, {grid.horizon}]")
    row = table.values[ps.row(edge_id, path_idx)]
    return float(np.interp(time, grid.nodes, row))
