"""Distribution/energy distance metrics, the line potential, and
convergence detection.

Distribution distance sums, over the violating parent-child edges, the
amount 2*E_child - E_parent that would have to move for the parent to hold
at least twice the child's energy; it is 0 exactly on the states where the
doubling condition holds on every edge.

Energy distance is half the L1 gap between an energy vector and the ideal
doubling shares: the total misplaced energy.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .core import EnergyState, TreeNetwork
from .energy import (
    DepthTarget,
    EnergyProtocol,
    IdealEnergyTable,
    IdealTarget,
    KappaTransfer,
    LambdaExchange,
    RandExchange,
)
from .errors import DomainError


def distribution_distance(network: TreeNetwork, energy: EnergyState) -> float:
    """Total energy that must be redistributed to reach a relaxed state;
    valid on partial networks (sums over existing edges only)."""
    e = energy.per_node
    total = 0.0
    for p in range(network.n):
        ep = e[p]
        for c in network.children[p]:
            gap = 2.0 * e[c] - ep
            if gap > 0.0:
                total += gap
    return total


def incident_distance(network: TreeNetwork, energy: EnergyState, u: int, v: int) -> float:
    """Distribution-distance contribution of the edges touching u or v
    (each edge counted once). Used for incremental maintenance."""
    e = energy.per_node
    total = 0.0
    parent = network.parent
    pu = parent[u]
    if pu != -1:
        gap = 2.0 * e[u] - e[pu]
        if gap > 0.0:
            total += gap
    pv = parent[v]
    if pv != -1 and pv != u:  # the (u, v) edge is covered by u's child loop
        gap = 2.0 * e[v] - e[pv]
        if gap > 0.0:
            total += gap
    eu = e[u]
    for c in network.children[u]:
        gap = 2.0 * e[c] - eu
        if gap > 0.0:
            total += gap
    ev = e[v]
    for c in network.children[v]:
        if c == u:
            continue  # already counted from u's parent side
        gap = 2.0 * e[c] - ev
        if gap > 0.0:
            total += gap
    return total


def energy_distance(energies: Sequence[float], ideal: IdealEnergyTable) -> float:
    """Half the L1 distance between an energy vector and the ideal shares."""
    if len(energies) != len(ideal.values):
        raise DomainError("energy vector and ideal table cover different nodes")
    return 0.5 * math.fsum(abs(e - g) for e, g in zip(energies, ideal.values))


def _line_order(network: TreeNetwork) -> list[int]:
    if network.n == 1:
        return [0]
    roots = network.roots()
    if (
        network.edge_count != network.n - 1
        or len(roots) != 1
        or any(len(cs) > 1 for cs in network.children)
    ):
        raise DomainError("potential is defined on completed line networks only")
    order = [roots[0]]
    while network.children[order[-1]]:
        order.append(network.children[order[-1]][0])
    return order


def line_potential(network: TreeNetwork, energy: EnergyState, lam: float) -> float:
    """Potential of a line under the ratio-lam exchange: the sum of
    lam*E_next - E_cur over consecutive pairs that still violate the ratio.
    Non-increasing under lossless exchanges; 0 implies a relaxed state for
    lam >= 2."""
    order = _line_order(network)
    e = energy.per_node
    total = 0.0
    for a, b in zip(order, order[1:]):
        if e[a] < lam * e[b]:
            total += lam * e[b] - e[a]
    return total


def energy_loss_fraction(energy: EnergyState, initial_total: Optional[float] = None) -> float:
    total = energy.initial_total if initial_total is None else initial_total
    if total <= 0:
        raise DomainError("loss fraction needs a positive reference total")
    return energy.lost / total


@dataclass(frozen=True)
class MetricSample:
    step: int
    dd: float
    total_energy: float
    lost: float


METRICS_HEADER = ["step", "dd", "total_energy", "lost"]


def write_metrics_csv(samples: Iterable[MetricSample], path: "str | Path") -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_HEADER)
        for s in samples:
            writer.writerow([s.step, repr(s.dd), repr(s.total_energy), repr(s.lost)])


@dataclass
class ConvergenceReport:
    tau: int
    dd_at_tau: float
    lost_at_tau: float
    converged: bool
    ed: float = math.nan


DD_ZERO = "dd_zero"
QUIESCENCE = "quiescence"


def convergence_kind(protocol: EnergyProtocol) -> str:
    """Exchange/transfer protocols converge when the distribution distance
    first hits zero; targeted protocols when no interaction moves energy for
    a full quiescence window."""
    if isinstance(protocol, (LambdaExchange, RandExchange, KappaTransfer)):
        return DD_ZERO
    if isinstance(protocol, (IdealTarget, DepthTarget)):
        return QUIESCENCE
    raise DomainError(f"unknown protocol {protocol!r}")


class ConvergenceDetector:
    """Online convergence detection over the per-step stream.

    dd_zero: converged at the first step whose distribution distance is at
    most ``dd_tol`` (an absolute tolerance, normally 1e-9 * total).
    quiescence: converged once ``window`` consecutive steps moved no
    detectable energy; tau is the step of the last detectable move (0 if
    none ever happened). A move counts as detectable when its magnitude
    exceeds ``move_tol``, which defaults to ``dd_tol`` so both detectors
    resolve energy at the same absolute scale.
    """

    def __init__(
        self,
        kind: str,
        window: int,
        dd_tol: float,
        horizon: int,
        move_tol: Optional[float] = None,
    ):
        if kind not in (DD_ZERO, QUIESCENCE):
            raise DomainError(f"unknown convergence kind {kind!r}")
        if window < 1:
            raise DomainError("quiescence window must be >= 1")
        self.kind = kind
        self.window = window
        self.dd_tol = dd_tol
        self.move_tol = dd_tol if move_tol is None else move_tol
        self.horizon = horizon
        self.decided = False
        self.tau = 0
        self.converged = False
        self.last_move = 0
        self.last_dd = math.inf
        self.last_lost = 0.0
        self._tau_dd = math.nan
        self._tau_lost = 0.0

    def observe(self, step: int, dd: float, moved: float, lost: float) -> bool:
        """Feed one step; returns True once the verdict is in."""
        if self.decided:
            return True
        self.last_dd = dd
        self.last_lost = lost
        if self.kind == DD_ZERO:
            if dd <= self.dd_tol:
                self.decided = True
                self.converged = True
                self.tau = step
                self._tau_dd = dd
                self._tau_lost = lost
                return True
        else:
            if moved and abs(moved) > self.move_tol:
                self.last_move = step
            elif step - self.last_move >= self.window:
                self.decided = True
                self.converged = True
                self.tau = self.last_move
                # nothing moved since tau, so current dd/lost still apply
                self._tau_dd = dd
                self._tau_lost = lost
                return True
        if step >= self.horizon:
            self.decided = True
            self.converged = False
            self.tau = self.horizon
            self._tau_dd = dd
            self._tau_lost = lost
            return True
        return False

    def force_converged(self, tau: int, dd: float, lost: float) -> None:
        """Record a convergence verdict decided outside the stream (used for
        degenerate populations where no interaction is possible)."""
        self.decided = True
        self.converged = True
        self.tau = tau
        self._tau_dd = dd
        self._tau_lost = lost

    def report(self) -> ConvergenceReport:
        if not self.decided:
            # stream ended early: treat like a budget exhaustion at the last
            # observed step
            return ConvergenceReport(
                tau=self.horizon,
                dd_at_tau=self.last_dd,
                lost_at_tau=self.last_lost,
                converged=False,
            )
        return ConvergenceReport(
            tau=self.tau,
            dd_at_tau=self._tau_dd,
            lost_at_tau=self._tau_lost,
            converged=self.converged,
        )


def detect_convergence(
    protocol: EnergyProtocol,
    steps: Iterable[tuple[float, float, float]],
    window: int,
    dd_tol: float = 0.0,
    horizon: Optional[int] = None,
) -> ConvergenceReport:
    """Offline wrapper over ConvergenceDetector.

    ``steps`` yields (dd, moved, lost) per step, starting at step 0 (the
    state before any interaction).
    """
    rows = list(steps)
    if horizon is None:
        horizon = max(len(rows) - 1, 0)
    detector = ConvergenceDetector(convergence_kind(protocol), window, dd_tol, horizon)
    for step, (dd, moved, lost) in enumerate(rows):
        if detector.observe(step, dd, moved, lost):
            break
    return detector.report()
