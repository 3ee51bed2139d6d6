"""Peer-to-peer energy redistribution protocols and the loss model.

Five protocols with different knowledge requirements:

* ideal-target: every node knows its share of the unique doubling
  distribution for the final tree and total energy; surplus nodes pay
  deficit nodes on any interaction.
* lambda-exchange: on a parent-child interaction, if the parent holds less
  than lam times the child's energy, the child tops the parent up to exactly
  that ratio. Oblivious to everything but the edge.
* rand-exchange: lambda-exchange with lam redrawn uniformly from [lo, hi]
  on every parent-child interaction.
* kappa-transfer: on a parent-child interaction with the parent below twice
  the child's energy, the child sends a fixed fraction of its own energy up.
* depth-target: every non-root node chases a target computed from its local
  depth/height estimates and the known total energy; the root acts as an
  unbounded buffer, paying deficits and absorbing surpluses (transfers
  involving the root are capped by the root's current energy).

Whenever x units are sent, the receiver gets (1-beta)x and beta*x is
destroyed. All firing conditions carry a tiny relative slack
(core.CONDITION_SLACK) so protocols go quiet at their fixed points instead
of churning on float noise.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from typing import Union

from .core import (
    EnergyState,
    Population,
    TreeNetwork,
    resolve_beta,
    strictly_greater,
)
from .errors import DomainError
from .estimation import true_depths
from .formation import is_formation_complete

BETA_CAP = 0.999


@dataclass(frozen=True)
class LossModel:
    """Per-transfer loss fraction: zero, or a clamped Gaussian draw."""

    kind: str  # "lossless" | "normal"
    mean: float = 0.0
    stddev: float = 0.0

    def __post_init__(self):
        if self.kind not in ("lossless", "normal"):
            raise DomainError(f"unknown loss model {self.kind!r}")

    @staticmethod
    def lossless() -> "LossModel":
        return LossModel("lossless")

    @staticmethod
    def normal(mean: float = 0.2, stddev: float = 0.05) -> "LossModel":
        return LossModel("normal", mean, stddev)

    @staticmethod
    def parse(spec: str) -> "LossModel":
        spec = spec.strip().lower()
        if spec in ("lossless", "none", "0"):
            return LossModel.lossless()
        if spec.startswith("normal:"):
            mean, stddev = (float(x) for x in spec.split(":", 1)[1].split(","))
            return LossModel.normal(mean, stddev)
        raise DomainError(f"cannot parse loss model {spec!r}")

    def spec(self) -> str:
        if self.kind == "lossless":
            return "lossless"
        return f"normal:{self.mean},{self.stddev}"


def sample_beta(model: LossModel, rng: random.Random) -> float:
    """One loss-fraction draw, clamped to [0, BETA_CAP]. The lossless model
    consumes no randomness."""
    if model.kind == "lossless":
        return 0.0
    draw = rng.gauss(model.mean, model.stddev)
    if draw < 0.0:
        return 0.0
    if draw > BETA_CAP:
        return BETA_CAP
    return draw


@dataclass(frozen=True)
class IdealTarget:
    tag = "IDEAL"


@dataclass(frozen=True)
class LambdaExchange:
    lam: float
    tag = "LAMBDA"

    def __post_init__(self):
        if self.lam < 2:
            raise DomainError("exchange ratio must be >= 2")


@dataclass(frozen=True)
class RandExchange:
    lo: float = 2.0
    hi: float = 3.0
    tag = "RAND"

    def __post_init__(self):
        if not 2 <= self.lo <= self.hi:
            raise DomainError("exchange ratio interval must satisfy 2 <= lo <= hi")


@dataclass(frozen=True)
class KappaTransfer:
    kappa: float
    tag = "KAPPA"

    def __post_init__(self):
        if not 0 < self.kappa < 1:
            raise DomainError("transfer fraction must be in (0, 1)")


@dataclass(frozen=True)
class DepthTarget:
    k: int
    tag = "KDEPTH"

    def __post_init__(self):
        if self.k < 2:
            raise DomainError("depth-target arity must be >= 2")


EnergyProtocol = Union[IdealTarget, LambdaExchange, RandExchange, KappaTransfer, DepthTarget]


def parse_energy_protocol(spec: str) -> EnergyProtocol:
    spec = spec.strip().lower()
    if spec == "ideal":
        return IdealTarget()
    if spec.startswith("lambda:"):
        return LambdaExchange(float(spec.split(":", 1)[1]))
    if spec == "rand":
        return RandExchange()
    if spec.startswith("rand:"):
        lo, hi = (float(x) for x in spec.split(":", 1)[1].split(","))
        return RandExchange(lo, hi)
    if spec.startswith("kappa:"):
        return KappaTransfer(float(spec.split(":", 1)[1]))
    if spec.startswith("kdepth:"):
        return DepthTarget(int(spec.split(":", 1)[1]))
    raise DomainError(f"cannot parse energy protocol {spec!r}")


def protocol_spec(protocol: EnergyProtocol) -> str:
    if isinstance(protocol, IdealTarget):
        return "ideal"
    if isinstance(protocol, LambdaExchange):
        return f"lambda:{protocol.lam}"
    if isinstance(protocol, RandExchange):
        return f"rand:{protocol.lo},{protocol.hi}"
    if isinstance(protocol, KappaTransfer):
        return f"kappa:{protocol.kappa}"
    return f"kdepth:{protocol.k}"


@dataclass(frozen=True)
class IdealEnergyTable:
    """Per-node share of the unique exact doubling distribution: a node at
    depth d gets base * 2^(height - d), with base chosen so the shares sum
    to the given total."""

    values: tuple[float, ...]
    base: float
    total: float


def compute_ideal_energies(network: TreeNetwork, total_energy: float) -> IdealEnergyTable:
    """Build the ideal table from true depths (BFS) of a completed tree."""
    if total_energy <= 0:
        raise DomainError("total energy must be positive")
    depth, height = true_depths(network)
    denom = sum(2 ** (height - d) for d in depth)
    base = total_energy / denom
    values = tuple(2 ** (height - d) * base for d in depth)
    return IdealEnergyTable(values=values, base=base, total=total_energy)


def ideal_target_step(
    energy: EnergyState, u: int, v: int, table: IdealEnergyTable, beta
) -> float:
    """Targeted exchange between any interacting pair: the node above its
    target sends min(surplus, deficit) to the node below its target.

    Returns the amount debited from the sender, signed positive when u sent
    to v and negative for the opposite direction; 0.0 when nothing fired.
    """
    e = energy.per_node
    eu, ev = e[u], e[v]
    tu, tv = table.values[u], table.values[v]
    if strictly_greater(eu, tu) and strictly_greater(tv, ev):
        x = min(eu - tu, tv - ev)
        energy.transfer(u, v, x, resolve_beta(beta))
        return x
    if strictly_greater(tu, eu) and strictly_greater(ev, tv):
        x = min(tu - eu, ev - tv)
        energy.transfer(v, u, x, resolve_beta(beta))
        return -x
    return 0.0


def lambda_exchange_step(
    energy: EnergyState, p: int, c: int, lam: float, beta
) -> float:
    """Parent-child exchange: fires only while E_p < lam * E_c, moving
    x = (lam * E_c - E_p) / (lam + 1) from child to parent so that, with no
    loss, the pair lands exactly on E_p = lam * E_c. Returns x (0 if idle).
    """
    e = energy.per_node
    ep, ec = e[p], e[c]
    if strictly_greater(lam * ec, ep):
        x = (lam * ec - ep) / (lam + 1.0)
        energy.transfer(c, p, x, resolve_beta(beta))
        return x
    return 0.0


def rand_exchange_step(
    energy: EnergyState,
    p: int,
    c: int,
    rng: random.Random,
    beta,
    lo: float = 2.0,
    hi: float = 3.0,
) -> float:
    """lambda-exchange with the ratio redrawn uniformly from [lo, hi] on
    every parent-child interaction (the draw happens even when the exchange
    condition then fails, keeping the stream aligned for replay)."""
    lam = rng.uniform(lo, hi)
    return lambda_exchange_step(energy, p, c, lam, beta)


def kappa_transfer_step(
    energy: EnergyState, p: int, c: int, kappa: float, beta
) -> float:
    """Parent-child transfer: while E_p < 2 * E_c the child sends a fixed
    kappa fraction of its own energy to the parent. Returns the amount."""
    e = energy.per_node
    ep, ec = e[p], e[c]
    if strictly_greater(2.0 * ec, ep):
        x = kappa * ec
        energy.transfer(c, p, x, resolve_beta(beta))
        return x
    return 0.0


def depth_target(pop: Population, v: int, k: int, total_energy: float) -> float:
    """Target energy of a non-root node from its current register estimates:
    total / (k^d * (h + 1)). Fresh registers (d = h = 0) give the degenerate
    value total, which is legal before estimation settles."""
    net = pop.network
    if net.parent[v] == -1 and net.children[v]:
        raise DomainError("the root has no target energy")
    return total_energy / (k ** pop.d[v] * (pop.h[v] + 1))


def _is_root(net: TreeNetwork, x: int) -> bool:
    return net.parent[x] == -1 and bool(net.children[x])


def k_depth_target_step(
    pop: Population, u: int, v: int, k: int, total_energy: float, beta
) -> float:
    """Targeted exchange against locally estimated targets, on any pair.

    Between two non-root nodes, u pays v min(surplus, deficit) when u is
    above target and v below. When one side is the root, the other side's
    gap to target decides the direction: the root tops up a deficit or
    absorbs a surplus, with the amount clamped by the root's own energy in
    both directions. Returns the signed amount debited (positive: u sent).
    """
    net = pop.network
    e = pop.energy.per_node
    u_root = _is_root(net, u)
    v_root = _is_root(net, v)
    if u_root and v_root:
        return 0.0
    if not u_root and not v_root:
        zu = depth_target(pop, u, k, total_energy)
        zv = depth_target(pop, v, k, total_energy)
        eu, ev = e[u], e[v]
        if strictly_greater(eu, zu) and strictly_greater(zv, ev):
            x = min(eu - zu, zv - ev)
            pop.energy.transfer(u, v, x, resolve_beta(beta))
            return x
        return 0.0
    r, o = (u, v) if u_root else (v, u)
    zo = depth_target(pop, o, k, total_energy)
    eo = e[o]
    if strictly_greater(zo, eo):
        x = min(zo - eo, e[r])
        if x <= 0.0:
            return 0.0
        pop.energy.transfer(r, o, x, resolve_beta(beta))
        return x if r == u else -x
    if strictly_greater(eo, zo):
        x = min(eo - zo, e[r])
        if x <= 0.0:
            return 0.0
        pop.energy.transfer(o, r, x, resolve_beta(beta))
        return -x if r == u else x
    return 0.0


def target_feasible(pop: Population, k: int, total_energy: float) -> bool:
    """With stabilized estimates on a k-ary tree the non-root targets sum to
    strictly less than the total energy; the remainder lands on the root."""
    if not is_formation_complete(pop.network):
        raise DomainError("feasibility check needs a completed tree")
    net = pop.network
    if net.n == 1:
        return True
    root = net.roots()[0]
    total = math.fsum(
        depth_target(pop, v, k, total_energy) for v in range(net.n) if v != root
    )
    return total < total_energy
