"""Fair probabilistic scheduler with deterministic seeding, plus the scripted
variant and the replayable interaction trace.

The repo-wide PRNG is CPython's ``random.Random`` (Mersenne Twister,
MT19937), which produces the same sequence for the same integer seed on
every platform. Per-run seeds derive from (master_seed, run_index) through
SHA-256, so runs are independent and reproducible in isolation.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .errors import DomainError

PRNG_NAME = "python-random-mt19937"

TRACE_MAGIC = "# enertree-trace v1"


def derive_run_seed(master_seed: int, run_index: int) -> int:
    """Documented splitting rule: first 8 bytes of sha256(b"<master>:<index>")."""
    digest = hashlib.sha256(f"{master_seed}:{run_index}".encode("ascii")).digest()
    return int.from_bytes(digest[:8], "big")


def make_rng(seed: int) -> random.Random:
    return random.Random(seed)


def sample_pair(rng: random.Random, n: int) -> tuple[int, int]:
    """Draw an unordered pair uniformly from the n(n-1)/2 pairs, presented in
    a uniformly random orientation (both orderings equally likely)."""
    if n < 2:
        raise DomainError("pair sampling needs at least two nodes")
    u = rng.randrange(n)
    v = rng.randrange(n - 1)
    if v >= u:
        v += 1
    return u, v


class RandomScheduler:
    """Uniform pairwise scheduler; one call per discrete time step."""

    __slots__ = ("rng", "n")

    def __init__(self, rng: random.Random, n: int):
        if n < 2:
            raise DomainError("scheduler needs at least two nodes")
        self.rng = rng
        self.n = n

    def next_pair(self) -> tuple[int, int]:
        return sample_pair(self.rng, self.n)


class ScriptedScheduler:
    """Yields a fixed pair sequence, then falls back to uniform sampling.

    Pair orientation is taken verbatim from the script, standing in for the
    "either may become the parent" choices of the random scheduler.
    """

    __slots__ = ("pairs", "pos", "n", "rng")

    def __init__(
        self,
        pairs: Sequence[tuple[int, int]],
        n: Optional[int] = None,
        rng: Optional[random.Random] = None,
    ):
        if n is not None:
            for u, v in pairs:
                if not (0 <= u < n and 0 <= v < n) or u == v:
                    raise DomainError(f"invalid scripted pair ({u}, {v})")
        self.pairs = list(pairs)
        self.pos = 0
        self.n = n
        self.rng = rng

    @property
    def exhausted(self) -> bool:
        return self.pos >= len(self.pairs)

    def next_pair(self) -> tuple[int, int]:
        if self.pos < len(self.pairs):
            pair = self.pairs[self.pos]
            self.pos += 1
            return pair
        if self.rng is None or self.n is None:
            raise DomainError("scripted scheduler exhausted and no fallback rng")
        return sample_pair(self.rng, self.n)


def scripted_scheduler(
    pairs: Sequence[tuple[int, int]],
    n: Optional[int] = None,
    rng: Optional[random.Random] = None,
) -> ScriptedScheduler:
    return ScriptedScheduler(pairs, n=n, rng=rng)


@dataclass(frozen=True)
class TraceRecord:
    """One scheduler step: the oriented pair, the rule that fired, and the
    energy moved (signed: positive = u sent to v) with its loss fraction."""

    step: int
    u: int
    v: int
    rule: str
    moved: Optional[float] = None
    beta: Optional[float] = None

    def line(self) -> str:
        moved = "-" if self.moved is None else repr(self.moved)
        beta = "-" if self.beta is None else repr(self.beta)
        return f"{self.step} {self.u} {self.v} {self.rule} {moved} {beta}"

    @staticmethod
    def parse(line: str) -> "TraceRecord":
        parts = line.split()
        if len(parts) != 6:
            raise DomainError(f"malformed trace record: {line!r}")
        step, u, v, rule, moved, beta = parts
        return TraceRecord(
            step=int(step),
            u=int(u),
            v=int(v),
            rule=rule,
            moved=None if moved == "-" else float(moved),
            beta=None if beta == "-" else float(beta),
        )


@dataclass
class InteractionTrace:
    """Seeded, replayable record of every scheduler pick and rule firing."""

    seed: int
    config: dict
    records: list[TraceRecord] = field(default_factory=list)
    final_digest: Optional[str] = None

    def append(self, record: TraceRecord) -> None:
        if record.step != len(self.records):
            raise DomainError("trace steps must be consecutive from 0")
        self.records.append(record)

    def lines(self) -> list[str]:
        out = [
            TRACE_MAGIC,
            f"# seed={self.seed}",
            "# config=" + json.dumps(self.config, sort_keys=True),
            f"# digest={self.final_digest or '-'}",
        ]
        out.extend(r.line() for r in self.records)
        return out


def write_trace(trace: InteractionTrace, path: "str | Path") -> None:
    Path(path).write_text("\n".join(trace.lines()) + "\n", encoding="ascii")


def read_trace(source: "str | Path | Iterable[str]") -> InteractionTrace:
    if isinstance(source, (str, Path)):
        try:
            lines = Path(source).read_text(encoding="ascii").splitlines()
        except OSError as exc:
            raise DomainError(f"cannot read trace {source}: {exc}") from exc
    else:
        lines = list(source)
    if not lines or lines[0].strip() != TRACE_MAGIC:
        raise DomainError("not an enertree trace file")
    seed = None
    config = None
    digest = None
    records = []
    for line in lines[1:]:
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if body.startswith("seed="):
                seed = int(body[5:])
            elif body.startswith("config="):
                config = json.loads(body[7:])
            elif body.startswith("digest="):
                digest = body[7:]
                if digest == "-":
                    digest = None
            continue
        records.append(TraceRecord.parse(line))
    if seed is None or config is None:
        raise DomainError("trace file missing seed or config header")
    trace = InteractionTrace(seed=seed, config=config, final_digest=digest)
    for rec in records:
        trace.append(rec)
    return trace
