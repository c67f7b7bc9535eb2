"""Job shop instances: generation, Taillard-style text I/O, validation.

An instance has ``num_jobs`` jobs; each job visits every machine exactly
once (its routing row is a permutation of the machine indices) and each
operation carries an integer processing time in [1, 99].

Text format (machines 0-indexed, '#' starts a comment line)::

    num_jobs num_machines
    m p m p ... m p      <- one line per job: (machine, time) pairs
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import DimensionError, ParseError
from .rng import SplitMix64

PROC_TIME_LO = 1
PROC_TIME_HI = 99


@dataclass(frozen=True)
class Instance:
    num_jobs: int
    num_machines: int
    routing: tuple[tuple[int, ...], ...]
    proc_times: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        validate_instance(self)

    @property
    def num_ops(self) -> int:
        return self.num_jobs * self.num_machines

    def op_index(self, job: int, pos: int) -> int:
        """Flat operation id: jobs are contiguous blocks in routing order."""
        return job * self.num_machines + pos

    def scaled(self, factor: int) -> "Instance":
        """Same routing with all processing times multiplied by ``factor``."""
        times = tuple(tuple(p * factor for p in row) for row in self.proc_times)
        return Instance(self.num_jobs, self.num_machines, self.routing, times)


def validate_instance(inst: Instance) -> None:
    if inst.num_jobs < 1 or inst.num_machines < 1:
        raise DimensionError(
            f"instance needs at least one job and one machine, "
            f"got {inst.num_jobs}x{inst.num_machines}"
        )
    if len(inst.routing) != inst.num_jobs or len(inst.proc_times) != inst.num_jobs:
        raise DimensionError("routing/proc_times row count != num_jobs")
    expected = set(range(inst.num_machines))
    for i, (route, times) in enumerate(zip(inst.routing, inst.proc_times)):
        if len(route) != inst.num_machines or len(times) != inst.num_machines:
            raise DimensionError(f"job {i}: row length != num_machines")
        if set(route) != expected:
            raise DimensionError(f"job {i}: routing is not a machine permutation")
        if any(p < 1 for p in times):
            raise DimensionError(f"job {i}: processing times must be >= 1")


def generate_instance(num_jobs: int, num_machines: int, rng_seed: int) -> Instance:
    """Uniform random instance: times ~ U{1..99}, routings uniform permutations.

    Identical seed gives a bit-identical instance on any platform (splitmix64).
    """
    if num_jobs < 1 or num_machines < 1:
        raise DimensionError(
            f"invalid dimensions {num_jobs}x{num_machines}"
        )
    rng = SplitMix64(rng_seed)
    routing = tuple(tuple(rng.permutation(num_machines)) for _ in range(num_jobs))
    proc_times = tuple(
        tuple(rng.randint(PROC_TIME_LO, PROC_TIME_HI) for _ in range(num_machines))
        for _ in range(num_jobs)
    )
    return Instance(num_jobs, num_machines, routing, proc_times)


def generate_instance_set(
    num_jobs: int, num_machines: int, count: int, rng_seed: int
) -> list[Instance]:
    """``count`` instances with per-instance seeds derived from one master seed."""
    master = SplitMix64(rng_seed)
    return [
        generate_instance(num_jobs, num_machines, master.next_u64())
        for _ in range(count)
    ]


def parse_taillard(text: str | bytes) -> Instance:
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    lines = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        if not stripped or stripped.startswith("#"):
            continue
        lines.append((lineno, stripped))
    if not lines:
        raise ParseError("line 1: empty instance text")

    lineno, header = lines[0]
    parts = header.split()
    if len(parts) != 2:
        raise ParseError(f"line {lineno}: header must be 'num_jobs num_machines'")
    try:
        num_jobs, num_machines = int(parts[0]), int(parts[1])
    except ValueError:
        raise ParseError(f"line {lineno}: non-integer header") from None
    if num_jobs < 1 or num_machines < 1:
        raise ParseError(f"line {lineno}: dimensions must be positive")
    if len(lines) - 1 != num_jobs:
        raise ParseError(
            f"line {lineno}: expected {num_jobs} job lines, got {len(lines) - 1}"
        )

    routing, proc_times = [], []
    for job, (lineno, line) in enumerate(lines[1:]):
        fields = line.split()
        if len(fields) != 2 * num_machines:
            raise ParseError(
                f"line {lineno}: job {job} needs {num_machines} (machine, time) pairs"
            )
        try:
            values = [int(f) for f in fields]
        except ValueError:
            raise ParseError(f"line {lineno}: non-integer field") from None
        machines = tuple(values[0::2])
        times = tuple(values[1::2])
        seen = set()
        for m in machines:
            if not 0 <= m < num_machines:
                raise ParseError(f"line {lineno}: machine index {m} out of range")
            if m in seen:
                raise ParseError(f"line {lineno}: duplicate machine {m}")
            seen.add(m)
        if any(p < 1 for p in times):
            raise ParseError(f"line {lineno}: processing time must be >= 1")
        routing.append(machines)
        proc_times.append(times)

    return Instance(num_jobs, num_machines, tuple(routing), tuple(proc_times))


def write_taillard(inst: Instance) -> str:
    """Canonical text form; ``parse_taillard`` inverts it."""
    out = [f"{inst.num_jobs} {inst.num_machines}"]
    for route, times in zip(inst.routing, inst.proc_times):
        out.append(" ".join(f"{m} {p}" for m, p in zip(route, times)))
    return "\n".join(out) + "\n"
