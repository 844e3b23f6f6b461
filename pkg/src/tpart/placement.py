"""Logical-to-physical mapping advisor.

The cost of a mapping is ``alpha * (load of the busiest worker) +
beta * (traffic crossing workers)``.  :func:`advise_mapping` minimizes it
exactly by enumeration for small instances or greedily otherwise.
"""

from __future__ import annotations

import argparse
import itertools
import sys
from dataclasses import dataclass
from typing import Sequence

import numpy as np

DEFAULT_ALPHA = 1.0
DEFAULT_BETA = 0.001
EXHAUSTIVE_CAP = 10
EXHAUSTIVE_BUDGET = 10**6   # mappings the benchmark is willing to enumerate


class PlacementError(ValueError):
    pass


@dataclass
class WorkloadProfile:
    load: np.ndarray      # txns/s per logical partition
    traffic: np.ndarray   # symmetric messages/s between logical partitions

    def __post_init__(self):
        self.load = np.asarray(self.load, dtype=float)
        self.traffic = np.asarray(self.traffic, dtype=float)
        n = len(self.load)
        if self.traffic.shape != (n, n):
            raise PlacementError(f"traffic must be {n}x{n}, got {self.traffic.shape}")
        if (self.load < 0).any() or (self.traffic < 0).any():
            raise PlacementError("profile entries must be non-negative")
        if not np.allclose(self.traffic, self.traffic.T):
            raise PlacementError("traffic matrix must be symmetric")
        if np.diag(self.traffic).any():
            raise PlacementError("traffic diagonal must be zero")

    @property
    def num_logical(self) -> int:
        return len(self.load)

    def dumps(self) -> str:
        n = self.num_logical
        rows = [f"{n}", " ".join(_fmt(x) for x in self.load)]
        rows += [" ".join(_fmt(x) for x in row) for row in self.traffic]
        return "\n".join(rows) + "\n"

    @classmethod
    def loads(cls, text: str) -> "WorkloadProfile":
        lines = [ln.split() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
        if not lines:
            raise PlacementError("empty profile")
        n = int(lines[0][0])
        if len(lines) != n + 2:
            raise PlacementError(f"expected {n + 2} non-empty lines, got {len(lines)}")
        return cls([float(x) for x in lines[1]], [[float(x) for x in row] for row in lines[2:]])


def _fmt(x: float) -> str:
    return repr(float(x))


def estimate_cost(profile: WorkloadProfile, mapping: Sequence[int],
                  alpha: float = DEFAULT_ALPHA, beta: float = DEFAULT_BETA,
                  num_physical: int | None = None) -> float:
    if alpha < 0 or beta < 0:
        raise PlacementError("cost weights must be non-negative")
    assign = np.asarray(mapping, dtype=int)
    if assign.shape != (profile.num_logical,):
        raise PlacementError(
            f"mapping covers {len(assign)} partitions, profile has {profile.num_logical}")
    if (assign < 0).any():
        raise PlacementError("physical ids must be non-negative")
    workers = num_physical or int(assign.max()) + 1
    per_worker = np.bincount(assign, weights=profile.load, minlength=workers)
    cross = assign[:, None] != assign[None, :]
    # each unordered pair once
    remote = float(np.triu(profile.traffic * cross, k=1).sum())
    return alpha * float(per_worker.max()) + beta * remote


def _exhaustive(profile, num_physical, alpha, beta, chunk=1 << 15) -> tuple[int, ...]:
    n = profile.num_logical
    upper = np.triu(profile.traffic, k=1)
    best, best_cost = None, None
    # chunks in lexicographic order, so a strict < keeps the smallest tied assignment
    candidates = itertools.product(range(num_physical), repeat=n)
    while True:
        grid = np.array(list(itertools.islice(candidates, chunk)), dtype=np.int8)
        if not len(grid):
            break
        loads = np.stack([(grid == w) @ profile.load for w in range(num_physical)], axis=1)
        cross = grid[:, :, None] != grid[:, None, :]
        remote = (cross * upper).sum(axis=(1, 2))
        costs = alpha * loads.max(axis=1) + beta * remote
        i = int(np.argmin(costs))
        if best_cost is None or costs[i] < best_cost:
            best, best_cost = grid[i], costs[i]
    return tuple(int(x) for x in best)


def _greedy(profile, num_physical, alpha, beta) -> tuple[int, ...]:
    n = profile.num_logical
    order = sorted(range(n), key=lambda i: (-profile.load[i], i))
    worker_load = np.zeros(num_physical)
    assign = [-1] * n
    for i in order:
        best_w, best_cost = 0, None
        for w in range(num_physical):
            loads = worker_load.copy()
            loads[w] += profile.load[i]
            remote = sum(profile.traffic[i, j] for j in range(n)
                         if assign[j] >= 0 and assign[j] != w)
            # traffic to partitions not yet placed is ignored
            cost = alpha * loads.max() + beta * remote
            if best_cost is None or cost < best_cost:
                best_w, best_cost = w, cost
        assign[i] = best_w
        worker_load[best_w] += profile.load[i]
    return tuple(assign)


def advise_mapping(profile: WorkloadProfile, num_physical: int,
                   alpha: float = DEFAULT_ALPHA, beta: float = DEFAULT_BETA,
                   strategy: str = "exhaustive") -> tuple[int, ...]:
    """Return ``assign[logical] = physical`` for the requested strategy.

    Exhaustive search breaks ties toward the lexicographically smallest
    assignment; greedy places partitions by descending load on the worker with
    the smallest resulting cost.
    """
    if num_physical < 1:
        raise PlacementError("num_physical must be >= 1")
    if alpha < 0 or beta < 0:
        raise PlacementError("cost weights must be non-negative")
    if num_physical == 1:
        return (0,) * profile.num_logical
    if strategy == "exhaustive":
        if profile.num_logical > EXHAUSTIVE_CAP:
            raise PlacementError(
                f"exhaustive search is capped at {EXHAUSTIVE_CAP} logical partitions")
        return _exhaustive(profile, num_physical, alpha, beta)
    if strategy == "greedy":
        return _greedy(profile, num_physical, alpha, beta)
    raise PlacementError(f"unknown strategy {strategy!r}")


def profile_from_counts(num_logical: int, root_counts, traffic_counts,
                        elapsed_us: float) -> WorkloadProfile:
    """Build a profile from per-partition root counts and (src, dst) message counts."""
    seconds = elapsed_us / 1e6 if elapsed_us else 1.0
    load = np.zeros(num_logical)
    for p, count in dict(root_counts).items():
        load[p] += count
    traffic = np.zeros((num_logical, num_logical))
    for (src, dst), count in dict(traffic_counts).items():
        if src != dst:
            traffic[src, dst] += count
            traffic[dst, src] += count
    return WorkloadProfile(load / seconds, traffic / seconds)


def dumps_mapping(mapping: Sequence[int]) -> str:
    return "".join(f"{logical} {physical}\n" for logical, physical in enumerate(mapping))


def loads_mapping(text: str) -> dict[int, int]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise PlacementError(f"line {lineno}: expected 'logical physical'")
        logical, physical = int(parts[0]), int(parts[1])
        if logical in out:
            raise PlacementError(f"line {lineno}: logical partition {logical} mapped twice")
        out[logical] = physical
    return out


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="tpart-advise",
                                     description="Advise a logical-to-physical mapping.")
    parser.add_argument("profile", help="profile matrix file")
    parser.add_argument("--physical", type=int, required=True)
    parser.add_argument("--alpha", type=float, default=DEFAULT_ALPHA)
    parser.add_argument("--beta", type=float, default=DEFAULT_BETA)
    parser.add_argument("--strategy", choices=("exhaustive", "greedy"), default="exhaustive")
    parser.add_argument("--out", help="mapping file to write (default: stdout)")
    args = parser.parse_args(argv)
    with open(args.profile) as fh:
        profile = WorkloadProfile.loads(fh.read())
    try:
        mapping = advise_mapping(profile, args.physical, args.alpha, args.beta, args.strategy)
    except PlacementError as exc:
        parser.error(str(exc))
    text = dumps_mapping(mapping)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    print(f"cost {estimate_cost(profile, mapping, args.alpha, args.beta, args.physical)!r}",
          file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
