"""Number-partitioning / subset-sum instances: generation, encoding, classical solving.

Weights are stored as integers ``a_i`` in ``{1, ..., 2**k}`` so that imbalances
``D(x) = sum_i a_i s_i`` (``s_i = +1`` for bit ``i`` of ``x`` clear, ``-1`` when set)
are exact.  The weighted collective spin is ``S_z = D / 2**(k + 1)``.

Random streams are numpy ``PCG64`` generators.  Ensemble members get their own
seed derived from ``(master_seed, n, k, index)`` through ``numpy.random.SeedSequence``,
so instance ``i`` of an ensemble is the same no matter how, or in which order,
the ensemble is produced.
"""
from __future__ import annotations

import bisect
import json
from dataclasses import dataclass, field
from typing import Iterable, Iterator

import numpy as np

ENUMERATION_CAP = 20
MAX_BIT_DEPTH = 48


class CapabilityError(ValueError):
    """Raised when an exact computation would exceed a configured size cap."""


@dataclass(frozen=True)
class ProblemInstance:
    n: int
    k: int
    raw_weights: tuple[int, ...]
    seed: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "raw_weights", tuple(int(a) for a in self.raw_weights))
        if self.n < 1 or self.k < 1:
            raise ValueError(f"n and k must be >= 1 (got n={self.n}, k={self.k})")
        if self.k > MAX_BIT_DEPTH:
            raise ValueError(f"bit depth k={self.k} exceeds {MAX_BIT_DEPTH}")
        if len(self.raw_weights) != self.n:
            raise ValueError(f"expected {self.n} weights, got {len(self.raw_weights)}")
        top = 1 << self.k
        if any(a < 1 or a > top for a in self.raw_weights):
            raise ValueError(f"weights must lie in [1, 2**{self.k}]")

    @property
    def weights(self) -> np.ndarray:
        """Real weights ``w_i = a_i / 2**k`` in (0, 1]."""
        return np.asarray(self.raw_weights, dtype=float) / float(1 << self.k)

    @property
    def total(self) -> int:
        return sum(self.raw_weights)

    def padded(self, k: int) -> "ProblemInstance":
        """Same weights read at a larger bit depth (leading zero bits)."""
        if k < self.k:
            raise ValueError("padding cannot reduce the bit depth")
        return ProblemInstance(self.n, k, self.raw_weights, self.seed)

    def to_json(self) -> dict:
        return {"n": self.n, "k": self.k, "weights": list(self.raw_weights), "seed": self.seed}


@dataclass(frozen=True)
class RealInstance:
    n: int
    weights: tuple[float, ...]
    seed: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if self.n < 1 or len(self.weights) != self.n:
            raise ValueError("RealInstance needs n >= 1 weights")
        if any(not (0.0 < w <= 1.0) for w in self.weights):
            raise ValueError("real weights must lie in (0, 1]")

    @property
    def raw_weights(self) -> tuple[float, ...]:
        return self.weights

    def to_json(self) -> dict:
        return {"n": self.n, "k": None, "weights": list(self.weights), "seed": self.seed}


@dataclass
class SolutionReport:
    num_solutions: int
    solutions: np.ndarray | None
    min_abs_imbalance: float
    argmin_set: np.ndarray | None


@dataclass(frozen=True)
class EnsembleSpec:
    n: int
    k: int | None  # None selects real-valued weights
    count: int
    seed: int
    postselect: str = "none"  # "none" | "has_solution" | "count=c"

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("ensemble count must be >= 1")
        parse_postselect(self.postselect)


@dataclass
class Ensemble:
    spec: EnsembleSpec
    instances: list = field(default_factory=list)
    reports: list = field(default_factory=list)
    attempts: int = 0
    indices: list = field(default_factory=list)

    @property
    def complete(self) -> bool:
        return len(self.instances) >= self.spec.count


def parse_postselect(rule: str) -> tuple[str, int | None]:
    rule = rule.strip().lower()
    if rule in ("none", ""):
        return "none", None
    if rule in ("any", "has_solution"):
        return "has_solution", None
    if rule.startswith("count="):
        c = int(rule.split("=", 1)[1])
        if c < 0:
            raise ValueError("solution count must be >= 0")
        return "count", c
    raise ValueError(f"unknown postselection rule {rule!r}")


def instance_seed(master_seed: int, index: int, *key: int) -> int:
    """Mix a master seed with an instance index (and optional key) into a 64-bit seed."""
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=tuple(int(x) for x in key) + (int(index),))
    return int(ss.generate_state(1, np.uint64)[0])


def gen_instance(n: int, k: int, seed: int) -> ProblemInstance:
    """Draw ``n`` weights uniformly from ``{1, ..., 2**k}``."""
    if n < 1 or k < 1:
        raise ValueError(f"n and k must be >= 1 (got n={n}, k={k})")
    if k > MAX_BIT_DEPTH:
        raise ValueError(f"bit depth k={k} exceeds {MAX_BIT_DEPTH}")
    rng = np.random.Generator(np.random.PCG64(int(seed)))
    a = rng.integers(1, 1 << k, size=n, endpoint=True, dtype=np.int64)
    return ProblemInstance(n, k, tuple(int(x) for x in a), int(seed))


def gen_real_instance(n: int, seed: int) -> RealInstance:
    rng = np.random.Generator(np.random.PCG64(int(seed)))
    # random() is in [0, 1); flip it onto (0, 1]
    w = 1.0 - rng.random(n)
    return RealInstance(n, tuple(float(x) for x in w), int(seed))


def imbalance_values(weights: Iterable, dtype=np.int64) -> np.ndarray:
    """All ``2**n`` signed sums ``sum_i w_i s_i`` indexed by basis state.

    Built by doubling: appending weight ``i`` maps index ``x`` to ``x`` (bit clear,
    ``+w_i``) and ``x + 2**i`` (bit set, ``-w_i``).  Floating inputs keep exact
    antisymmetry ``v[x] == -v[~x]`` because rounding is sign-symmetric.
    """
    v = np.zeros(1, dtype=dtype)
    for w in weights:
        w = dtype(w)
        v = np.concatenate((v + w, v - w))
    return v


def _check_cap(n: int, cap: int) -> None:
    if n > cap:
        raise CapabilityError(
            f"n={n} exceeds the enumeration cap of {cap}; use ckk_exists for existence")


def count_solutions(instance, target: int = 0, cap: int = ENUMERATION_CAP,
                    keep_lists: bool = True) -> SolutionReport:
    """Exhaustive solution count (``D(x) == target``) and minimal ``|D - target|``."""
    _check_cap(instance.n, cap)
    if isinstance(instance, RealInstance):
        values = imbalance_values(instance.weights, dtype=np.float64)
    else:
        values = imbalance_values(instance.raw_weights)
    d = values - target
    absd = np.abs(d)
    m = absd.min()
    hits = np.flatnonzero(d == 0)
    argmin = np.flatnonzero(absd == m)
    return SolutionReport(
        num_solutions=int(hits.size),
        solutions=hits if keep_lists else None,
        min_abs_imbalance=m.item(),
        argmin_set=argmin if keep_lists else None,
    )


def ckk_exists(instance) -> tuple[bool, int]:
    """Complete Karmarkar-Karp differencing (branch and bound).

    Returns ``(perfect partition exists, best residue found)``.
    """
    nums = sorted((int(a) for a in instance.raw_weights), reverse=True)
    total = sum(nums)
    floor = total & 1  # residues share the parity of the total
    best = [total]

    def search(neg: list[int], s: int) -> bool:
        # neg holds negated values, ascending => largest first
        largest = -neg[0]
        rest = s - largest
        if largest >= rest:
            if largest - rest < best[0]:
                best[0] = largest - rest
            return best[0] == floor
        a, b = -neg[0], -neg[1]
        tail = neg[2:]
        diff = tail.copy()
        bisect.insort(diff, -(a - b))
        if search(diff, s - 2 * b):
            return True
        summed = tail.copy()
        bisect.insort(summed, -(a + b))
        return search(summed, s)

    if len(nums) == 1:
        return False, nums[0]
    search([-x for x in nums], total)
    return best[0] == 0, best[0]


def _accepts(instance, mode: str, c: int | None, cap: int):
    """Postselection test; returns (accepted, report or None)."""
    if mode == "none":
        return True, None
    exists, _ = ckk_exists(instance)
    if mode == "has_solution":
        if not exists:
            return False, None
        report = count_solutions(instance, cap=cap) if instance.n <= cap else None
        if report is not None and report.num_solutions == 0:
            raise AssertionError("CKK reported a solution that enumeration did not find")
        return True, report
    if not exists:
        return c == 0, None
    report = count_solutions(instance, cap=cap)
    return report.num_solutions == c, report


def iter_candidates(n: int, k: int | None, seed: int) -> Iterator[tuple[int, object]]:
    i = 0
    while True:
        if k is None:
            yield i, gen_real_instance(n, instance_seed(seed, i, n, 0))
        else:
            yield i, gen_instance(n, k, instance_seed(seed, i, n, k))
        i += 1


def generate_ensemble(spec: EnsembleSpec, budget_factor: int = 100,
                      cap: int = ENUMERATION_CAP) -> Ensemble:
    """Draw instances until ``spec.count`` pass postselection or the budget runs out.

    The attempt budget is ``budget_factor * count``; check ``Ensemble.complete``.
    """
    mode, c = parse_postselect(spec.postselect)
    if spec.k is None and mode != "none":
        raise ValueError("postselection applies to integer instances only")
    ens = Ensemble(spec)
    budget = budget_factor * spec.count
    for i, inst in iter_candidates(spec.n, spec.k, spec.seed):
        if ens.attempts >= budget or ens.complete:
            break
        ens.attempts += 1
        ok, report = _accepts(inst, mode, c, cap)
        if ok:
            if report is None and inst.n <= cap:
                report = count_solutions(inst, cap=cap)
            ens.instances.append(inst)
            ens.reports.append(report)
            ens.indices.append(i)
    return ens


def instance_from_json(obj: dict):
    if obj.get("k") is None:
        return RealInstance(int(obj["n"]), tuple(obj["weights"]), obj.get("seed"))
    return ProblemInstance(int(obj["n"]), int(obj["k"]), tuple(obj["weights"]), obj.get("seed"))


def read_jsonl(path) -> list:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(instance_from_json(json.loads(line)))
    return out


def dumps_jsonl(instances: Iterable) -> str:
    return "".join(json.dumps(inst.to_json()) + "\n" for inst in instances)
