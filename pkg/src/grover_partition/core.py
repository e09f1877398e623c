"""State-vector engine for Grover search with diagonal phase oracles.

Amplitudes live in a complex array whose last axis has length ``2**n``; any
leading axes are a batch of independent registers (one per problem instance),
so every operation here acts row-wise.  Bit ``i`` of a basis index is spin ``i``
(clear means ``sigma_z = +1``).

Oracles are diagonal.  The generalized oracle multiplies amplitude ``x`` by

    chi(mu, r) = -(1 + i mu - r) / (1 - i mu + r)

with ``mu`` the imbalance in units of half the step width and ``r`` the decay
per query.  ``r = 0`` gives the unit phasor ``exp(i (2 arctan(mu) + pi))``;
``r > 0`` shrinks amplitudes and the lost norm is never restored.
"""
from __future__ import annotations

import functools
import struct
from dataclasses import dataclass

import numpy as np

from .instances import ENUMERATION_CAP, ProblemInstance, RealInstance, imbalance_values


@dataclass
class StateVector:
    amps: np.ndarray

    @property
    def n(self) -> int:
        return int(self.amps.shape[-1]).bit_length() - 1

    @property
    def norm2(self) -> np.ndarray | float:
        p = np.sum(np.abs(self.amps) ** 2, axis=-1)
        return p if p.ndim else float(p)

    def copy(self) -> "StateVector":
        return StateVector(self.amps.copy())


@dataclass(frozen=True)
class ImbalanceTable:
    """Per-basis-state imbalance ``D(x)``; ``S_z = D / 2**(k + 1)``.

    ``values`` is int64 for integer instances and float64 for real weights
    (``k = 0``).  ``layer`` is ``None`` for the full weights, else the layer
    index whose ``layer * m`` low bits were kept.
    """
    values: np.ndarray
    k: int
    layer: int | None = None
    m: int | None = None

    @property
    def n(self) -> int:
        return int(self.values.shape[-1]).bit_length() - 1


@dataclass(frozen=True)
class OracleSpec:
    """Diagonal phase oracle.

    ``target`` is an integer offset on ``D`` (subset-sum target ``W*`` maps to
    ``A - 2 W*``).  ``modulus`` divides the half-imbalance ``(D - target) / 2``
    (that is ``2**k S_z``) and must be a power of two.
    """
    gamma: float
    target: int = 0
    r: float = 0.0
    modulus: int | None = None
    conjugate: bool = False

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"step width gamma must be > 0 (got {self.gamma})")
        if self.r < 0:
            raise ValueError(f"decay r must be >= 0 (got {self.r})")
        if self.modulus is not None:
            M = int(self.modulus)
            if M < 2 or M & (M - 1):
                raise ValueError(f"modulus must be a power of two >= 2 (got {self.modulus})")


@dataclass(frozen=True)
class DiffusionSpec:
    kind: str = "ideal"  # "ideal" | "generalized"
    gamma_d: float = 0.5
    r_d: float = 0.0

    def __post_init__(self):
        if self.kind not in ("ideal", "generalized"):
            raise ValueError(f"unknown diffusion kind {self.kind!r}")
        if not 0 < self.gamma_d < 1:
            raise ValueError("generalized diffusion needs 0 < gamma_d < 1")
        if self.r_d < 0:
            raise ValueError("r_d must be >= 0")


def init_uniform(n: int, batch: int | None = None, cap: int = ENUMERATION_CAP) -> StateVector:
    if n < 1:
        raise ValueError("n must be >= 1")
    if n > cap:
        raise ValueError(f"n={n} exceeds the state-vector cap of {cap}")
    shape = (1 << n,) if batch is None else (batch, 1 << n)
    return StateVector(np.full(shape, 2.0 ** (-n / 2), dtype=np.complex128))


def build_imbalance_table(instance, layer: int | None = None, m: int | None = None) -> ImbalanceTable:
    """Exact imbalance table, optionally from layer couplings.

    Layer ``l`` keeps ``mod(a_i, 2**(l*m))`` in place of ``a_i``.
    """
    if isinstance(instance, RealInstance):
        if layer is not None:
            raise ValueError("layer tables need integer weights")
        return ImbalanceTable(imbalance_values(instance.weights, dtype=np.float64), 0)
    if layer is None:
        return ImbalanceTable(imbalance_values(instance.raw_weights), instance.k)
    if m is None or m < 1 or layer < 1:
        raise ValueError("layer tables need layer >= 1 and m >= 1")
    mask = (1 << (layer * m)) - 1
    return ImbalanceTable(imbalance_values([a & mask for a in instance.raw_weights]),
                          instance.k, layer, m)


def layer_target_offset(instance: ProblemInstance, layer: int, m: int) -> int:
    """Sum of the bits dropped from each weight at ``layer``.

    ``D`` and the layer imbalance differ by a multiple of ``2**(layer*m)``
    congruent to this offset modulo ``2**(layer*m + 1)``, so shifting the
    target by it makes the modular oracle test the low bits of the true ``D``.
    """
    mask = (1 << (layer * m)) - 1
    return sum(a - (a & mask) for a in instance.raw_weights)


def mod_offset(a, d: int, b: int):
    """``a`` reduced modulo ``d`` into ``[b, b + d)``; ``d`` is a power of two."""
    a = np.asarray(a)
    if np.issubdtype(a.dtype, np.integer):
        return ((a - b) & (d - 1)) + b
    return np.mod(a - b, d) + b


def phase_factor(mu, r: float = 0.0):
    """Oracle phasor ``-(1 + i mu - r) / (1 - i mu + r)``; ``|mu| = inf`` gives +1."""
    mu = np.asarray(mu, dtype=float)
    with np.errstate(invalid="ignore"):
        chi = -(1.0 + 1j * mu - r) / (1.0 - 1j * mu + r)
    chi = np.where(np.isinf(mu), 1.0 + 0j, chi)
    return chi if chi.ndim else complex(chi)


def oracle_mu(table: ImbalanceTable, spec: OracleSpec) -> np.ndarray:
    d = table.values - spec.target
    if spec.modulus is None:
        return d / (2.0 ** table.k * spec.gamma)
    M = int(spec.modulus)
    # half-imbalance reduced into [-M/2, M/2), kept in D units (divisor 2M)
    return mod_offset(d, 2 * M, -M) / (M * spec.gamma)


def oracle_factors(table: ImbalanceTable, spec: OracleSpec) -> np.ndarray:
    """Per-state complex factors of the oracle described by ``spec``."""
    values = table.values
    if values.ndim == 1 and values.dtype.kind == "i" and values.size >= 1024:
        distinct, inverse = np.unique(values, return_inverse=True)
        if distinct.size * 8 <= values.size:
            sub = ImbalanceTable(distinct, table.k, table.layer, table.m)
            chi = phase_factor(oracle_mu(sub, spec), spec.r)[inverse]
            return np.conj(chi) if spec.conjugate else chi
    chi = phase_factor(oracle_mu(table, spec), spec.r)
    return np.conj(chi) if spec.conjugate else chi


def _check_sizes(state: StateVector, table: ImbalanceTable) -> None:
    if state.amps.shape[-1] != table.values.shape[-1]:
        raise ValueError(
            f"state has {state.amps.shape[-1]} amplitudes but table has {table.values.shape[-1]}")


def apply_oracle(state: StateVector, table: ImbalanceTable, spec: OracleSpec) -> StateVector:
    _check_sizes(state, table)
    state.amps *= oracle_factors(table, spec)
    return state


def apply_ideal_oracle(state: StateVector, table: ImbalanceTable, target: int = 0) -> StateVector:
    _check_sizes(state, table)
    state.amps[..., table.values == target] *= -1
    return state


def walsh_hadamard(state: StateVector) -> StateVector:
    """Normalized fast Walsh-Hadamard transform on the last axis, in place."""
    a = state.amps
    N = a.shape[-1]
    lead = a.shape[:-1]
    h = 1
    while h < N:
        v = a.reshape(lead + (N // (2 * h), 2, h))
        lo = v[..., 0, :]
        hi = v[..., 1, :]
        tmp = lo.copy()
        lo += hi
        tmp -= hi
        hi[...] = tmp
        h *= 2
    a *= 1.0 / np.sqrt(N)
    return state


@functools.lru_cache(maxsize=64)
def _reflection_factors(n: int, gamma_d: float, r_d: float) -> np.ndarray:
    # all-ones weights at k = 0; target W* = 0 means an offset of n on D
    table = ImbalanceTable(imbalance_values(np.ones(n, dtype=np.int64)), 0)
    f = oracle_factors(table, OracleSpec(gamma_d, target=n, r=r_d))
    f.setflags(write=False)
    return f


def reflection_factors(n: int, gamma_d: float, r_d: float = 0.0) -> np.ndarray:
    """Diagonal of the generalized zero-state reflection ``R_gamma``."""
    return _reflection_factors(n, float(gamma_d), float(r_d))


def invert_about_mean(amps: np.ndarray) -> np.ndarray:
    mean = amps.mean(axis=-1, keepdims=True)
    amps *= -1
    amps += 2 * mean
    return amps


def apply_diffusion(state: StateVector, spec: DiffusionSpec = DiffusionSpec(),
                    adjoint: bool = False) -> StateVector:
    """Inversion about the uniform state, ideal or through ``H R_gamma H``."""
    if spec.kind == "ideal":
        invert_about_mean(state.amps)
        return state
    f = reflection_factors(state.n, spec.gamma_d, spec.r_d)
    walsh_hadamard(state)
    state.amps *= np.conj(f) if adjoint else f
    walsh_hadamard(state)
    return state


def grover_pair(state: StateVector, table: ImbalanceTable, oracle: OracleSpec,
                diffusion: DiffusionSpec = DiffusionSpec()) -> StateVector:
    """``V U^dagger V U`` applied to ``state``; the conjugated oracle is the echo partner."""
    f = oracle_factors(table, oracle)
    state.amps *= f
    apply_diffusion(state, diffusion)
    state.amps *= np.conj(f)
    apply_diffusion(state, diffusion)
    return state


def solution_mask(table: ImbalanceTable, target: int = 0) -> np.ndarray:
    return table.values == target


def success_probability(state: StateVector, solutions) -> np.ndarray | float:
    """Probability on the solution set; unnormalized, so lost norm counts as failure."""
    sol = np.asarray(solutions)
    p2 = np.abs(state.amps) ** 2
    if sol.dtype == bool:
        p = np.sum(p2 * sol, axis=-1)
    elif sol.size == 0:
        p = np.zeros(p2.shape[:-1])
    else:
        p = np.sum(p2[..., sol], axis=-1)
    return p if np.ndim(p) else float(p)


def sz_histogram(state: StateVector, table: ImbalanceTable) -> dict:
    """Probability mass per imbalance value ``D``."""
    p2 = np.abs(state.amps) ** 2
    keys, inverse = np.unique(table.values, return_inverse=True)
    mass = np.bincount(inverse, weights=p2)
    return {k.item(): float(v) for k, v in zip(keys, mass)}


def normalized_sz_histogram(state: StateVector, table: ImbalanceTable) -> tuple[dict, bool]:
    """Histogram divided by its ``D = 0`` bin.

    Returns ``(histogram, normalized)``; when the zero bin is empty the raw
    histogram comes back with ``normalized=False``.
    """
    hist = sz_histogram(state, table)
    p0 = hist.get(0, 0.0)
    if p0 <= 0.0:
        return hist, False
    return {d: v / p0 for d, v in hist.items()}, True


def dump_amplitudes(state: StateVector, path) -> None:
    """Debug dump: ``<u4`` header ``n`` then interleaved little-endian float64 re/im."""
    amps = np.ascontiguousarray(state.amps.reshape(-1), dtype=np.complex128)
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", state.n))
        fh.write(amps.view(np.float64).astype("<f8").tobytes())


def load_amplitudes(path) -> StateVector:
    with open(path, "rb") as fh:
        (n,) = struct.unpack("<I", fh.read(4))
        raw = np.frombuffer(fh.read(), dtype="<f8")
    return StateVector(raw.astype(np.float64).view(np.complex128)[: 1 << n].copy())
