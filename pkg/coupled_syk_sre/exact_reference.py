"""
Exact small-N reference for the stabilizer Rényi entropy.

Dense diagonalization of the two-cluster Majorana model, the Majorana
spectrum c_v = tr[rho Psi_v], the direct M2 / S2 evaluation and the
four-copy replicated trace Z_SRE = tr[(e^{-beta H})^{x4} prod_m (1 + 4 psi psi psi psi)].

Every Jordan-Wigner Majorana is a monomial matrix (one nonzero per column),
so Majorana strings are stored as (permutation, phase) pairs and traces
against them cost O(dim) instead of a matrix product.
"""

from __future__ import annotations

import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg as la

from coupled_syk_sre.domain import (
    DimensionCapError,
    DisorderSampleError,
    ModelParams,
    OracleMismatchError,
    ParameterError,
    SectorLabel,
    SpectrumPhaseError,
)

logger = logging.getLogger(__name__)

MAX_DENSE_MAJORANAS = 16
MAX_REPLICATED_PER_SIDE = 4


# ============================================================================
# Jordan-Wigner Majoranas
# ============================================================================

@dataclass(frozen=True)
class Monomial:
    """A matrix with one nonzero per column: M|b> = phase[b] |perm[b]>."""

    perm: np.ndarray
    phase: np.ndarray

    def __matmul__(self, other: Monomial) -> Monomial:
        return Monomial(self.perm[other.perm], other.phase * self.phase[other.perm])

    def scaled(self, factor: complex) -> Monomial:
        return Monomial(self.perm, self.phase * factor)

    def trace_against(self, rho: np.ndarray) -> complex:
        """tr[rho M]."""
        cols = np.arange(self.perm.size)
        return complex(np.sum(self.phase * rho[cols, self.perm]))

    def dense(self) -> np.ndarray:
        out = np.zeros((self.perm.size, self.perm.size), dtype=complex)
        out[self.perm, np.arange(self.perm.size)] = self.phase
        return out

    @classmethod
    def identity(cls, dim: int) -> Monomial:
        return cls(np.arange(dim), np.ones(dim, dtype=complex))


def jordan_wigner_monomials(n_qubits: int) -> List[Monomial]:
    """
    Majoranas psi_{2j} = Z..Z X_j / sqrt(2), psi_{2j+1} = Z..Z Y_j / sqrt(2).

    Qubit 0 is the most significant bit of the basis index (np.kron order).
    """
    dim = 2 ** n_qubits
    basis = np.arange(dim)
    bits = [(basis >> (n_qubits - 1 - j)) & 1 for j in range(n_qubits)]
    monomials = []
    string_parity = np.zeros(dim, dtype=int)
    for j in range(n_qubits):
        flipped = basis ^ (1 << (n_qubits - 1 - j))
        sign = np.where(string_parity % 2, -1.0, 1.0)
        # Y|0> = i|1>, Y|1> = -i|0>
        y_phase = 1j * np.where(bits[j], -1.0, 1.0)
        monomials.append(Monomial(flipped, sign.astype(complex) / math.sqrt(2)))
        monomials.append(Monomial(flipped, sign * y_phase / math.sqrt(2)))
        string_parity = string_parity + bits[j]
    return monomials


@dataclass(frozen=True)
class MajoranaOps:
    """Dense Majorana matrices with {psi_m, psi_n} = delta_mn."""

    n_total: int
    """Number of Majoranas (2N)"""

    ops: List[np.ndarray]
    """psi_m as 2^N x 2^N Hermitian matrices"""

    monomials: List[Monomial] = field(repr=False)
    """The same operators in (permutation, phase) form"""

    @property
    def n_qubits(self) -> int:
        return self.n_total // 2

    @property
    def dim(self) -> int:
        return 2 ** self.n_qubits


def build_majorana_ops(n_total: int) -> MajoranaOps:
    """
    Build 2N Jordan-Wigner Majoranas.

    Args:
        n_total: number of Majoranas, even, 2 <= n_total <= 16

    Raises:
        DimensionCapError if n_total exceeds the dense cap
    """
    if n_total > MAX_DENSE_MAJORANAS:
        raise DimensionCapError(f"{n_total} Majoranas exceed the dense cap of {MAX_DENSE_MAJORANAS}")
    if n_total < 2 or n_total % 2:
        raise ParameterError(f"n_total must be even and >= 2, got {n_total}")
    monomials = jordan_wigner_monomials(n_total // 2)
    return MajoranaOps(n_total=n_total, ops=[m.dense() for m in monomials], monomials=monomials)


# ============================================================================
# Majorana strings
# ============================================================================

@dataclass(frozen=True)
class MajoranaString:
    """Hermitian, self-inverse string Psi_v = i^{|v|(|v|-1)/2} 2^{|v|/2} prod psi_m^{v_m}."""

    v: Tuple[int, ...]
    """Occupation bits, one per Majorana"""

    monomial: Monomial = field(repr=False)

    @property
    def weight(self) -> int:
        return sum(self.v)

    @property
    def matrix(self) -> np.ndarray:
        return self.monomial.dense()


def string_phase(weight: int) -> complex:
    return (1j ** ((weight * (weight - 1) // 2) % 4)) * 2 ** (weight / 2)


def majorana_string(ops: MajoranaOps, v: Sequence[int]) -> MajoranaString:
    """Psi_v for an occupation vector v of length 2N."""
    if len(v) != ops.n_total:
        raise ParameterError(f"string of length {len(v)} for {ops.n_total} Majoranas")
    product = Monomial.identity(ops.dim)
    for m, bit in enumerate(v):
        if bit:
            product = product @ ops.monomials[m]
    return MajoranaString(tuple(int(b) for b in v), product.scaled(string_phase(sum(v))))


def _mask_bits(mask: int, length: int) -> Tuple[int, ...]:
    return tuple((mask >> m) & 1 for m in range(length))


# ============================================================================
# Couplings and Hamiltonian
# ============================================================================

@dataclass(frozen=True)
class CouplingSample:
    """One draw of J_ijkl (i<j<k<l), shared by both clusters."""

    n_per_side: int
    indices: np.ndarray
    """(K, 4) array of i<j<k<l"""

    values: np.ndarray
    """(K,) Gaussian couplings with variance 6 J^2 / N^3"""

    seed: int

    def as_dict(self) -> Dict[Tuple[int, int, int, int], float]:
        return {tuple(int(x) for x in idx): float(val) for idx, val in zip(self.indices, self.values)}


def draw_couplings(n_per_side: int, coupling_j: float, seed: int) -> CouplingSample:
    """Draw J_ijkl from numpy's PCG64 generator seeded with `seed`."""
    indices = np.array(list(itertools.combinations(range(n_per_side), 4)), dtype=int).reshape(-1, 4)
    rng = np.random.default_rng(seed)
    scale = math.sqrt(6.0 * coupling_j ** 2 / n_per_side ** 3)
    values = rng.standard_normal(len(indices)) * scale
    return CouplingSample(n_per_side=n_per_side, indices=indices, values=values, seed=seed)


def left_index(j: int) -> int:
    """Position of psi_{L,j}; Majoranas are interleaved (L,0),(R,0),(L,1),..."""
    return 2 * j


def right_index(j: int) -> int:
    return 2 * j + 1


def build_hamiltonian(params: ModelParams, sample: CouplingSample, ops: MajoranaOps) -> np.ndarray:
    """
    H = sum J_ijkl (psi_L^4 + psi_R^4) + i mu sum_j psi_{L,j} psi_{R,j}.

    Raises:
        ParameterError on mismatched sizes
    """
    n = params.n_per_side
    if ops.n_total != 2 * n or sample.n_per_side != n:
        raise ParameterError(
            f"size mismatch: {ops.n_total} Majoranas, sample for N={sample.n_per_side}, params N={n}"
        )
    psi = ops.ops
    h = np.zeros((ops.dim, ops.dim), dtype=complex)
    for (i, j, k, l), coupling in zip(sample.indices, sample.values):
        for side in (left_index, right_index):
            h += coupling * (psi[side(i)] @ psi[side(j)] @ psi[side(k)] @ psi[side(l)])
    for j in range(n):
        h += 1j * params.hopping_mu * (psi[left_index(j)] @ psi[right_index(j)])
    drift = np.max(np.abs(h - h.conj().T)) if h.size else 0.0
    if drift > 1e-12 * max(1.0, np.max(np.abs(h))):
        raise ParameterError(f"Hamiltonian is not Hermitian (drift {drift:.2e})")
    return 0.5 * (h + h.conj().T)


# ============================================================================
# Thermal states
# ============================================================================

def _check_hermitian(h: np.ndarray) -> None:
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise ParameterError(f"expected a square matrix, got shape {h.shape}")
    scale = max(1.0, float(np.max(np.abs(h)))) if h.size else 1.0
    if np.max(np.abs(h - h.conj().T)) > 1e-10 * scale:
        raise ParameterError("input matrix is not Hermitian")


def boltzmann_operator(h: np.ndarray, beta: float) -> Tuple[np.ndarray, float]:
    """
    Shifted Boltzmann operator.

    Returns:
        (B, offset) with e^{-beta H} = B * exp(-offset); B has largest eigenvalue 1
    """
    _check_hermitian(h)
    if not math.isfinite(beta) or beta < 0:
        raise ParameterError(f"beta must be finite and non-negative, got {beta}")
    energies, vectors = la.eigh(h)
    offset = beta * energies[0]
    weights = np.exp(-beta * (energies - energies[0]))
    return (vectors * weights) @ vectors.conj().T, float(offset)


def log_partition(h: np.ndarray, beta: float) -> float:
    """ln tr e^{-beta H}."""
    _check_hermitian(h)
    energies = la.eigvalsh(h)
    shifted = -beta * (energies - energies[0])
    return float(-beta * energies[0] + np.log(np.sum(np.exp(shifted))))


def thermal_state(h: np.ndarray, beta: float) -> np.ndarray:
    """rho = e^{-beta H} / Z, computed with the ground-state shift."""
    boltzmann, _ = boltzmann_operator(h, beta)
    return boltzmann / np.trace(boltzmann).real


# ============================================================================
# Majorana spectrum and direct SRE
# ============================================================================

@dataclass(frozen=True)
class MajoranaSpectrum:
    """c_v = tr[rho Psi_v] over the even-weight strings (odd ones vanish)."""

    n_total: int
    masks: np.ndarray
    """Bit masks of v (bit m <-> v_m)"""

    values: np.ndarray
    """Real coefficients aligned with masks"""

    @property
    def n_qubits(self) -> int:
        return self.n_total // 2

    @property
    def coefficients(self) -> Dict[Tuple[int, ...], float]:
        return {_mask_bits(int(m), self.n_total): float(c) for m, c in zip(self.masks, self.values)}

    def coefficient(self, v: Sequence[int]) -> float:
        if sum(v) % 2:
            return 0.0
        mask = sum(int(bit) << m for m, bit in enumerate(v))
        position = np.searchsorted(self.masks, mask)
        return float(self.values[position])

    def moment(self, power: int) -> float:
        return float(np.sum(self.values ** power))


def _even_masks(n_total: int) -> np.ndarray:
    masks = np.arange(2 ** n_total)
    weights = np.array([bin(m).count("1") for m in masks])
    return masks[weights % 2 == 0]


def _string_monomial(ops: MajoranaOps, mask: int) -> Monomial:
    product = Monomial.identity(ops.dim)
    weight = 0
    for m in range(ops.n_total):
        if (mask >> m) & 1:
            product = product @ ops.monomials[m]
            weight += 1
    return product.scaled(string_phase(weight))


def majorana_spectrum(
    rho: np.ndarray,
    ops: MajoranaOps,
    odd_check_fraction: float = 0.01,
    check_seed: int = 0,
) -> MajoranaSpectrum:
    """
    Compute every even-weight c_v and spot-check that odd ones vanish.

    Raises:
        SpectrumPhaseError if any c_v has |Im| > 1e-9
        ParameterError if a sampled odd-weight coefficient is nonzero
    """
    if rho.shape != (ops.dim, ops.dim):
        raise ParameterError(f"rho has shape {rho.shape}, expected {(ops.dim, ops.dim)}")
    masks = _even_masks(ops.n_total)
    raw = np.array([_string_monomial(ops, int(m)).trace_against(rho) for m in masks])
    worst = float(np.max(np.abs(raw.imag)))
    if worst > 1e-9:
        raise SpectrumPhaseError(f"imaginary Majorana-spectrum component {worst:.3e}")
    if worst > 1e-12:
        logger.debug("discarding imaginary parts up to %.2e", worst)

    odd = np.setdiff1d(np.arange(2 ** ops.n_total), masks)
    rng = np.random.default_rng(check_seed)
    sample = rng.choice(odd, size=max(1, int(round(odd_check_fraction * odd.size))), replace=False)
    for mask in sample:
        value = _string_monomial(ops, int(mask)).trace_against(rho)
        if abs(value) > 1e-9:
            raise ParameterError(f"odd string {int(mask):#x} has c_v={value:.3e}; state is not parity-even")
    return MajoranaSpectrum(n_total=ops.n_total, masks=masks, values=raw.real.copy())


@dataclass(frozen=True)
class SreValues:
    """M2, S2 and the SRE M2 - S2 of one density matrix."""

    m2: float
    s2: float
    m2_tilde: float

    def per_qubit(self, n_qubits: int) -> SreValues:
        return SreValues(self.m2 / n_qubits, self.s2 / n_qubits, self.m2_tilde / n_qubits)

    def to_dict(self) -> Dict[str, float]:
        return {"m2": self.m2, "s2": self.s2, "m2_tilde": self.m2_tilde}


def sre_direct(spectrum: MajoranaSpectrum, rho: np.ndarray) -> SreValues:
    """M2 = -ln(2^{-N} sum c_v^4), S2 = -ln tr rho^2."""
    fourth = spectrum.moment(4)
    if fourth <= 0:
        raise SpectrumPhaseError("sum of c_v^4 vanished; c_0 must be 1")
    m2 = -math.log(fourth) + spectrum.n_qubits * math.log(2)
    s2 = -math.log(float(np.real(np.sum(rho * rho.T))))
    return SreValues(m2=m2, s2=s2, m2_tilde=m2 - s2)


def free_pair_m2(beta_mu: float) -> float:
    """M2 of one decoupled L/R pair at J = 0: -ln((1 + tanh^4(beta mu / 2)) / 2)."""
    if beta_mu < 0:
        raise ParameterError(f"beta*mu must be non-negative, got {beta_mu}")
    t = math.tanh(beta_mu / 2)
    return math.log(2) - math.log1p(t ** 4)


# ============================================================================
# Four-copy replicated trace
# ============================================================================

@dataclass(frozen=True)
class ReplicatedSre:
    """Result of the four-copy trace."""

    s_sre: float
    """-ln Z_SRE"""

    s_beta: float
    """-ln Z_beta"""

    m2: float
    """S_SRE - 4 S_beta + N_q ln 2"""


def sre_replicated(
    rho_unnorm: np.ndarray,
    n_per_side: int,
    log_offset: float = 0.0,
    check_against: Optional[SreValues] = None,
    tolerance: float = 1e-8,
) -> ReplicatedSre:
    """
    Evaluate Z_SRE = tr[(e^{-beta H})^{x4} prod_m (1 + 4 psi^1 psi^2 psi^3 psi^4)].

    Args:
        rho_unnorm: e^{-beta H} up to the factor exp(-log_offset)
        n_per_side: N (qubit count of one copy)
        log_offset: see boltzmann_operator
        check_against: direct evaluation of the same state; a disagreement
            above `tolerance` in M2 raises OracleMismatchError
    """
    if n_per_side > MAX_REPLICATED_PER_SIDE:
        raise DimensionCapError(
            f"four-copy trace needs 2^{4 * n_per_side} states; cap is N <= {MAX_REPLICATED_PER_SIDE}"
        )
    d = 2 ** n_per_side
    if rho_unnorm.shape != (d, d):
        raise ParameterError(f"operator shape {rho_unnorm.shape} does not match N={n_per_side}")

    n_sites = 2 * n_per_side
    big = jordan_wigner_monomials(4 * n_per_side)
    dim = d ** 4
    quartets = []
    for m in range(n_sites):
        q = big[m] @ big[n_sites + m] @ big[2 * n_sites + m] @ big[3 * n_sites + m]
        quartets.append(q.scaled(4.0))

    basis = np.arange(dim)
    digits = [(basis >> (n_per_side * (3 - a))) & (d - 1) for a in range(4)]

    def kron4_trace(mono: Monomial) -> complex:
        target = [(mono.perm >> (n_per_side * (3 - a))) & (d - 1) for a in range(4)]
        entries = np.ones(dim, dtype=complex)
        for a in range(4):
            entries = entries * rho_unnorm[digits[a], target[a]]
        return complex(np.sum(mono.phase * entries))

    z_sre = 0.0 + 0.0j
    stack = [(0, Monomial.identity(dim))]
    while stack:
        m, product = stack.pop()
        if m == n_sites:
            z_sre += kron4_trace(product)
            continue
        stack.append((m + 1, product))
        stack.append((m + 1, product @ quartets[m]))
    if abs(z_sre.imag) > 1e-9 * abs(z_sre):
        raise SpectrumPhaseError(f"Z_SRE has imaginary part {z_sre.imag:.3e}")

    s_sre = -math.log(z_sre.real) + 4 * log_offset
    s_beta = -math.log(float(np.trace(rho_unnorm).real)) + log_offset
    m2 = s_sre - 4 * s_beta + n_per_side * math.log(2)
    if check_against is not None and abs(m2 - check_against.m2) > tolerance:
        raise OracleMismatchError(f"replicated M2={m2:.12f} vs direct M2={check_against.m2:.12f}")
    return ReplicatedSre(s_sre=s_sre, s_beta=s_beta, m2=m2)


# ============================================================================
# Single-sample pipeline and disorder averaging
# ============================================================================

def ed_sre(params: ModelParams, seed: int, replicated: bool = False) -> SreValues:
    """M2, S2, M2 - S2 of one disorder sample by exact diagonalization."""
    ops = build_majorana_ops(2 * params.n_per_side)
    sample = draw_couplings(params.n_per_side, params.coupling_j, seed)
    h = build_hamiltonian(params, sample, ops)
    boltzmann, offset = boltzmann_operator(h, params.beta)
    rho = boltzmann / np.trace(boltzmann).real
    values = sre_direct(majorana_spectrum(rho, ops), rho)
    if replicated:
        sre_replicated(boltzmann, params.n_per_side, log_offset=offset, check_against=values)
    return values


@dataclass(frozen=True)
class DisorderAverage:
    """Mean and standard error over disorder samples."""

    mean: float
    stderr: float
    values: np.ndarray
    seeds: Tuple[int, ...]

    def to_dict(self) -> Dict:
        return {
            "mean": self.mean,
            "stderr": self.stderr,
            "values": [float(v) for v in self.values],
            "seeds": list(self.seeds),
        }


def disorder_average(
    estimator: Callable[[int], float],
    n_samples: int,
    seed: int,
    max_workers: int = 1,
) -> DisorderAverage:
    """
    Average estimator(seed + k) over k = 0..n_samples-1.

    Samples may run on a thread pool; the reduction order is the sample index.

    Raises:
        DisorderSampleError naming the failing sample offset
    """
    if n_samples < 2:
        raise ParameterError(f"need at least 2 disorder samples, got {n_samples}")
    seeds = tuple(seed + k for k in range(n_samples))

    def run(offset: int) -> float:
        try:
            return float(estimator(seeds[offset]))
        except Exception as exc:
            raise DisorderSampleError(offset, seeds[offset], exc) from exc

    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            values = np.array(list(pool.map(run, range(n_samples))))
    else:
        values = np.array([run(k) for k in range(n_samples)])
    stderr = float(np.std(values, ddof=1) / math.sqrt(n_samples))
    return DisorderAverage(mean=float(np.mean(values)), stderr=stderr, values=values, seeds=seeds)


# ============================================================================
# One L/R pair on four twisted copies (free reference for the large-N solver)
# ============================================================================

def free_sector_log_weight(beta: float, mu: float, sector: SectorLabel) -> float:
    """
    ln z_sigma for one free L/R pair: z = (Z^4 / 4) (1 + sigma_L sigma_R tanh^2(beta mu / 2))^2.

    The four sectors sum to Z^4 (1 + tanh^4), the free-pair Z_SRE.
    """
    half = beta * mu / 2
    log_z = half + math.log1p(math.exp(-2 * half))
    t2 = math.tanh(half) ** 2
    return 4 * log_z - math.log(4.0) + 2 * math.log1p(sector.product * t2)


def replica_flavor(replica: int, side: int) -> int:
    """Index of psi_side^(replica) among the 8 flavors of one twisted pair."""
    return 2 * replica + side


def twisted_pair_correlators(
    beta: float,
    mu: float,
    sector: Optional[SectorLabel],
    n_replicas: int = 4,
) -> Tuple[np.ndarray, float]:
    """
    Equal-time correlators C_ab = <psi_a psi_b> of one free pair on the twisted trace.

    The trace is tr[e^{-beta H_tot} S] with S the product of fermionic SWAPs
    exp(pi/2 sigma_s psi_s^(1) psi_s^(2)) exp(pi/2 sigma_s psi_s^(3) psi_s^(4));
    sector=None gives the untwisted thermal trace.

    Returns:
        (C, ln tr[rho_tot S]) with rho_tot the normalized Boltzmann operator
    """
    ops = build_majorana_ops(2 * n_replicas)
    psi = ops.ops
    h = sum(1j * mu * psi[replica_flavor(a, 0)] @ psi[replica_flavor(a, 1)] for a in range(n_replicas))
    h = 0.5 * (h + h.conj().T)
    rho = thermal_state(h, beta)
    twist = np.eye(ops.dim, dtype=complex)
    if sector is not None:
        if n_replicas != 4:
            raise ParameterError("the SWAP twist joins replicas (1,2) and (3,4)")
        for side, sigma in ((0, sector.sigma_l), (1, sector.sigma_r)):
            for first, second in ((0, 1), (2, 3)):
                a, b = replica_flavor(first, side), replica_flavor(second, side)
                swap = (np.eye(ops.dim) + 2 * sigma * psi[a] @ psi[b]) / math.sqrt(2)
                twist = twist @ swap
    weighted = rho @ twist
    norm = np.trace(weighted)
    n = ops.n_total
    corr = np.empty((n, n), dtype=complex)
    for a in range(n):
        for b in range(n):
            corr[a, b] = np.trace(weighted @ psi[a] @ psi[b]) / norm
    return corr, float(math.log(norm.real))
