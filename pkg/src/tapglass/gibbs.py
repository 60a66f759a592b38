"""Exact and Monte Carlo Gibbs computations, plain and band-restricted.

The measure is P(sigma) = Z^{-1} exp(H(sigma)) on {-1,+1}^n with
H(sigma) = (1/2) sigma^T Jbar sigma + h^T sigma.  The diagonal of Jbar stays
in H (a constant shift of log Z, since sigma_i^2 = 1) but never enters the
single-site conditionals, which depend on the off-diagonal field
l = (Jbar - diag Jbar) sigma + h only.

Exact enumeration walks a Gray code so each state costs O(n) incremental
work.  The 2^n states split into 2^(n-12) aligned segments of 2^12; within a
segment the flip position at local step j is the same for every segment
(the lowest set bit of j), so all segments advance in lockstep as numpy
vectors, each carrying its own running-max-rescaled accumulators for the
partition function, the magnetization, and the band-restricted mass.
Segments are merged in fixed ascending order, so results are bit-stable and
independent of any thread or chunk setting.

Band machinery: for a profile m and delta > 0,

    Band(m, delta) = { sigma : |m . (sigma - m)| / n < delta },

Z_B restricts the Gibbs sum to the band, and Z_c sums exp(H(s) + H(t)) over
ordered pairs of band states whose centered overlap |<s - m, t - m>| / n
exceeds eta.  Z_c <= Z_B^2 always; at high temperature Z_c is exponentially
smaller, which is what the replica geometry tests probe.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from tapglass.ensemble import ModelInstance

MAX_ENUMERATION_N = 24
MAX_PAIR_ENUMERATION_N = 12
MAX_MCMC_DENSE_N = 512

_SEGMENT_BITS = 12
_SWEEP_BLOCK_ELEMENTS = 1 << 16
_CHAIN_CHUNK = 256
_PAIR_CHUNK_ROWS = 512


@dataclass(frozen=True, eq=False)
class BandSpec:
    """A magnetization band: center profile m, width delta, overlap cut eta."""

    center: np.ndarray
    delta: float
    eta: float

    def __post_init__(self):
        if not (np.all(np.isfinite(self.center)) and np.all(np.abs(self.center) <= 1.0)):
            raise ValueError("band center must be a finite profile with entries in [-1, 1]")
        if not self.delta > 0:
            raise ValueError(f"delta must be > 0, got {self.delta}")
        if not self.eta > 0:
            raise ValueError(f"eta must be > 0, got {self.eta}")

    @property
    def has_pair_margin(self) -> bool:
        """eta > 3 delta, the separation the two-scale pair arguments need."""
        return self.eta > 3.0 * self.delta


def in_band(sigma: np.ndarray, band: BandSpec):
    """|m . (sigma - m)| / n < delta, elementwise over a stack of states."""
    sigma = np.asarray(sigma, dtype=float)
    n = band.center.size
    proj = (sigma @ band.center - band.center @ band.center) / n
    return np.abs(proj) < band.delta


def pair_nonorthogonal(sigma: np.ndarray, tau: np.ndarray, band: BandSpec) -> bool:
    """|<sigma - m, tau - m>| / n > eta."""
    n = band.center.size
    return bool(
        abs((sigma - band.center) @ (tau - band.center)) / n > band.eta
    )


def b_n_membership(samples: np.ndarray, band: BandSpec) -> bool:
    """All states in the band and every distinct ordered pair below the overlap cut."""
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if not np.all(in_band(samples, band)):
        return False
    centered = samples - band.center
    overlaps = centered @ centered.T / band.center.size
    off = overlaps[~np.eye(samples.shape[0], dtype=bool)]
    return bool(np.all(np.abs(off) <= band.eta))


# ----------------------------------------------------------------------
# exact enumeration
# ----------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GibbsExact:
    """Exact log partition function and moments from full enumeration."""

    log_z: float
    magnetization: np.ndarray
    pair_correlations: np.ndarray | None


def _flip_positions(bits: int) -> np.ndarray:
    """Gray-walk flip position for local steps 1..2^bits - 1: lowest set bit of j."""
    j = np.arange(1, 1 << bits, dtype=np.int64)
    return np.log2(j & -j).astype(np.int64)


def _enumeration_core(
    j_mat: np.ndarray,
    h: np.ndarray,
    center: np.ndarray,
    delta: float,
) -> tuple[float, np.ndarray, float]:
    """Lockstep Gray-code sweep; returns (log_z, magnetization, log_z_band)."""
    n = h.size
    seg_bits = min(n, _SEGMENT_BITS)
    n_seg = 1 << (n - seg_bits)

    base = np.arange(n_seg, dtype=np.int64) << seg_bits
    gray0 = base ^ (base >> 1)
    sigma = (((gray0[:, None] >> np.arange(n)[None, :]) & 1) * 2.0 - 1.0)
    v = sigma @ j_mat
    energy = 0.5 * np.einsum("ij,ij->i", sigma, v) + sigma @ h
    proj = sigma @ center
    center_sq = float(center @ center)

    shift = energy.copy()
    z_acc = np.ones(n_seg)
    mag_acc = sigma.copy()
    band_acc = (np.abs(proj - center_sq) < n * delta).astype(float)

    for b in _flip_positions(seg_bits):
        s_b = sigma[:, b].copy()
        energy += -2.0 * s_b * v[:, b] + 2.0 * j_mat[b, b] - 2.0 * h[b] * s_b
        v -= (2.0 * s_b)[:, None] * j_mat[b][None, :]
        proj -= 2.0 * s_b * center[b]
        sigma[:, b] = -s_b

        grew = energy > shift
        if grew.any():
            f = np.exp(shift[grew] - energy[grew])
            z_acc[grew] *= f
            band_acc[grew] *= f
            mag_acc[grew] *= f[:, None]
            shift[grew] = energy[grew]
        w = np.exp(energy - shift)
        z_acc += w
        mag_acc += sigma * w[:, None]
        band_acc += np.where(np.abs(proj - center_sq) < n * delta, w, 0.0)

    log_z = float(logsumexp(shift + np.log(z_acc)))
    seg_scale = np.exp(shift - shift.max())
    magnetization = (seg_scale @ mag_acc) / (seg_scale @ z_acc)
    with np.errstate(divide="ignore"):
        band_terms = shift + np.log(band_acc)
    log_z_band = float(logsumexp(band_terms)) if np.any(band_acc > 0) else -np.inf
    return log_z, magnetization, log_z_band


def exact_gibbs(instance: ModelInstance, pair_correlations: bool = False) -> GibbsExact:
    """Full enumeration of the 2^n states (n <= 24; pair moments need n <= 12)."""
    n = instance.n
    if n > MAX_ENUMERATION_N:
        raise ValueError(
            f"exact enumeration is capped at n = {MAX_ENUMERATION_N}, got {n}"
        )
    j_mat = instance.dense_coupling()
    log_z, magnetization, _ = _enumeration_core(
        j_mat, instance.h, np.zeros(n), np.inf
    )
    pair = None
    if pair_correlations:
        if n > MAX_PAIR_ENUMERATION_N:
            raise ValueError(
                f"pair correlations are capped at n = {MAX_PAIR_ENUMERATION_N}, got {n}"
            )
        states, energies = _all_states_energies(j_mat, instance.h)
        w = np.exp(energies - logsumexp(energies))
        pair = (states * w[:, None]).T @ states
    return GibbsExact(log_z=log_z, magnetization=magnetization, pair_correlations=pair)


def restricted_logZ_band(instance: ModelInstance, band: BandSpec) -> float:
    """log of the Gibbs sum over Band(m, delta); -inf when the band is empty."""
    if instance.n > MAX_ENUMERATION_N:
        raise ValueError(
            f"exact enumeration is capped at n = {MAX_ENUMERATION_N}, got {instance.n}"
        )
    if band.center.size != instance.n:
        raise ValueError("band center length must match the instance size")
    j_mat = instance.dense_coupling()
    _, _, log_z_band = _enumeration_core(j_mat, instance.h, band.center, band.delta)
    return log_z_band


def _all_states_energies(j_mat: np.ndarray, h: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = h.size
    codes = np.arange(1 << n, dtype=np.int64)
    states = (((codes[:, None] >> np.arange(n)[None, :]) & 1) * 2.0 - 1.0)
    a = states @ j_mat
    energies = 0.5 * np.einsum("ij,ij->i", a, states) + states @ h
    return states, energies


def restricted_logZ_nonorth_pairs(instance: ModelInstance, band: BandSpec) -> float:
    """log Z_c: exact sum of exp(H(s) + H(t)) over ordered band pairs with
    centered overlap above eta (diagonal pairs included when they qualify).
    Returns -inf when no pair qualifies, so Z_c <= Z_B^2 still holds."""
    n = instance.n
    if n > MAX_PAIR_ENUMERATION_N:
        raise ValueError(
            f"exact pair enumeration is capped at n = {MAX_PAIR_ENUMERATION_N}, got {n}"
        )
    if band.center.size != n:
        raise ValueError("band center length must match the instance size")
    states, energies = _all_states_energies(instance.dense_coupling(), instance.h)
    keep = in_band(states, band)
    centered = states[keep] - band.center
    e_band = energies[keep]
    if e_band.size == 0:
        return -np.inf

    total_max = -np.inf
    total_sum = 0.0
    for start in range(0, e_band.size, _PAIR_CHUNK_ROWS):
        stop = min(start + _PAIR_CHUNK_ROWS, e_band.size)
        overlaps = centered[start:stop] @ centered.T / n
        mask = np.abs(overlaps) > band.eta
        if not mask.any():
            continue
        vals = (e_band[start:stop, None] + e_band[None, :])[mask]
        chunk_max = float(vals.max())
        if chunk_max > total_max:
            if np.isfinite(total_max):
                total_sum *= np.exp(total_max - chunk_max)
            total_max = chunk_max
        total_sum += float(np.exp(vals - total_max).sum())
    if total_sum == 0.0:
        return -np.inf
    return total_max + float(np.log(total_sum))


@dataclass(frozen=True)
class SampledLogZc:
    """Sampled estimate of log Z_c from replica pairs, with a delta-method SE."""

    value: float
    se: float
    pairs_in_band: int
    pairs_violating: int


def sampled_logZ_nonorth_pairs(
    replicas: "ReplicaSet", band: BandSpec, log_z_band: float
) -> SampledLogZc:
    """Estimate log Z_c ~ 2 log Z_B + log g where g is the violating fraction
    among ordered pairs of in-band replicas (the product band-Gibbs measure is
    the proposal).  The SE treats pairs as a binomial count, which understates
    correlation between pairs sharing a replica; it is a scale indicator."""
    samples = replicas.samples
    inside = samples[in_band(samples, band)]
    nb = inside.shape[0]
    if nb < 2:
        return SampledLogZc(value=-np.inf, se=np.nan, pairs_in_band=0, pairs_violating=0)
    centered = inside - band.center
    overlaps = centered @ centered.T / band.center.size
    off = ~np.eye(nb, dtype=bool)
    total = int(off.sum())
    violating = int((np.abs(overlaps[off]) > band.eta).sum())
    if violating == 0:
        return SampledLogZc(value=-np.inf, se=np.nan, pairs_in_band=total, pairs_violating=0)
    g = violating / total
    value = 2.0 * log_z_band + float(np.log(g))
    se = float(np.sqrt((1.0 - g) / (g * total)))
    return SampledLogZc(value=value, se=se, pairs_in_band=total, pairs_violating=violating)


# ----------------------------------------------------------------------
# Glauber dynamics
# ----------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ReplicaSet:
    """Final states and per-chain time-averaged magnetizations of independent chains."""

    samples: np.ndarray      # (n_chains, n), final state of each chain
    chain_mag: np.ndarray    # (n_chains, n), time average over recorded sweeps
    recorded_sweeps: int     # sweeps entering each time average
    sweeps: int
    burn_in: int
    thin: int
    seed: int
    n: int
    beta: float


def glauber_sample(
    instance: ModelInstance,
    sweeps: int,
    burn_in: int,
    thin: int,
    n_chains: int,
    seed: int,
) -> ReplicaSet:
    """Run independent Glauber chains in lockstep and return their final states.

    Each sweep updates sites 0..n-1 in order; site i flips to +1 with
    probability 1/(1 + exp(-2 l_i)) where l = (Jbar - diag Jbar) sigma + h.
    Chains draw from per-chain child streams of the seed, so results do not
    depend on how chains are chunked.  After burn_in, every thin-th sweep's
    state enters the per-chain time average.
    """
    if sweeps < 1 or burn_in < 0 or thin < 1 or n_chains < 1:
        raise ValueError("need sweeps >= 1, burn_in >= 0, thin >= 1, n_chains >= 1")
    n = instance.n
    j_off = instance.dense_coupling(max_n=MAX_MCMC_DENSE_N).copy()
    np.fill_diagonal(j_off, 0.0)
    h = instance.h

    children = np.random.SeedSequence(seed).spawn(n_chains)
    samples = np.empty((n_chains, n))
    chain_mag = np.zeros((n_chains, n))
    total = burn_in + sweeps
    recorded = len(range(burn_in, total, thin))
    block_sweeps = max(1, _SWEEP_BLOCK_ELEMENTS // n)

    for chunk_start in range(0, n_chains, _CHAIN_CHUNK):
        chunk = slice(chunk_start, min(chunk_start + _CHAIN_CHUNK, n_chains))
        rngs = [np.random.default_rng(c) for c in children[chunk]]
        n_c = len(rngs)
        sigma = np.array([rng.integers(0, 2, n) * 2 - 1 for rng in rngs], dtype=float)
        field = sigma @ j_off + h[None, :]
        mag_acc = np.zeros((n_c, n))
        done = 0
        while done < total:
            block = min(block_sweeps, total - done)
            uniforms = np.stack([rng.random((block, n)) for rng in rngs])
            for t in range(block):
                for i in range(n):
                    prob_up = 1.0 / (1.0 + np.exp(-2.0 * field[:, i]))
                    new = np.where(uniforms[:, t, i] < prob_up, 1.0, -1.0)
                    delta_s = new - sigma[:, i]
                    moved = delta_s != 0.0
                    if moved.any():
                        field[moved] += delta_s[moved, None] * j_off[i][None, :]
                        sigma[moved, i] = new[moved]
                sweep_index = done + t
                if sweep_index >= burn_in and (sweep_index - burn_in) % thin == 0:
                    mag_acc += sigma
            done += block
        samples[chunk] = sigma
        chain_mag[chunk] = mag_acc / recorded

    return ReplicaSet(
        samples=samples,
        chain_mag=chain_mag,
        recorded_sweeps=recorded,
        sweeps=sweeps,
        burn_in=burn_in,
        thin=thin,
        seed=seed,
        n=n,
        beta=instance.beta,
    )


@dataclass(frozen=True, eq=False)
class MagnetizationEstimate:
    """Replica-averaged magnetization with per-site standard errors."""

    mean: np.ndarray
    se: np.ndarray
    distance: float | None


def estimate_magnetization(
    replicas: ReplicaSet,
    exact_magnetization: np.ndarray | None = None,
    use_time_average: bool = False,
) -> MagnetizationEstimate:
    """Average over chains; distance is (1/n) || mean - exact ||^2 when a
    reference is supplied.  The time-averaged variant has far lower variance
    per chain and is the right estimator for single-site marginals."""
    source = replicas.chain_mag if use_time_average else replicas.samples
    n_chains = source.shape[0]
    mean = source.mean(axis=0)
    if n_chains > 1:
        se = source.std(axis=0, ddof=1) / np.sqrt(n_chains)
    else:
        se = np.full(source.shape[1], np.nan)
    distance = None
    if exact_magnetization is not None:
        distance = float(np.sum((mean - exact_magnetization) ** 2) / replicas.n)
    return MagnetizationEstimate(mean=mean, se=se, distance=distance)


@dataclass(frozen=True)
class ReplicaGeometryReport:
    """How a replica cloud sits relative to a band."""

    band_fraction: float
    pair_violation_fraction: float
    in_b_n: bool
    distance: float


def replica_geometry_report(replicas: ReplicaSet, band: BandSpec) -> ReplicaGeometryReport:
    samples = replicas.samples
    n_chains = samples.shape[0]
    inside = in_band(samples, band)
    centered = samples - band.center
    overlaps = centered @ centered.T / band.center.size
    off = ~np.eye(n_chains, dtype=bool)
    violation_fraction = float((np.abs(overlaps[off]) > band.eta).mean()) if n_chains > 1 else 0.0
    mean = samples.mean(axis=0)
    distance = float(np.sum((mean - band.center) ** 2) / band.center.size)
    return ReplicaGeometryReport(
        band_fraction=float(inside.mean()),
        pair_violation_fraction=violation_fraction,
        in_b_n=b_n_membership(samples, band),
        distance=distance,
    )
