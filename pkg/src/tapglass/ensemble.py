"""Orthogonally invariant coupling ensembles and model instances.

An instance of size n consists of Jbar = O^T Dbar O with O uniform on SO(n),
Dbar = beta * diag(quantiles of the spectral law), plus an external field h
(deterministic quantiles of the field law by default, iid draws on request).
Jbar is never materialized at scale; `ModelInstance.apply_jbar` applies it in
O(n^2) through the factors.

`conditional_haar_so` samples O uniformly from {O in SO(n): O B = A} for
n x k matrices with A^T A = B^T B, via

    O = A (A^T A)^{-1} B^T + V_Aperp Otilde V_Bperp^T,

where V_Aperp, V_Bperp complete the column spans orthogonally (deterministic
QR completions, sign-fixed, det +1) and Otilde is Haar on SO(n - k).  This is
the resampling step behind conditioning an invariant ensemble on a set of
matrix-vector observations.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from tapglass.fixed_point import FieldLaw
from tapglass.spectral import SpectralLaw

ORTHOGONALITY_TOL = 1e-10
_DET_TOL = 1e-8
_GRAM_MATCH_TOL = 1e-8

FIELD_MODE_QUANTILE = "quantile"
FIELD_MODE_IID = "iid"


def _rng_from(seed) -> np.random.Generator:
    """Accept an int, a SeedSequence, or a ready Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def haar_orthogonal(n: int, seed) -> np.ndarray:
    """Haar-uniform draw from O(n): QR of a Gaussian matrix with the R-diagonal
    sign convention (unique QR with positive diagonal)."""
    if n < 1:
        raise ValueError(f"need n >= 1, got {n}")
    rng = _rng_from(seed)
    m = rng.standard_normal((n, n))
    q, r = np.linalg.qr(m)
    signs = np.where(np.diag(r) < 0, -1.0, 1.0)
    return q * signs[None, :]


def haar_so(n: int, seed) -> np.ndarray:
    """Haar-uniform draw from SO(n): the O(n) draw with the last column negated
    when the determinant is -1."""
    o = haar_orthogonal(n, seed)
    sign, _ = np.linalg.slogdet(o)
    if sign < 0:
        o = o.copy()
        o[:, -1] = -o[:, -1]
    return o


@dataclass(frozen=True, eq=False)
class ModelInstance:
    """One realized model: couplings in factored form O^T diag(d_bar) O plus field h.

    Invariants are checked on construction: O orthogonal with det +1, shapes
    consistent, entries finite.
    """

    n: int
    beta: float
    d_bar: np.ndarray
    O: np.ndarray
    h: np.ndarray
    seed: int

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"need n >= 1, got {self.n}")
        if self.O.shape != (self.n, self.n):
            raise ValueError(f"O must be {self.n} x {self.n}, got {self.O.shape}")
        if self.d_bar.shape != (self.n,) or self.h.shape != (self.n,):
            raise ValueError("d_bar and h must be length-n vectors")
        for arr in (self.d_bar, self.O, self.h):
            if not np.all(np.isfinite(arr)):
                raise ValueError("instance arrays must be finite")
        gram_err = np.abs(self.O.T @ self.O - np.eye(self.n)).max()
        if gram_err > ORTHOGONALITY_TOL:
            raise ValueError(f"O is not orthogonal: max |O^T O - I| = {gram_err}")
        sign, logdet = np.linalg.slogdet(self.O)
        if sign <= 0 or abs(logdet) > _DET_TOL:
            raise ValueError("O must have determinant +1")

    def apply_jbar(self, v: np.ndarray) -> np.ndarray:
        """Jbar v = O^T (d_bar * (O v)), for a vector or a stack of columns."""
        w = self.O @ v
        if w.ndim == 1:
            w = self.d_bar * w
        else:
            w = self.d_bar[:, None] * w
        return self.O.T @ w

    def dense_coupling(self, max_n: int = 512) -> np.ndarray:
        """Materialize Jbar as a dense symmetric matrix (small n only)."""
        if self.n > max_n:
            raise ValueError(
                f"refusing to materialize dense couplings at n={self.n} > {max_n}"
            )
        return self.O.T @ (self.d_bar[:, None] * self.O)


def build_instance(
    n: int,
    beta: float,
    law: SpectralLaw,
    field: FieldLaw,
    seed: int,
    field_mode: str = FIELD_MODE_QUANTILE,
) -> ModelInstance:
    """Draw O ~ Haar(SO(n)) and assemble the instance.

    The spectrum is the deterministic quantile grid of the law scaled by beta;
    the field is the quantile grid of the field law, or iid draws from it when
    field_mode = "iid".  The two consumers get independent child streams of
    the seed, so the coupling draw is identical across field modes.
    """
    if n < 1:
        raise ValueError(f"need n >= 1, got {n}")
    if not beta > 0:
        raise ValueError(f"need beta > 0, got {beta}")
    if not law.is_standardized():
        raise ValueError("spectral law must be standardized (mean 0, variance 1)")
    if field_mode not in (FIELD_MODE_QUANTILE, FIELD_MODE_IID):
        raise ValueError(f"unknown field_mode {field_mode!r}")

    o_seed, h_seed = np.random.SeedSequence(seed).spawn(2)
    o = haar_so(n, o_seed)
    d_bar = beta * law.quantiles(n)
    if field_mode == FIELD_MODE_QUANTILE:
        h = field.quantiles(n)
    else:
        h = field.sample(np.random.default_rng(h_seed), n)
    return ModelInstance(n=n, beta=beta, d_bar=d_bar, O=o, h=np.asarray(h, float), seed=int(seed))


def conditional_haar_so(A: np.ndarray, B: np.ndarray, seed) -> np.ndarray:
    """Uniform draw from {O in SO(n) : O B = A} for n x k matrices (k < n).

    Requires A full column rank and B^T B = A^T A (within 1e-8 in max norm);
    the output satisfies O B = A to high precision and is Haar-distributed on
    the fiber, by invariance of the Haar draw on the (n-k)-dimensional
    complement.
    """
    a = np.asarray(A, dtype=float)
    b = np.asarray(B, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    if a.ndim != 2 or a.shape != b.shape:
        raise ValueError(f"A and B must share an n x k shape, got {a.shape} vs {b.shape}")
    n, k = a.shape
    if not k < n:
        raise ValueError(f"need k < n, got k={k}, n={n}")

    gram_a = a.T @ a
    gram_b = b.T @ b
    if np.abs(gram_a - gram_b).max() > _GRAM_MATCH_TOL:
        raise ValueError("A and B must satisfy B^T B = A^T A within 1e-8")
    cond = np.linalg.cond(gram_a)
    if not np.isfinite(cond) or cond > 1e12:
        raise ValueError("A must have full column rank")

    exact_part = a @ np.linalg.solve(gram_a, b.T)
    perp_a = _orthogonal_complement(a)
    perp_b = _orthogonal_complement(b)
    o_tilde = haar_so(n - k, seed)
    o = exact_part + perp_a @ o_tilde @ perp_b.T
    # det discipline: both completions are det-+1 bases and Otilde is in
    # SO(n-k), so o lands in SO(n) whenever the Grams match exactly.
    return o


def _orthogonal_complement(a: np.ndarray) -> np.ndarray:
    """Deterministic orthonormal basis of range(a)^perp with overall det +1.

    Complete QR with the positive-diagonal sign convention on the leading k
    columns; if the full basis has det -1 the last complement column is
    flipped (k < n guarantees the complement is nonempty).
    """
    n, k = a.shape
    q, r = np.linalg.qr(a, mode="complete")
    signs = np.where(np.diag(r)[:k] < 0, -1.0, 1.0)
    q[:, :k] *= signs[None, :]
    sign, _ = np.linalg.slogdet(q)
    if sign < 0:
        q[:, -1] = -q[:, -1]
    return q[:, k:]


def save_instance(instance: ModelInstance, path) -> None:
    """Persist all defining arrays; the coupling matrix itself is re-derivable."""
    np.savez(
        Path(path),
        n=np.array(instance.n),
        beta=np.array(instance.beta),
        d_bar=instance.d_bar,
        O=instance.O,
        h=instance.h,
        seed=np.array(instance.seed),
    )


def load_instance(path) -> ModelInstance:
    with np.load(Path(path)) as data:
        return ModelInstance(
            n=int(data["n"]),
            beta=float(data["beta"]),
            d_bar=data["d_bar"].copy(),
            O=data["O"].copy(),
            h=data["h"].copy(),
            seed=int(data["seed"]),
        )
