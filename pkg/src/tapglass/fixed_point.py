"""Replica-symmetric fixed point and the constants derived from it.

With the inverse temperature absorbed into the spectrum (Rbar, Gbar are the
rescaled transforms from `spectral.RescaledLaw`), the scalar overlap solves

    q = E[ tanh(H + sigma(q) G)^2 ],    sigma(q)^2 = q * Rbar'(1 - q),

where G ~ N(0, 1) and H follows the external-field law.  From the solution
q* the model's limiting constants are

    sigma*^2 = q* Rbar'(1 - q*)
    lambda*  = Rbar(1 - q*) + 1/(1 - q*)     so that Gbar(lambda*) = 1 - q*
    a*       = Rbar(1 - q*)                  (Onsager coefficient)
    kappa*   = 1 / (1 - (1 - q*)^2 Rbar'(1 - q*)) - 1
    delta*   = sigma*^2 / kappa*             ( = q*/(1-q*)^2 - sigma*^2 )
    psi_rs   = E[log 2cosh(H + sigma* G)] + (q*/2) Rbar(1 - q*)
               - (q*(1 - q*)/2) Rbar'(1 - q*) + (1/2) int_0^{1-q*} Rbar ,

the last being the limit of the free energy per site.  Gaussian expectations
use 61-node Gauss-Hermite quadrature throughout; the fixed point is found by
damped iteration.

`theoretical_delta` grows the message-passing state-evolution covariance
Delta_t column by column with common random numbers, so that empirical AMP
Gram matrices have a like-for-like target at finite Monte Carlo size.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial.hermite import hermgauss

from tapglass.spectral import DomainError, RescaledLaw, SpectralLaw

GH_NODES = 61
_gh_x, _gh_w = hermgauss(GH_NODES)
GAUSS_NODES = np.sqrt(2.0) * _gh_x          # nodes for N(0,1) expectations
GAUSS_WEIGHTS = _gh_w / np.sqrt(np.pi)

DEFAULT_DAMPING = 0.5
DEFAULT_TOL = 1e-12
DEFAULT_MAX_ITER = 10_000

FIELD_CONSTANT = "constant"
FIELD_GAUSSIAN = "gaussian"
FIELD_EMPIRICAL = "empirical"


class BetaTooLargeError(ValueError):
    """The temperature is outside the regime where the fixed-point constants exist."""


@dataclass(frozen=True, eq=False)
class FieldLaw:
    """Law of the external field entries.

    kinds: constant value, gaussian (mean, sd), or finite atoms.  Quadrature
    atoms discretize the law exactly (constant, empirical) or via 61-node
    Gauss-Hermite (gaussian).
    """

    kind: str
    value: float = 0.0
    sd: float = 0.0
    atoms: np.ndarray | None = None

    def quad_atoms(self) -> tuple[np.ndarray, np.ndarray]:
        """(values, weights) for expectations over the field law."""
        if self.kind == FIELD_CONSTANT:
            return np.array([self.value]), np.array([1.0])
        if self.kind == FIELD_GAUSSIAN:
            return self.value + self.sd * GAUSS_NODES, GAUSS_WEIGHTS.copy()
        return self.atoms[:, 0].copy(), self.atoms[:, 1].copy()

    def quantiles(self, n: int) -> np.ndarray:
        """Deterministic grid F^{-1}((i - 1/2)/n), ascending."""
        if n < 1:
            raise ValueError("quantiles needs n >= 1")
        p = (np.arange(1, n + 1) - 0.5) / n
        if self.kind == FIELD_CONSTANT:
            return np.full(n, self.value)
        if self.kind == FIELD_GAUSSIAN:
            from scipy.stats import norm

            return self.value + self.sd * norm.ppf(p)
        x, w = self.atoms[:, 0], self.atoms[:, 1]
        idx = np.minimum(np.searchsorted(np.cumsum(w), p, side="left"), x.size - 1)
        return x[idx]

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.kind == FIELD_CONSTANT:
            return np.full(size, self.value)
        if self.kind == FIELD_GAUSSIAN:
            return self.value + self.sd * rng.standard_normal(size)
        return rng.choice(self.atoms[:, 0], size=size, p=self.atoms[:, 1])

    def mean(self) -> float:
        v, w = self.quad_atoms()
        return float(w @ v)

    def to_spec(self) -> dict:
        if self.kind == FIELD_CONSTANT:
            return {"kind": FIELD_CONSTANT, "value": self.value}
        if self.kind == FIELD_GAUSSIAN:
            return {"kind": FIELD_GAUSSIAN, "mean": self.value, "sd": self.sd}
        return {
            "kind": FIELD_EMPIRICAL,
            "locations": self.atoms[:, 0].tolist(),
            "weights": self.atoms[:, 1].tolist(),
        }


def constant_field(value: float) -> FieldLaw:
    return FieldLaw(FIELD_CONSTANT, value=float(value))


def gaussian_field(mean: float, sd: float) -> FieldLaw:
    if sd < 0:
        raise ValueError(f"gaussian field needs sd >= 0, got {sd}")
    return FieldLaw(FIELD_GAUSSIAN, value=float(mean), sd=float(sd))


def empirical_field(values, weights) -> FieldLaw:
    from tapglass.spectral import _as_atoms

    return FieldLaw(FIELD_EMPIRICAL, atoms=_as_atoms(values, weights))


def field_from_spec(obj: dict) -> FieldLaw:
    kind = obj.get("kind")
    if kind == FIELD_CONSTANT:
        return constant_field(obj["value"])
    if kind == FIELD_GAUSSIAN:
        return gaussian_field(obj.get("mean", 0.0), obj["sd"])
    if kind == FIELD_EMPIRICAL:
        return empirical_field(obj["locations"], obj["weights"])
    raise ValueError(f"unknown field law kind {kind!r}")


def gauss_field_expectation(integrand, field: FieldLaw, sigma: float) -> float:
    """E[f(H, sigma G)] for H ~ field, G ~ N(0,1) independent.

    ``integrand`` receives broadcastable arrays (h, y) and may return a scalar
    (constants broadcast).
    """
    h, ph = field.quad_atoms()
    y = sigma * GAUSS_NODES
    vals = np.asarray(integrand(h[:, None], y[None, :]), dtype=float)
    vals = np.broadcast_to(vals, (h.size, y.size))
    return float(ph @ vals @ GAUSS_WEIGHTS)


@dataclass(frozen=True)
class FixedPoint:
    """Solved overlap and all constants derived from it."""

    beta: float
    q_star: float
    sigma_star_sq: float
    kappa_star: float
    delta_star: float
    lambda_star: float
    a_star: float
    psi_rs: float
    converged: bool
    iterations: int

    def to_dict(self) -> dict:
        return {
            "beta": self.beta,
            "q_star": self.q_star,
            "sigma_star_sq": self.sigma_star_sq,
            "kappa_star": self.kappa_star,
            "delta_star": self.delta_star,
            "lambda_star": self.lambda_star,
            "a_star": self.a_star,
            "psi_rs": self.psi_rs,
            "converged": self.converged,
            "iterations": self.iterations,
        }


def _tanh_sq_expectation(field: FieldLaw, sigma: float) -> float:
    return gauss_field_expectation(lambda h, y: np.tanh(h + y) ** 2, field, sigma)


def solve_fixed_point(
    beta: float,
    law: SpectralLaw,
    field: FieldLaw,
    damping: float = DEFAULT_DAMPING,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> FixedPoint:
    """Solve the overlap fixed point by damped iteration and derive all constants.

    Requires beta > 0 and a standardized spectral law.  Raises
    BetaTooLargeError when an iterate or the solution leaves the domain where
    the rescaled transforms (and hence the constants) are defined, which is
    the numerical signature of leaving the high-temperature regime.
    """
    if not beta > 0:
        raise ValueError(f"solve_fixed_point needs beta > 0, got {beta} "
                         "(use product_fixed_point for the decoupled case)")
    if not law.is_standardized():
        raise ValueError("spectral law must be standardized (mean 0, variance 1)")
    if not 0 < damping <= 1:
        raise ValueError(f"damping must lie in (0, 1], got {damping}")
    rescaled = RescaledLaw(law, beta)

    def sigma_sq_of(q: float) -> float:
        if q == 0.0:
            return 0.0
        try:
            return q * rescaled.r_transform_derivative(1.0 - q)
        except DomainError as exc:
            raise BetaTooLargeError(
                f"1 - q = {1 - q} left the R-transform domain at beta={beta}"
            ) from exc

    q = _tanh_sq_expectation(field, 0.0)
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        s2 = sigma_sq_of(q)
        q_map = _tanh_sq_expectation(field, np.sqrt(s2))
        q_new = (1.0 - damping) * q + damping * q_map
        if abs(q_new - q) < tol:
            q = q_new
            converged = True
            break
        q = q_new

    return _derive_constants(beta, rescaled, field, q, converged, iterations)


def _derive_constants(
    beta: float,
    rescaled: RescaledLaw,
    field: FieldLaw,
    q: float,
    converged: bool,
    iterations: int,
) -> FixedPoint:
    u = 1.0 - q
    try:
        r_val = rescaled.r_transform(u)
        r_der = rescaled.r_transform_derivative(u)
        r_int = rescaled.r_integral(u)
    except DomainError as exc:
        raise BetaTooLargeError(
            f"1 - q* = {u} is outside the rescaled transform domain at beta={beta}"
        ) from exc
    denom = 1.0 - u * u * r_der
    if denom <= 0:
        raise BetaTooLargeError(
            f"1 - (1-q*)^2 Rbar'(1-q*) = {denom} <= 0 at beta={beta}; "
            "the covariance expansion diverges"
        )
    sigma_sq = q * r_der
    kappa = 1.0 / denom - 1.0
    if kappa > 0:
        delta = sigma_sq / kappa
    else:
        delta = q / (u * u)  # kappa = 0 forces sigma*^2 = 0 (decoupled limit)
    lam = r_val + 1.0 / u
    psi = (
        gauss_field_expectation(
            lambda h, y: np.log(2.0 * np.cosh(h + y)), field, np.sqrt(sigma_sq)
        )
        + 0.5 * q * r_val
        - 0.5 * q * u * r_der
        + 0.5 * r_int
    )
    return FixedPoint(
        beta=float(beta),
        q_star=float(q),
        sigma_star_sq=float(sigma_sq),
        kappa_star=float(kappa),
        delta_star=float(delta),
        lambda_star=float(lam),
        a_star=float(r_val),
        psi_rs=float(psi),
        converged=converged,
        iterations=iterations,
    )


def product_fixed_point(field: FieldLaw) -> FixedPoint:
    """Exact constants in the decoupled (beta = 0) case: a product measure.

    q* = E tanh(H)^2 with no Gaussian smearing, all interaction-driven
    constants vanish, and psi reduces to E log 2cosh(H).
    """
    q = _tanh_sq_expectation(field, 0.0)
    u = 1.0 - q
    psi = gauss_field_expectation(lambda h, y: np.log(2.0 * np.cosh(h + y)), field, 0.0)
    return FixedPoint(
        beta=0.0,
        q_star=q,
        sigma_star_sq=0.0,
        kappa_star=0.0,
        delta_star=q / (u * u),
        lambda_star=1.0 / u,
        a_star=0.0,
        psi_rs=psi,
        converged=True,
        iterations=0,
    )


@dataclass(frozen=True)
class DeltaEstimate:
    """Monte Carlo estimate of the state-evolution covariance, with standard errors."""

    delta: np.ndarray
    se: np.ndarray
    samples: int


def theoretical_delta(
    fp: FixedPoint,
    field: FieldLaw,
    t_max: int,
    mc_samples: int = 1_000_000,
    seed: int = 0,
) -> DeltaEstimate:
    """Estimate the t_max x t_max covariance Delta of the effective iterates.

    The recursion couples columns: X_s = (1-q*)^{-1} tanh(H + Y_{s-1}) - Y_{s-1}
    with Y_0 ~ N(0, sigma*^2) and (Y_1, ..., Y_{t-1}) ~ N(0, kappa* Delta_t),
    Delta_s = E[X X^T] over the first s columns.  Common random numbers: H,
    Y_0, and the Gaussian innovations behind Y_s are drawn once, and Y_s is
    produced from the Cholesky factor of the current kappa* Delta estimate, so
    successive columns are maximally correlated and the empirical Grams of a
    matched AMP run have a stable target.

    sigma*^2 = 0 collapses everything to the zero matrix (returned exactly).
    """
    if t_max < 1:
        raise ValueError(f"t_max must be >= 1, got {t_max}")
    if mc_samples < 2:
        raise ValueError(f"mc_samples must be >= 2, got {mc_samples}")
    if fp.sigma_star_sq == 0.0:
        zero = np.zeros((t_max, t_max))
        return DeltaEstimate(delta=zero, se=zero.copy(), samples=mc_samples)

    rng = np.random.default_rng(seed)
    h = field.sample(rng, mc_samples)
    y0 = np.sqrt(fp.sigma_star_sq) * rng.standard_normal(mc_samples)
    # one innovation row per time step, so the first s rows do not depend on t_max
    xi = rng.standard_normal((t_max, mc_samples))

    inv_u = 1.0 / (1.0 - fp.q_star)
    x_cols = np.empty((mc_samples, t_max))
    y_prev = y0
    for s in range(1, t_max + 1):
        x_cols[:, s - 1] = inv_u * np.tanh(h + y_prev) - y_prev
        if s == t_max:
            break
        block = x_cols[:, :s]
        delta_s = block.T @ block / mc_samples
        try:
            chol = np.linalg.cholesky(fp.kappa_star * delta_s)
        except np.linalg.LinAlgError as exc:
            raise RuntimeError(
                "state-evolution covariance lost positive definiteness; "
                "increase mc_samples or reduce t_max"
            ) from exc
        y_prev = chol[s - 1, :] @ xi[:s]

    delta = x_cols.T @ x_cols / mc_samples
    prods_sq_mean = (x_cols**2).T @ (x_cols**2) / mc_samples
    se = np.sqrt(np.maximum(prods_sq_mean - delta**2, 0.0) / mc_samples)
    return DeltaEstimate(delta=delta, se=se, samples=mc_samples)
