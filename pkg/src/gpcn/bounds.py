"""Numeric evaluation of the transductive Rademacher bounds for the GPCN family.

All values are reported up to the unspecified universal constants, which
are exposed as ``c_prime`` and ``c0`` and default to 1.  Intended use is
relative comparison (across depth, scaling, spectra), not absolute risk.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Literal, Sequence

import numpy as np

from .errors import ConfigError, InsufficientSpectrumError
from .graph import Spectrum, normalized_adjacency, spectrum as compute_spectrum
from .models import ModelConfig, ParameterSet, binomial_coefficients, mu_scalar, literal_coefficients

Coefficients = Literal["paper", "canonical"]


@dataclass(frozen=True)
class BoundInputs:
    """Everything the bound formulas consume.

    ``B`` lists the column-L1 caps of W0 .. W{T-1}, W_res, W_out in that
    order (length T + 2).  ``theta`` is only read by the adaptive-coefficient bound.
    """

    spectrum: Spectrum
    B: tuple[float, ...]
    B_A: float
    mu: float
    gamma: float
    T: int
    L: int
    M: int
    U: int
    X_fro: float
    R: float = 1.0
    N: int | None = None
    theta: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.M < 1 or self.U < 1:
            raise ValueError("M and U must be >= 1")
        if len(self.B) != self.T + 2:
            raise ValueError(f"expected {self.T + 2} weight caps, got {len(self.B)}")
        if any(b < 0 for b in self.B) or self.B_A < 0:
            raise ValueError("weight caps must be non-negative")
        if not 0.0 <= self.mu <= 1.0:
            raise ValueError("mu must lie in [0, 1]")
        if not self.spectrum.is_full:
            raise InsufficientSpectrumError("bounds need the full spectrum")
        if self.N is None:
            object.__setattr__(self, "N", self.spectrum.n)

    @property
    def Q(self) -> float:
        return 1.0 / self.M + 1.0 / self.U

    @property
    def p0(self) -> float:
        return self.M * self.U / (self.M + self.U) ** 2

    @property
    def D(self) -> float:
        return math.sqrt(self.N) * self.R

    def with_(self, **kw) -> "BoundInputs":
        return replace(self, **kw)


@dataclass(frozen=True)
class BoundTerms:
    trunk: float
    link: float

    @property
    def total(self) -> float:
        return self.trunk + self.link


def power_sums(spec: Spectrum, L: int) -> np.ndarray:
    """[N, Σ|λ|, Σ|λ|², ..., Σ|λ|^L]."""
    if not spec.is_full:
        raise InsufficientSpectrumError("power sums need the full spectrum")
    a = np.abs(np.asarray(spec.eigenvalues, dtype=np.float64))
    return np.array([np.sum(a**k) for k in range(L + 1)])


def theorem1_coefficients(L: int, gamma: float, coefficients: Coefficients = "paper") -> np.ndarray:
    if coefficients == "paper":
        return literal_coefficients(L, gamma)
    if coefficients == "canonical":
        return binomial_coefficients(L, gamma)
    raise ConfigError(f"unknown coefficient pattern {coefficients!r}")


def bound_terms(inp: BoundInputs, coeffs: Sequence[float], c_prime: float = 1.0) -> BoundTerms:
    """Trunk and adjacency-branch terms for per-order coefficients c_0..c_L."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    L = coeffs.size - 1
    P = power_sums(inp.spectrum, L)
    B_init = inp.B[: inp.T]
    B_T = inp.B[inp.T]
    B_out = inp.B[inp.T + 1]
    higher = sum(coeffs[k] * B_T**k * P[k] for k in range(1, L + 1))
    feat = 2.0**inp.T * math.prod(B_init) * math.sqrt(2.0 * inp.p0)
    trunk = c_prime * B_out * inp.mu * (feat * (coeffs[0] + higher) * inp.X_fro + higher * inp.D)
    link = (1.0 - inp.mu) * 2.0**2.5 * B_out * inp.B_A * math.sqrt(inp.M * inp.U) / (inp.M + inp.U) * P[1]
    return BoundTerms(float(trunk), float(link))


def theorem1_terms(inp: BoundInputs, coefficients: Coefficients = "paper", c_prime: float = 1.0) -> BoundTerms:
    return bound_terms(inp, theorem1_coefficients(inp.L, inp.gamma, coefficients), c_prime)


def theorem1_rhs(inp: BoundInputs, coefficients: Coefficients = "paper", c_prime: float = 1.0) -> float:
    """Right-hand side for the fixed-gamma hybrid (Q⁻¹-scaled complexity)."""
    return theorem1_terms(inp, coefficients, c_prime).total


def theorem2_terms(inp: BoundInputs, c_prime: float = 1.0) -> BoundTerms:
    if inp.theta is None:
        raise ConfigError("the adaptive-coefficient bound needs theta")
    if len(inp.theta) != inp.L + 1:
        raise ConfigError(f"theta must have L + 1 = {inp.L + 1} entries")
    return bound_terms(inp, inp.theta, c_prime)


def theorem2_rhs(inp: BoundInputs, c_prime: float = 1.0) -> float:
    """Right-hand side for the adaptive-coefficient hybrid."""
    return theorem2_terms(inp, c_prime).total


def slack_S(M: int, U: int) -> float:
    m = min(M, U)
    return 2.0 * (M + U) * m / ((2.0 * (M + U) - 1.0) * (2.0 * m - 1.0))


def generalization_gap_rhs(rad: float, M: int, U: int, delta: float, c0: float = 1.0) -> float:
    """rad + c0 Q sqrt(min(M,U)) + sqrt((S Q / 2) log(1/δ)); empirical risk excluded."""
    if not 0.0 < delta <= 1.0:
        raise ValueError("delta must lie in (0, 1]")
    if M < 1 or U < 1:
        raise ValueError("M and U must be >= 1")
    Q = 1.0 / M + 1.0 / U
    m = min(M, U)
    return rad + c0 * Q * math.sqrt(m) + math.sqrt(slack_S(M, U) * Q / 2.0 * math.log(1.0 / delta))


# --------------------------------------------------------------------------- extraction & reports


def max_column_l1(W: np.ndarray) -> float:
    return float(np.abs(W).sum(axis=0).max()) if W.size else 0.0


def extract_bound_inputs(
    dataset,
    params: ParameterSet,
    split,
    cfg: ModelConfig,
    R: float = 1.0,
    symmetrize: str = "auto",
    spec: Spectrum | None = None,
) -> BoundInputs:
    """Weight caps, mixing scalar and full spectrum of a trained polynomial model."""
    if not cfg.kind.polynomial:
        raise ConfigError(f"bounds are defined for the polynomial family, not {cfg.kind.value}")
    B = [max_column_l1(params[f"W{i}"].data) for i in range(cfg.T)]
    B += [max_column_l1(params["W_res"].data), max_column_l1(params["W_out"].data)]
    B_A = max_column_l1(params["W_A"].data) if "W_A" in params else 0.0
    mu = mu_scalar(params, cfg) if "mu_raw" in params else 1.0
    theta = tuple(float(t) for t in params["theta"].data.ravel()) if "theta" in params else None
    if spec is None:
        spec = compute_spectrum(normalized_adjacency(dataset.A, symmetrize), "all")
    return BoundInputs(
        spectrum=spec, B=tuple(B), B_A=B_A, mu=mu, gamma=cfg.gamma, T=cfg.T, L=cfg.L,
        M=int(split.train.size), U=int(split.test.size),
        X_fro=float(np.linalg.norm(dataset.X)), R=R, N=dataset.n_nodes, theta=theta,
    )


BOUND_COLUMNS = ("L", "gamma/theta", "mu", "trunk_term", "link_term", "Q", "total", "gap_rhs")


def bound_row(
    inp: BoundInputs,
    theorem: int = 1,
    coefficients: Coefficients = "paper",
    delta: float = 0.05,
    c_prime: float = 1.0,
    c0: float = 1.0,
) -> dict:
    if theorem == 1:
        terms = theorem1_terms(inp, coefficients, c_prime)
        coef = repr(float(inp.gamma))
    elif theorem == 2:
        terms = theorem2_terms(inp, c_prime)
        coef = ";".join(repr(float(t)) for t in inp.theta)
    else:
        raise ConfigError("theorem must be 1 or 2")
    rad = inp.Q * terms.total
    return {
        "L": inp.L,
        "gamma/theta": coef,
        "mu": inp.mu,
        "trunk_term": terms.trunk,
        "link_term": terms.link,
        "Q": inp.Q,
        "total": terms.total,
        "gap_rhs": generalization_gap_rhs(rad, inp.M, inp.U, delta, c0),
    }


def oversmoothing_profile(
    inp: BoundInputs,
    L_range: Sequence[int],
    coefficients: Coefficients = "paper",
    delta: float = 0.05,
) -> list[dict]:
    """Fixed-gamma bound as a function of the number of residual layers."""
    return [bound_row(inp.with_(L=int(L), theta=None), 1, coefficients, delta) for L in L_range]
