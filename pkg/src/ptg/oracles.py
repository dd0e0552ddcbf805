"""Exact verification models: finite discrete worlds and sampling references.

The engine's claim that averaging domain-conditioned posteriors under the
domain prior recovers the domain-marginalized posterior is checked here by
literal enumeration on finite probability tables, where every quantity is
computable to float64 roundoff.  A Monte Carlo reference for Gaussian mixture
moments lives here too.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

_NORM_TOL = 1e-12


def _check_pmf(p: np.ndarray, name: str) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise ValueError(f"{name} must be a non-empty 1-d table")
    if np.any(p < 0) or not np.isfinite(p).all():
        raise ValueError(f"{name} has negative or non-finite entries")
    if abs(p.sum() - 1.0) > _NORM_TOL:
        raise ValueError(f"{name} sums to {p.sum()!r}, not 1 within {_NORM_TOL}")
    return p


@dataclass
class DiscreteGenerativeModel:
    """Finite tables: parameter prior, two independent domain factors, likelihood.

    likelihood[w, c, v, o] = p(observation o | parameter w, causal factor c,
    variant factor v).  The joint over (w, c, v) is the product of the three
    priors, so the two domain factors are independent by construction.
    """

    p_omega: np.ndarray
    p_causal: np.ndarray
    p_variant: np.ndarray
    likelihood: np.ndarray

    def __post_init__(self):
        self.p_omega = _check_pmf(self.p_omega, "p_omega")
        self.p_causal = _check_pmf(self.p_causal, "p_causal")
        self.p_variant = _check_pmf(self.p_variant, "p_variant")
        lik = np.asarray(self.likelihood, dtype=np.float64)
        expected = (self.p_omega.size, self.p_causal.size, self.p_variant.size)
        if lik.ndim != 4 or lik.shape[:3] != expected:
            raise ValueError(
                f"likelihood shape {lik.shape} does not match supports {expected} + (n_obs,)"
            )
        if np.any(lik < 0) or not np.isfinite(lik).all():
            raise ValueError("likelihood has negative or non-finite entries")
        if np.max(np.abs(lik.sum(axis=3) - 1.0)) > _NORM_TOL:
            raise ValueError(f"likelihood rows must sum to 1 within {_NORM_TOL}")
        self.likelihood = lik

    @property
    def n_omega(self) -> int:
        return self.p_omega.size


def _sequence_likelihood(model: DiscreteGenerativeModel, observations: Sequence[int]) -> np.ndarray:
    """Product over the observation sequence: shape (n_omega, n_causal, n_variant)."""
    lik = np.ones(model.likelihood.shape[:3])
    n_obs = model.likelihood.shape[3]
    for o in observations:
        o = int(o)
        if not 0 <= o < n_obs:
            raise ValueError(f"observation {o} outside support [0, {n_obs})")
        lik = lik * model.likelihood[:, :, :, o]
    return lik


def posterior_given(
    model: DiscreteGenerativeModel, causal: int, variant: int, observations: Sequence[int] = ()
) -> np.ndarray:
    """p(omega | causal, variant, observations) by direct Bayes."""
    if not 0 <= causal < model.p_causal.size:
        raise ValueError(f"causal index {causal} out of range")
    if not 0 <= variant < model.p_variant.size:
        raise ValueError(f"variant index {variant} out of range")
    lik = _sequence_likelihood(model, observations)[:, causal, variant]
    joint = model.p_omega * lik
    z = joint.sum()
    if z <= 0.0:
        raise ValueError("observation sequence has zero probability under this conditioning")
    return joint / z


def invariant_posterior_exact(
    model: DiscreteGenerativeModel, causal: int, observations: Sequence[int] = ()
) -> np.ndarray:
    """p(omega | causal, observations) with the variant factor marginalized
    inside the likelihood before Bayes is applied."""
    if not 0 <= causal < model.p_causal.size:
        raise ValueError(f"causal index {causal} out of range")
    lik = _sequence_likelihood(model, observations)[:, causal, :]
    marg = lik @ model.p_variant
    joint = model.p_omega * marg
    z = joint.sum()
    if z <= 0.0:
        raise ValueError("observation sequence has zero probability under this conditioning")
    return joint / z


def invariant_posterior_aggregated(
    model: DiscreteGenerativeModel, causal: int, observations: Sequence[int] = ()
) -> np.ndarray:
    """Average of the per-variant posteriors under the variant prior."""
    out = np.zeros(model.n_omega)
    for v in range(model.p_variant.size):
        out += model.p_variant[v] * posterior_given(model, causal, v, observations)
    return out


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    return float(0.5 * np.abs(np.asarray(p) - np.asarray(q)).sum())


def identity_gap(model: DiscreteGenerativeModel) -> float:
    """Max TV distance between the exact and aggregated posteriors over every
    causal conditioning, with no observation data (the identity's own terms)."""
    return max(
        total_variation(
            invariant_posterior_exact(model, c), invariant_posterior_aggregated(model, c)
        )
        for c in range(model.p_causal.size)
    )


def data_conditioned_gap(
    model: DiscreteGenerativeModel, causal: int, observations: Sequence[int]
) -> float:
    """TV distance between the two routes once observations enter.

    Averaging per-variant posteriors under the variant *prior* ignores how the
    data re-weights the variants, so this gap is generally nonzero; it is
    reported, not asserted to vanish.
    """
    return total_variation(
        invariant_posterior_exact(model, causal, observations),
        invariant_posterior_aggregated(model, causal, observations),
    )


def random_model(
    rng: np.random.Generator,
    n_omega: int = 4,
    n_causal: int = 3,
    n_variant: int = 3,
    n_obs: int = 3,
) -> DiscreteGenerativeModel:
    """A fully random valid model; tables are normalized uniform draws."""

    def pmf(*shape):
        t = rng.random(shape) + 1e-3  # keep supports full so conditioning stays valid
        return t / t.sum(axis=-1, keepdims=True)

    return DiscreteGenerativeModel(
        p_omega=pmf(n_omega),
        p_causal=pmf(n_causal),
        p_variant=pmf(n_variant),
        likelihood=pmf(n_omega, n_causal, n_variant, n_obs),
    )


def mixture_moments_mc(
    components: Sequence[tuple[np.ndarray, np.ndarray]],
    n_samples: int,
    seed: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Empirical mean and population variance of an equal-weight Gaussian mixture.

    components is a sequence of (mean, std) arrays of one shared shape.  A
    single sample returns that sample and zero variance.
    """
    if len(components) == 0:
        raise ValueError("need at least one mixture component")
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    means = np.stack([np.asarray(m, dtype=np.float64) for m, _ in components])
    stds = np.stack([np.asarray(s, dtype=np.float64) for _, s in components])
    if np.any(stds <= 0):
        raise ValueError("component stds must be positive")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, len(components), size=n_samples)
    eps = rng.standard_normal((n_samples,) + means.shape[1:])
    draws = means[idx] + stds[idx] * eps
    return draws.mean(axis=0), draws.var(axis=0)
