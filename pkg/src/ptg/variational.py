"""Diagonal Gaussian posteriors over network weights.

A posterior is (mu, rho) per scalar parameter with sigma = softplus(rho), so
sigma stays positive under unconstrained gradient steps.  Sampling uses the
reparameterization omega = mu + sigma * eps, which keeps the loss a
deterministic function of (mu, rho) once eps is drawn.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .nets import NetworkSpec, WeightSet, backward, cross_entropy, forward


def softplus(rho: np.ndarray) -> np.ndarray:
    """log(1 + e^rho), computed as logaddexp(0, rho) so it never overflows."""
    return np.logaddexp(0.0, rho)


def sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softplus_inv(y) -> np.ndarray:
    """Inverse of softplus, polished to the float where softplus(x) is as
    close to y as float64 allows.

    The round trip softplus(softplus_inv(y)) has relative error at the
    float64 rounding floor (a few ulps; not every float has an exact
    preimage, and the closest achievable value is returned).  The shipped
    prior std 1.0 does round-trip bitwise, which the prior-vs-prior KL
    exactness contract relies on.
    """
    y = np.asarray(y, dtype=np.float64)
    if np.any(y <= 0) or not np.isfinite(y).all():
        raise ValueError("softplus_inv needs finite values > 0")
    scalar = y.ndim == 0
    y = np.atleast_1d(y)
    # branch on masked inputs; evaluating either formula outside its range
    # overflows or hits log(0)
    big = y > 30.0
    x = np.empty_like(y)
    x[big] = y[big] + np.log1p(-np.exp(-y[big]))
    x[~big] = np.log(np.expm1(y[~big]))
    for _ in range(2):
        x = x - (softplus(x) - y) / sigmoid(x)
    cur = softplus(x)
    best_x = x.copy()
    best_err = np.abs(cur - y)
    for _ in range(4):
        if not (cur != y).any():
            break
        target = np.where(cur < y, np.inf, -np.inf)
        x = np.where(cur == y, x, np.nextafter(x, target))
        cur = softplus(x)
        err = np.abs(cur - y)
        better = err < best_err
        best_x = np.where(better, x, best_x)
        best_err = np.where(better, err, best_err)
    return best_x[0] if scalar else best_x


@dataclass(frozen=True)
class PriorSpec:
    """Isotropic Gaussian prior N(mean, std^2) shared by every parameter."""

    mean: float = 0.0
    std: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.std) and self.std > 0):
            raise ValueError(f"prior std must be positive, got {self.std}")


@dataclass
class GaussianVariational:
    """Factorized Gaussian over the flat weight vector of a NetworkSpec."""

    spec: NetworkSpec
    mu: np.ndarray
    rho: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.rho = np.asarray(self.rho, dtype=np.float64)
        n = self.spec.param_count
        if self.mu.shape != (n,) or self.rho.shape != (n,):
            raise ValueError(f"mu/rho must have shape ({n},)")
        if not (np.isfinite(self.mu).all() and np.isfinite(self.rho).all()):
            raise ValueError("non-finite variational parameters")

    @property
    def sigma(self) -> np.ndarray:
        return softplus(self.rho)

    def copy(self) -> "GaussianVariational":
        return GaussianVariational(self.spec, self.mu.copy(), self.rho.copy())


def init_from_deterministic(ws: WeightSet, sigma0: float = 0.01) -> GaussianVariational:
    """Posterior centered on an existing weight set with constant std sigma0."""
    if not sigma0 > 0:
        raise ValueError(f"sigma0 must be positive, got {sigma0}")
    mu = ws.flatten()
    rho = np.full(mu.shape, softplus_inv(float(sigma0)))
    return GaussianVariational(ws.spec, mu, rho)


def sample_weights(q: GaussianVariational, eps: np.ndarray) -> WeightSet:
    """Reparameterized draw omega = mu + sigma * eps as a WeightSet."""
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != q.mu.shape:
        raise ValueError(f"eps must have shape {q.mu.shape}, got {eps.shape}")
    return WeightSet.from_flat(q.spec, q.mu + q.sigma * eps)


def kl_to_prior(q: GaussianVariational, prior: PriorSpec = PriorSpec()) -> float:
    """Closed-form KL(q || prior) for the factorized Gaussian pair.

    Per coordinate: log(s/sigma) + (sigma^2 + (mu - m)^2) / (2 s^2) - 1/2.
    Exactly zero when q equals the prior.
    """
    sigma = q.sigma
    s = prior.std
    terms = np.log(s / sigma) + (sigma**2 + (q.mu - prior.mean) ** 2) / (2.0 * s**2) - 0.5
    return float(terms.sum())


def kl_gradients(q: GaussianVariational, prior: PriorSpec = PriorSpec()) -> tuple[np.ndarray, np.ndarray]:
    """d KL / d mu and d KL / d rho (the rho chain rule carries sigmoid(rho))."""
    sigma = q.sigma
    s2 = prior.std**2
    d_mu = (q.mu - prior.mean) / s2
    d_sigma = sigma / s2 - 1.0 / sigma
    return d_mu, d_sigma * sigmoid(q.rho)


@dataclass
class ElboResult:
    loss: float
    cross_entropy: float
    kl: float
    grad_mu: np.ndarray
    grad_rho: np.ndarray
    grad_classifier: WeightSet


def elbo_loss(
    q: GaussianVariational,
    classifier: WeightSet,
    batch: tuple[np.ndarray, np.ndarray] | None,
    kl_weight: float,
    eps: np.ndarray,
    prior: PriorSpec = PriorSpec(),
) -> ElboResult:
    """Single-sample variational loss kl_weight * KL + cross-entropy.

    The featurizer is sampled with the given eps and feeds the deterministic
    classifier; gradients flow to (mu, rho) through the reparameterization
    (d omega / d mu = 1, d omega / d rho = eps * sigmoid(rho)) and to the
    classifier weights directly.  batch=None drops the likelihood term, in
    which case the loss is kl_weight * KL alone.
    """
    if kl_weight < 0:
        raise ValueError(f"kl_weight must be >= 0, got {kl_weight}")
    feat_ws = sample_weights(q, eps)
    kl = kl_to_prior(q, prior)
    kl_mu, kl_rho = kl_gradients(q, prior)
    zero_cls = WeightSet(
        classifier.spec,
        [np.zeros_like(w) for w in classifier.weights],
        [np.zeros_like(b) for b in classifier.biases],
    )
    if batch is None:
        return ElboResult(
            loss=kl_weight * kl,
            cross_entropy=0.0,
            kl=kl,
            grad_mu=kl_weight * kl_mu,
            grad_rho=kl_weight * kl_rho,
            grad_classifier=zero_cls,
        )
    x, y = batch
    feats, tape_f = forward(q.spec, feat_ws, x)
    logits, tape_c = forward(classifier.spec, classifier, feats)
    ce, d_logits = cross_entropy(logits, y)
    grad_cls, d_feats = backward(classifier.spec, classifier, tape_c, d_logits)
    grad_feat, _ = backward(q.spec, feat_ws, tape_f, d_feats)
    g_omega = grad_feat.flatten()
    eps = np.asarray(eps, dtype=np.float64)
    return ElboResult(
        loss=ce + kl_weight * kl,
        cross_entropy=ce,
        kl=kl,
        grad_mu=g_omega + kl_weight * kl_mu,
        grad_rho=g_omega * eps * sigmoid(q.rho) + kl_weight * kl_rho,
        grad_classifier=grad_cls,
    )


def save_gaussian(path, q: GaussianVariational) -> None:
    """JSON checkpoint with mu/rho in the flat parameter order."""
    payload = {"spec": q.spec.to_json(), "mu": q.mu.tolist(), "rho": q.rho.tolist()}
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_gaussian(path) -> GaussianVariational:
    with open(path) as fh:
        payload = json.load(fh)
    spec = NetworkSpec.from_json(payload["spec"])
    return GaussianVariational(
        spec,
        np.asarray(payload["mu"], dtype=np.float64),
        np.asarray(payload["rho"], dtype=np.float64),
    )
