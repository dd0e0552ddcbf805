"""Training loops: merged-data baselines and per-domain aggregation.

Four procedures share one shape, a featurizer feeding a deterministic
classifier head:

* erm: cross-entropy on the merged training data, everything deterministic.
* erm_bayesian: Gaussian posterior over the featurizer weights trained by
  the reparameterized variational objective on merged data.
* ptg: per-domain posteriors take one variational step each (classifier
  frozen), are moment-matched into a shared posterior, and the shared
  posterior plus classifier take one step on the merged minibatch; repeat.
* ptg_lite: the deterministic analogue, per-domain point estimates with an
  L2 pull toward the prior mean, averaged and pruned by
  coefficient-of-variation dropout each iteration.

Every RNG stream is keyed by (seed, purpose, domain_id), aggregation sums in
a canonical order, and merged batches concatenate domains sorted by id, so a
run is bitwise reproducible and unchanged under reordering of the domain
list.  The per-domain refinement rate is alpha * base_lr; alpha = 0 is legal
and leaves every network bitwise at its initialization.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .aggregate import cov_dropout, coefficient_of_variation, map_mean, moment_match
from .datasets import DomainDataset
from .nets import AdamState, NetworkSpec, WeightSet, adam_step, backward, cross_entropy, forward, init_weights, softmax
from .seeding import stream
from .variational import (
    ElboResult,
    GaussianVariational,
    PriorSpec,
    elbo_loss,
    init_from_deterministic,
    kl_to_prior,
    sample_weights,
)


@dataclass(frozen=True)
class TrainConfig:
    """Knobs shared by all four procedures.

    kl_weight = None means 1 / (minibatches per epoch) computed from whichever
    data a step sees, so a full epoch weighs the regularizer once.  alpha
    scales the learning rate of the per-domain and merged refinement steps
    only; the baseline phases run at base_lr.
    """

    outer_iterations: int = 100
    alpha: float = 0.1
    beta: float = 0.1
    base_lr: float = 1e-3
    batch_size: int = 64
    kl_weight: float | None = None
    mc_eval_samples: int = 10
    sigma0: float = 0.01
    seed: int = 0
    erm_steps: int = 500
    bayes_steps: int = 500
    prior: PriorSpec = PriorSpec()

    def __post_init__(self):
        if self.outer_iterations < 1:
            raise ValueError(f"outer_iterations must be >= 1, got {self.outer_iterations}")
        if self.alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if not self.base_lr > 0:
            raise ValueError(f"base_lr must be positive, got {self.base_lr}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.kl_weight is not None and self.kl_weight < 0:
            raise ValueError(f"kl_weight must be >= 0, got {self.kl_weight}")
        if self.mc_eval_samples < 1:
            raise ValueError(f"mc_eval_samples must be >= 1, got {self.mc_eval_samples}")
        if not self.sigma0 > 0:
            raise ValueError(f"sigma0 must be positive, got {self.sigma0}")
        if self.erm_steps < 0 or self.bayes_steps < 0:
            raise ValueError("step counts must be >= 0")

    def to_json(self) -> dict:
        out = {
            "outer_iterations": self.outer_iterations,
            "alpha": self.alpha,
            "beta": self.beta,
            "base_lr": self.base_lr,
            "batch_size": self.batch_size,
            "kl_weight": self.kl_weight,
            "mc_eval_samples": self.mc_eval_samples,
            "sigma0": self.sigma0,
            "seed": self.seed,
            "erm_steps": self.erm_steps,
            "bayes_steps": self.bayes_steps,
            "prior_mean": self.prior.mean,
            "prior_std": self.prior.std,
        }
        return out

    @staticmethod
    def from_json(obj: dict) -> "TrainConfig":
        obj = dict(obj)
        prior = PriorSpec(obj.pop("prior_mean", 0.0), obj.pop("prior_std", 1.0))
        return TrainConfig(prior=prior, **obj)


class MinibatchStream:
    """Round-robin minibatches over reshuffled epochs.

    Indices are permuted once per epoch by the stream's own RNG and consumed
    in contiguous blocks; a tail shorter than batch_size is dropped so batch
    shapes stay constant.
    """

    def __init__(self, x: np.ndarray, y: np.ndarray, batch_size: int, rng: np.random.Generator):
        self.x, self.y = x, y
        self.n = x.shape[0]
        self.batch_size = min(batch_size, self.n)
        self.rng = rng
        self._order = rng.permutation(self.n)
        self._pos = 0

    @property
    def batches_per_epoch(self) -> int:
        return max(1, self.n // self.batch_size)

    def next_batch(self) -> tuple[np.ndarray, np.ndarray]:
        if self._pos + self.batch_size > self.n:
            self._order = self.rng.permutation(self.n)
            self._pos = 0
        idx = self._order[self._pos : self._pos + self.batch_size]
        self._pos += self.batch_size
        return self.x[idx], self.y[idx]


def _auto_kl_weight(config: TrainConfig, stream_: MinibatchStream) -> float:
    if config.kl_weight is not None:
        return config.kl_weight
    return 1.0 / stream_.batches_per_epoch


def _merged(domains: Sequence[DomainDataset]) -> tuple[np.ndarray, np.ndarray]:
    """Concatenate in sorted-domain_id order so the result ignores input order."""
    ordered = sorted(domains, key=lambda d: d.domain_id)
    return (
        np.concatenate([d.x for d in ordered], axis=0),
        np.concatenate([d.y for d in ordered], axis=0),
    )


def _check_domains(domains: Sequence[DomainDataset], minimum: int) -> list[DomainDataset]:
    if len(domains) < minimum:
        raise ValueError(f"need at least {minimum} training domains, got {len(domains)}")
    ids = [d.domain_id for d in domains]
    if len(set(ids)) != len(ids):
        raise ValueError("training domains must have unique ids")
    dims = {d.n_features for d in domains}
    if len(dims) != 1:
        raise ValueError(f"domains disagree on feature count: {sorted(dims)}")
    return sorted(domains, key=lambda d: d.domain_id)


@dataclass
class FeaturizerBank:
    """Output of the aggregation loops: shared featurizer, per-domain models,
    and the one classifier head they all feed."""

    f0: GaussianVariational | WeightSet
    per_domain: dict[str, GaussianVariational | WeightSet]
    classifier: WeightSet

    def __post_init__(self):
        feat_out = self.f0.spec.layer_dims[-1]
        cls_in = self.classifier.spec.layer_dims[0]
        if feat_out != cls_in:
            raise ValueError(
                f"featurizer output dim {feat_out} does not match classifier input {cls_in}"
            )


def predict(
    featurizer: GaussianVariational | WeightSet,
    classifier: WeightSet,
    x: np.ndarray,
    mc_samples: int = 1,
    rng: np.random.Generator | None = None,
    eps: np.ndarray | None = None,
) -> np.ndarray:
    """Class probabilities for a batch.

    Deterministic featurizers run once.  Posterior featurizers average the
    softmax over mc_samples reparameterized draws; pass eps of shape
    (mc_samples, n_params) to replay a specific draw sequence, or an rng to
    draw them, or neither to predict at the posterior mean (eps = 0).
    """
    if isinstance(featurizer, WeightSet):
        feats, _ = forward(featurizer.spec, featurizer, x)
        logits, _ = forward(classifier.spec, classifier, feats)
        return softmax(logits)
    if mc_samples < 1:
        raise ValueError(f"mc_samples must be >= 1, got {mc_samples}")
    n_params = featurizer.mu.shape[0]
    if eps is None:
        if rng is None:
            eps = np.zeros((mc_samples, n_params))
        else:
            eps = rng.standard_normal((mc_samples, n_params))
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != (mc_samples, n_params):
        raise ValueError(f"eps must have shape {(mc_samples, n_params)}, got {eps.shape}")
    total = None
    for k in range(mc_samples):
        ws = sample_weights(featurizer, eps[k])
        feats, _ = forward(featurizer.spec, ws, x)
        logits, _ = forward(classifier.spec, classifier, feats)
        probs = softmax(logits)
        total = probs if total is None else total + probs
    return total / mc_samples


def accuracy(
    featurizer,
    classifier: WeightSet,
    x: np.ndarray,
    y: np.ndarray,
    mc_samples: int = 1,
    rng: np.random.Generator | None = None,
) -> float:
    probs = predict(featurizer, classifier, x, mc_samples=mc_samples, rng=rng)
    return float((probs.argmax(axis=1) == y).mean())


def init_pair(
    feat_spec: NetworkSpec, cls_spec: NetworkSpec, seed: int
) -> tuple[WeightSet, WeightSet]:
    """Seeded Glorot init for the featurizer/classifier pair (featurizer drawn
    first; the order is part of the reproducibility contract)."""
    if feat_spec.layer_dims[-1] != cls_spec.layer_dims[0]:
        raise ValueError("featurizer output dim must match classifier input dim")
    rng = stream(seed, "init")
    return init_weights(feat_spec, rng), init_weights(cls_spec, rng)


def _map_loss(
    feat: WeightSet,
    classifier: WeightSet,
    batch: tuple[np.ndarray, np.ndarray],
    l2_weight: float,
    prior: PriorSpec,
) -> tuple[float, np.ndarray, WeightSet]:
    """Cross-entropy plus l2_weight * ||w - prior.mean||^2 / (2 prior.std^2)
    on the featurizer; returns (loss, flat featurizer grad, classifier grad)."""
    x, y = batch
    feats, tape_f = forward(feat.spec, feat, x)
    logits, tape_c = forward(classifier.spec, classifier, feats)
    ce, d_logits = cross_entropy(logits, y)
    grad_cls, d_feats = backward(classifier.spec, classifier, tape_c, d_logits)
    grad_feat, _ = backward(feat.spec, feat, tape_f, d_feats)
    flat = feat.flatten()
    centered = flat - prior.mean
    s2 = prior.std**2
    loss = ce + l2_weight * float((centered**2).sum()) / (2.0 * s2)
    g = grad_feat.flatten() + l2_weight * centered / s2
    return loss, g, grad_cls


def erm_train(
    domains: Sequence[DomainDataset],
    feat_spec: NetworkSpec,
    cls_spec: NetworkSpec,
    config: TrainConfig,
    init: tuple[WeightSet, WeightSet] | None = None,
) -> tuple[WeightSet, WeightSet, list[dict]]:
    """Plain cross-entropy training on the pooled domains.

    erm_steps = 0 returns the initialization unchanged (useful both as a
    contract and to produce a shared init for the other procedures).
    """
    domains = _check_domains(domains, minimum=1)
    if init is None:
        feat, cls = init_pair(feat_spec, cls_spec, config.seed)
    else:
        feat, cls = init[0].copy(), init[1].copy()
    x, y = _merged(domains)
    batches = MinibatchStream(x, y, config.batch_size, stream(config.seed, "batches", "merged"))
    st_f = AdamState.zeros(feat_spec.param_count, config.base_lr)
    st_c = AdamState.zeros(cls_spec.param_count, config.base_lr)
    history = []
    for step in range(config.erm_steps):
        bx, by = batches.next_batch()
        feats, tape_f = forward(feat_spec, feat, bx)
        logits, tape_c = forward(cls_spec, cls, feats)
        ce, d_logits = cross_entropy(logits, by)
        grad_cls, d_feats = backward(cls_spec, cls, tape_c, d_logits)
        grad_feat, _ = backward(feat_spec, feat, tape_f, d_feats)
        new_f, st_f = adam_step(feat.flatten(), grad_feat.flatten(), st_f, config.base_lr)
        new_c, st_c = adam_step(cls.flatten(), grad_cls.flatten(), st_c, config.base_lr)
        feat = WeightSet.from_flat(feat_spec, new_f)
        cls = WeightSet.from_flat(cls_spec, new_c)
        history.append({"iteration": step, "merged_loss": ce})
    return feat, cls, history


def erm_bayesian_train(
    domains: Sequence[DomainDataset],
    init_feat: WeightSet,
    init_cls: WeightSet,
    config: TrainConfig,
) -> tuple[GaussianVariational, WeightSet, list[dict]]:
    """Variational training on the pooled domains from a deterministic start.

    The posterior begins at N(init_feat, sigma0^2); each step draws one eps,
    takes the reparameterized gradient of kl_weight * KL + cross-entropy, and
    updates (mu, rho) and the classifier with Adam at base_lr.
    """
    domains = _check_domains(domains, minimum=1)
    q = init_from_deterministic(init_feat, config.sigma0)
    cls = init_cls.copy()
    x, y = _merged(domains)
    batches = MinibatchStream(x, y, config.batch_size, stream(config.seed, "batches", "merged"))
    eps_rng = stream(config.seed, "eps", "merged")
    klw = _auto_kl_weight(config, batches)
    n_params = q.mu.shape[0]
    st_q = AdamState.zeros(2 * n_params, config.base_lr)
    st_c = AdamState.zeros(cls.spec.param_count, config.base_lr)
    history = []
    for step in range(config.bayes_steps):
        batch = batches.next_batch()
        eps = eps_rng.standard_normal(n_params)
        res = elbo_loss(q, cls, batch, klw, eps, config.prior)
        packed = np.concatenate([q.mu, q.rho])
        grad = np.concatenate([res.grad_mu, res.grad_rho])
        packed, st_q = adam_step(packed, grad, st_q, config.base_lr)
        q = GaussianVariational(q.spec, packed[:n_params], packed[n_params:])
        new_c, st_c = adam_step(cls.flatten(), res.grad_classifier.flatten(), st_c, config.base_lr)
        cls = WeightSet.from_flat(cls.spec, new_c)
        history.append({"iteration": step, "merged_loss": res.loss, "kl": res.kl})
    return q, cls, history


def ptg_train(
    domains: Sequence[DomainDataset],
    init_q: GaussianVariational,
    init_cls: WeightSet,
    config: TrainConfig,
    inspect: Callable[[int, GaussianVariational, dict[str, GaussianVariational]], None] | None = None,
) -> tuple[FeaturizerBank, list[dict]]:
    """Per-domain posterior refinement with moment-matched aggregation.

    Each outer iteration: (a) every domain posterior takes one variational
    step on its own minibatch at alpha * base_lr with the classifier frozen;
    (b) the shared posterior is rebuilt by moment matching the per-domain
    posteriors; (c) the shared posterior and the classifier take one
    variational step on the concatenation of this iteration's minibatches.
    The optional inspect hook receives (iteration, shared posterior,
    per-domain posteriors) right after (b), before the merged step touches
    anything.
    """
    domains = _check_domains(domains, minimum=2)
    ids = [d.domain_id for d in domains]
    per_q = {i: init_q.copy() for i in ids}
    cls = init_cls.copy()
    n_params = init_q.mu.shape[0]
    lr = config.alpha * config.base_lr

    batch_streams, eps_rngs, klw = {}, {}, {}
    for d in domains:
        batch_streams[d.domain_id] = MinibatchStream(
            d.x, d.y, config.batch_size, stream(config.seed, "batches", d.domain_id)
        )
        eps_rngs[d.domain_id] = stream(config.seed, "eps", d.domain_id)
        klw[d.domain_id] = _auto_kl_weight(config, batch_streams[d.domain_id])
    merged_eps = stream(config.seed, "eps", "merged")
    n_total = sum(d.n_samples for d in domains)

    states = {i: AdamState.zeros(2 * n_params, config.base_lr) for i in ids}
    st_0 = AdamState.zeros(2 * n_params, config.base_lr)
    st_c = AdamState.zeros(cls.spec.param_count, config.base_lr)
    q0 = init_q.copy()
    history = []
    for it in range(config.outer_iterations):
        row = {"iteration": it}
        drawn = []
        for i in ids:
            batch = batch_streams[i].next_batch()
            drawn.append(batch)
            eps = eps_rngs[i].standard_normal(n_params)
            res = elbo_loss(per_q[i], cls, batch, klw[i], eps, config.prior)
            packed = np.concatenate([per_q[i].mu, per_q[i].rho])
            grad = np.concatenate([res.grad_mu, res.grad_rho])
            packed, states[i] = adam_step(packed, grad, states[i], lr)
            per_q[i] = GaussianVariational(init_q.spec, packed[:n_params], packed[n_params:])
            row[f"loss_{i}"] = res.loss

        agg = moment_match([per_q[i] for i in ids])
        q0 = agg.q0
        if inspect is not None:
            inspect(it, q0.copy(), {i: per_q[i].copy() for i in ids})

        mx = np.concatenate([b[0] for b in drawn], axis=0)
        my = np.concatenate([b[1] for b in drawn], axis=0)
        if config.kl_weight is not None:
            klw_m = config.kl_weight
        else:
            klw_m = 1.0 / max(1, n_total // mx.shape[0])
        eps = merged_eps.standard_normal(n_params)
        res = elbo_loss(q0, cls, (mx, my), klw_m, eps, config.prior)
        packed = np.concatenate([q0.mu, q0.rho])
        grad = np.concatenate([res.grad_mu, res.grad_rho])
        packed, st_0 = adam_step(packed, grad, st_0, lr)
        q0 = GaussianVariational(init_q.spec, packed[:n_params], packed[n_params:])
        new_c, st_c = adam_step(cls.flatten(), res.grad_classifier.flatten(), st_c, lr)
        cls = WeightSet.from_flat(cls.spec, new_c)
        row["kl"] = res.kl
        row["merged_loss"] = res.loss
        row["dropped_count"] = 0
        history.append(row)
    return FeaturizerBank(q0, dict(per_q), cls), history


def ptg_lite_train(
    domains: Sequence[DomainDataset],
    init_feat: WeightSet,
    init_cls: WeightSet,
    config: TrainConfig,
    inspect: Callable[[int, WeightSet, dict[str, WeightSet]], None] | None = None,
) -> tuple[FeaturizerBank, list[dict]]:
    """Deterministic aggregation: averaged point estimates with CoV dropout.

    Per-domain models take one MAP step each (cross-entropy plus the L2 pull
    toward the prior mean at weight kl_weight / (2 prior_std^2)); the shared
    featurizer is their coordinate mean with parameters zeroed where the
    coefficient of variation across domains exceeds beta.  A zeroed parameter
    keeps gradient zero for the rest of the iteration, so the merged MAP step
    on (shared featurizer, classifier) cannot resurrect it; the mask is
    recomputed at the next aggregation.
    """
    domains = _check_domains(domains, minimum=2)
    ids = [d.domain_id for d in domains]
    feat_spec = init_feat.spec
    per_w = {i: init_feat.copy() for i in ids}
    cls = init_cls.copy()
    lr = config.alpha * config.base_lr

    batch_streams, klw = {}, {}
    for d in domains:
        batch_streams[d.domain_id] = MinibatchStream(
            d.x, d.y, config.batch_size, stream(config.seed, "batches", d.domain_id)
        )
        klw[d.domain_id] = _auto_kl_weight(config, batch_streams[d.domain_id])
    n_total = sum(d.n_samples for d in domains)

    states = {i: AdamState.zeros(feat_spec.param_count, config.base_lr) for i in ids}
    st_0 = AdamState.zeros(feat_spec.param_count, config.base_lr)
    st_c = AdamState.zeros(cls.spec.param_count, config.base_lr)
    f0 = init_feat.copy()
    history = []
    for it in range(config.outer_iterations):
        row = {"iteration": it}
        drawn = []
        for i in ids:
            batch = batch_streams[i].next_batch()
            drawn.append(batch)
            loss, g_feat, _ = _map_loss(per_w[i], cls, batch, klw[i], config.prior)
            new_f, states[i] = adam_step(per_w[i].flatten(), g_feat, states[i], lr)
            per_w[i] = WeightSet.from_flat(feat_spec, new_f)
            row[f"loss_{i}"] = loss

        models = [per_w[i] for i in ids]
        cov = coefficient_of_variation(models)
        f0, report = cov_dropout(map_mean(models), cov, config.beta)
        if inspect is not None:
            inspect(it, f0.copy(), {i: per_w[i].copy() for i in ids})

        mx = np.concatenate([b[0] for b in drawn], axis=0)
        my = np.concatenate([b[1] for b in drawn], axis=0)
        if config.kl_weight is not None:
            klw_m = config.kl_weight
        else:
            klw_m = 1.0 / max(1, n_total // mx.shape[0])
        loss, g_feat, g_cls = _map_loss(f0, cls, (mx, my), klw_m, config.prior)
        # dropped stays dropped this iteration: no gradient, and no drift from
        # stale Adam momentum either
        g_feat = np.where(report.kept_mask, g_feat, 0.0)
        new_f, st_0 = adam_step(f0.flatten(), g_feat, st_0, lr)
        f0 = WeightSet.from_flat(feat_spec, np.where(report.kept_mask, new_f, 0.0))
        new_c, st_c = adam_step(cls.flatten(), g_cls.flatten(), st_c, lr)
        cls = WeightSet.from_flat(cls.spec, new_c)
        row["kl"] = 0.0
        row["merged_loss"] = loss
        row["dropped_count"] = report.dropped_count
        history.append(row)
    return FeaturizerBank(f0, dict(per_w), cls), history


ALGORITHMS = ("erm", "erm_bayesian", "ptg", "ptg_lite")


def train_algorithm(
    algorithm: str,
    domains: Sequence[DomainDataset],
    feat_spec: NetworkSpec,
    cls_spec: NetworkSpec,
    config: TrainConfig,
) -> tuple[GaussianVariational | WeightSet, WeightSet, list[dict]]:
    """Run one named procedure end to end and return (featurizer, classifier,
    history).  The aggregation procedures start from the matching merged-data
    checkpoint: ptg from erm_bayesian's posterior, ptg_lite from erm's
    weights."""
    if algorithm == "erm":
        return erm_train(domains, feat_spec, cls_spec, config)
    if algorithm == "erm_bayesian":
        feat, cls, _ = erm_train(domains, feat_spec, cls_spec, config)
        return erm_bayesian_train(domains, feat, cls, config)
    if algorithm == "ptg":
        feat, cls, _ = erm_train(domains, feat_spec, cls_spec, config)
        q, cls, _ = erm_bayesian_train(domains, feat, cls, config)
        bank, history = ptg_train(domains, q, cls, config)
        return bank.f0, bank.classifier, history
    if algorithm == "ptg_lite":
        feat, cls, _ = erm_train(domains, feat_spec, cls_spec, config)
        bank, history = ptg_lite_train(domains, feat, cls, config)
        return bank.f0, bank.classifier, history
    raise ValueError(f"unknown algorithm {algorithm!r}; expected one of {ALGORITHMS}")
