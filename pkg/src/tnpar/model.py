"""TNPAR encoder/decoder building blocks.

History is first aggregated per geodesic distance around the target node
(topology filter), then weighted by the sampled causal tensor for the target
event type (causal filter). Both filters are elementwise products, so the
order in which they are applied does not matter.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, gammaln

from .graph import DistanceMasks
from .ingest import WindowSample
from .nn import DenseNet, forward

PROB_EPS = 1e-6
LAMBDA_FLOOR = 1e-6


@dataclass(frozen=True)
class EncoderInput:
    node: int
    current: np.ndarray  # (V,) counts at the target bin for this node
    history: np.ndarray  # (omega, V, K+1) distance-aggregated history

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.current, self.history.ravel()])


@dataclass(frozen=True)
class PosteriorZ:
    values: np.ndarray  # (K+1, V, V) pre-sigmoid scores
    beta: float = 1.0

    @property
    def probs(self) -> np.ndarray:
        return sigmoid_beta(self.values, self.beta)


@dataclass(frozen=True)
class SampledA:
    soft: np.ndarray  # (K+1, V, V) in (0, 1)
    hard: np.ndarray  # (K+1, V, V) in {0, 1}
    tau: float


def sigmoid_beta(z, beta: float = 1.0):
    return expit(beta * np.asarray(z, dtype=float))


def softplus(x):
    return np.logaddexp(0.0, x)


def aggregate_by_distance(counts: np.ndarray, masks: DistanceMasks) -> np.ndarray:
    """``out[t, n, v, k] = sum_m masks[k, n, m] * counts[t, v, m]``."""
    return np.einsum("knm,tvm->tnvk", masks.masks, counts.astype(float), optimize=True)


def build_encoder_input(sample: WindowSample, node: int, masks: DistanceMasks) -> EncoderInput:
    hist = np.einsum("km,wvm->wvk", masks.masks[:, node, :], sample.history.astype(float))
    return EncoderInput(node, sample.target[:, node].astype(float), hist)


def encoder_input_dim(type_count: int, omega: int, k_max: int) -> int:
    return type_count + omega * type_count * (k_max + 1)


def decoder_input_dim(type_count: int, omega: int, k_max: int) -> int:
    return omega * type_count * (k_max + 1) + type_count


def encode(phi: DenseNet, enc_input: EncoderInput, beta: float = 1.0) -> PosteriorZ:
    x = enc_input.flatten()
    if x.shape[0] != phi.layer_dims[0]:
        raise ValueError(f"encoder expects input of size {phi.layer_dims[0]}, got {x.shape[0]}")
    k1, v = enc_input.history.shape[2], enc_input.current.shape[0]
    z, _ = forward(phi, x)
    return PosteriorZ(z.reshape(k1, v, v), beta)


def gumbel_noise(rng: np.random.Generator, shape) -> np.ndarray:
    """Standard Gumbel draws, shape ``(2, *shape)``: index 0 for class 0, 1 for class 1."""
    u = rng.random((2,) + tuple(shape))
    return -np.log(-np.log(np.clip(u, 1e-300, 1.0 - 1e-16)))


def relaxed_bernoulli(q, noise, tau):
    """Class-1 coordinate of the two-class Gumbel-Softmax with class
    probabilities ``(1 - q, q)``; ``q`` is clamped to ``[PROB_EPS, 1 - PROB_EPS]``."""
    q = np.clip(q, PROB_EPS, 1.0 - PROB_EPS)
    u = (np.log(q) - np.log1p(-q) + noise[1] - noise[0]) / tau
    return expit(u)


def gumbel_sample(posterior: PosteriorZ, tau: float, rng: np.random.Generator, hard: bool = False,
                  noise=None) -> SampledA:
    """Differentiable relaxed sample of A.

    ``hard`` marks test-time use: the returned ``hard`` indicator should be used
    as a mask. In training the ``soft`` values act as weights; a straight-through
    estimator would use ``hard`` forward with the ``soft`` gradient.
    """
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    q = posterior.probs
    if noise is None:
        noise = gumbel_noise(rng, q.shape)
    soft = relaxed_bernoulli(q, noise, tau)
    return SampledA(soft, (soft > 0.5).astype(float), tau)


def causal_filter(history_agg: np.ndarray, a, target_type: int) -> np.ndarray:
    """Weight ``history_agg[w, i, k]`` by ``a[k, i, target_type]``."""
    weights = a.soft if isinstance(a, SampledA) else np.asarray(a, dtype=float)
    return history_agg * weights[:, :, target_type].T[None, :, :]


def decoder_features(filtered: np.ndarray, target_type: int) -> np.ndarray:
    onehot = np.zeros(filtered.shape[1])
    onehot[target_type] = 1.0
    return np.concatenate([filtered.ravel(), onehot])


def decode(theta: DenseNet, filtered: np.ndarray, target_type: int) -> float:
    x = decoder_features(filtered, target_type)
    if x.shape[0] != theta.layer_dims[0]:
        raise ValueError(f"decoder expects input of size {theta.layer_dims[0]}, got {x.shape[0]}")
    r, _ = forward(theta, x)
    return float(softplus(r[0]) + LAMBDA_FLOOR)


def poisson_log_pmf(o, lam, delta):
    """``log P(O = o)`` for a Poisson count with mean ``lam * delta``."""
    o = np.asarray(o)
    if np.any(o < 0):
        raise ValueError("occurrence counts must be nonnegative")
    rate = np.asarray(lam, dtype=float) * delta
    if np.any(rate <= 0):
        raise ValueError("lam * delta must be positive")
    out = o * np.log(rate) - rate - gammaln(o + 1.0)
    return float(out) if np.ndim(out) == 0 else out

