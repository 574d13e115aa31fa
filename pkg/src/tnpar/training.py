"""Constrained variational objective and the Adam training loop."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, gammaln

from .graph import CausalTensor, DistanceMasks, acyclicity_h_grad, aggregate_g
from .ingest import CountTensor, merge_nodes
from .model import LAMBDA_FLOOR, PROB_EPS, aggregate_by_distance, decoder_input_dim, encoder_input_dim, gumbel_noise
from .nn import AdamState, DenseNet, adam_step, backward, forward

log = logging.getLogger(__name__)

MODES = ("full", "no_topology", "merged", "no_constraints")


class TrainingDiverged(RuntimeError):
    def __init__(self, message, last_finite_epoch):
        super().__init__(message)
        self.last_finite_epoch = last_finite_epoch


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 256
    lambda_c: float = 1e-10
    lambda_s: float = 1e-4
    prior_p: float = 0.5
    mode: str = "full"
    seed: int = 0
    omega: int = 3
    k_max: int = 1
    delta: float = 2.0
    hidden: tuple[int, ...] = (64, 64)
    decoder_hidden: tuple[int, ...] | None = None
    learning_rate: float = 1e-3
    beta: float = 1.0
    tau: float = 0.5

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.decoder_hidden is not None:
            self.decoder_hidden = tuple(int(h) for h in self.decoder_hidden)
        errors = []
        if self.mode not in MODES:
            errors.append(f"mode: must be one of {MODES} (got {self.mode!r})")
        if self.lambda_c < 0 or self.lambda_s < 0:
            errors.append("lambda_c, lambda_s: must be >= 0")
        if not 0 < self.prior_p < 1:
            errors.append(f"prior_p: must lie in (0, 1) (got {self.prior_p})")
        if self.epochs < 0 or self.batch_size < 1:
            errors.append("epochs must be >= 0 and batch_size >= 1")
        if self.omega < 1 or self.k_max < 0:
            errors.append("omega must be >= 1 and k_max >= 0")
        if self.delta <= 0 or self.tau <= 0 or self.beta <= 0 or self.learning_rate <= 0:
            errors.append("delta, tau, beta and learning_rate must be positive")
        if errors:
            raise ValueError("invalid training config: " + "; ".join(errors))


@dataclass
class LossBreakdown:
    elbo: float
    reconstruction: float
    kl: float
    acyclicity_term: float
    sparsity_term: float
    total: float


@dataclass
class TnparModel:
    encoder: DenseNet
    decoder: DenseNet
    type_count: int
    k_max: int
    omega: int
    beta: float
    tau: float
    delta: float

    @classmethod
    def init(cls, type_count, config: TrainConfig, rng: np.random.Generator) -> "TnparModel":
        V, K, W = type_count, config.k_max, config.omega
        enc = DenseNet.init([encoder_input_dim(V, W, K), *config.hidden, (K + 1) * V * V], rng)
        dec_hidden = config.hidden if config.decoder_hidden is None else config.decoder_hidden
        dec = DenseNet.init([decoder_input_dim(V, W, K), *dec_hidden, 1], rng)
        return cls(enc, dec, V, K, W, config.beta, config.tau, config.delta)

    @property
    def params(self) -> list[np.ndarray]:
        return self.encoder.params + self.decoder.params


@dataclass
class WindowData:
    """Every (bin, node) window: current counts and distance-aggregated history."""

    current: np.ndarray  # (S, V)
    history: np.ndarray  # (S, omega, V, K+1); history[:, 0] is the previous bin

    def __len__(self):
        return self.current.shape[0]

    def subset(self, idx) -> "WindowData":
        return WindowData(self.current[idx], self.history[idx])


def build_dataset(tensor: CountTensor, masks: DistanceMasks, omega: int) -> WindowData:
    T, V, N = tensor.counts.shape
    K1 = masks.masks.shape[0]
    agg = aggregate_by_distance(tensor.counts, masks)  # (T, N, V, K+1)
    padded = np.concatenate([np.zeros((omega, N, V, K1)), agg], axis=0)
    # history[t, w] = agg[t - 1 - w] = padded[t + omega - 1 - w]
    hist = np.stack([padded[omega - 1 - w: omega - 1 - w + T] for w in range(omega)], axis=1)  # (T, omega, N, V, K1)
    hist = hist.transpose(0, 2, 1, 3, 4).reshape(T * N, omega, V, K1)
    cur = tensor.counts.transpose(0, 2, 1).reshape(T * N, V).astype(float)
    return WindowData(cur, hist)


def apply_mode(config: TrainConfig, masks: DistanceMasks, tensor: CountTensor):
    """Adjust (config, masks, tensor) for an ablation mode.

    * ``no_topology``: only the own-node mask (K = 0).
    * ``merged``: all nodes summed into one; K = 0 since a single node has no neighbours.
    * ``no_constraints``: lambda_c = lambda_s = 0.
    """
    if config.mode == "full":
        return config, masks, tensor
    if config.mode == "no_topology":
        return dataclasses.replace(config, k_max=0), masks.truncate(0), tensor
    if config.mode == "merged":
        return dataclasses.replace(config, k_max=0), DistanceMasks(np.ones((1, 1, 1))), merge_nodes(tensor)
    if config.mode == "no_constraints":
        return dataclasses.replace(config, lambda_c=0.0, lambda_s=0.0), masks, tensor
    raise ValueError(f"unknown mode {config.mode!r}")


def kl_bernoulli(q, p):
    q = np.clip(q, PROB_EPS, 1 - PROB_EPS)
    p = np.clip(p, PROB_EPS, 1 - PROB_EPS)
    out = q * np.log(q / p) + (1 - q) * np.log((1 - q) / (1 - p))
    return float(out) if np.ndim(out) == 0 else out


def elbo_batch(model: TnparModel, batch: WindowData, config: TrainConfig, rng=None, *, noise=None,
               grads=False):
    """Loss terms for one mini-batch, optionally with parameter gradients.

    One Gumbel draw per datum; pass ``noise`` of shape ``(2, S, K+1, V, V)`` to
    freeze it. Returns ``LossBreakdown`` or ``(LossBreakdown, grads)`` with
    grads ordered like ``model.params``.
    """
    S, V = batch.current.shape
    W, K1 = model.omega, model.k_max + 1
    beta, tau, delta = model.beta, model.tau, model.delta

    x_enc = np.concatenate([batch.current, batch.history.reshape(S, -1)], axis=1)
    z, enc_cache = forward(model.encoder, x_enc)
    z = z.reshape(S, K1, V, V)
    q_raw = expit(beta * z)
    inside = (q_raw > PROB_EPS) & (q_raw < 1 - PROB_EPS)
    q = np.clip(q_raw, PROB_EPS, 1 - PROB_EPS)
    if noise is None:
        noise = gumbel_noise(rng, (S, K1, V, V))
    u = (np.log(q) - np.log1p(-q) + noise[1] - noise[0]) / tau
    soft = expit(u)

    # decoder input per (datum, target type j): history[w, i, k] * A[k, i, j]
    a_t = soft.transpose(0, 3, 2, 1)  # (S, j, i, k)
    filtered = batch.history[:, None] * a_t[:, :, None]  # (S, j, w, i, k)
    onehot = np.broadcast_to(np.eye(V), (S, V, V))
    x_dec = np.concatenate([filtered.reshape(S, V, -1), onehot], axis=2).reshape(S * V, -1)
    r, dec_cache = forward(model.decoder, x_dec)
    r = r.reshape(S, V)
    lam = np.logaddexp(0.0, r) + LAMBDA_FLOOR
    o = batch.current
    rate = lam * delta
    ll = o * np.log(rate) - rate - gammaln(o + 1.0)
    reconstruction = ll.sum(axis=1).mean()

    kl_terms = kl_bernoulli(q, config.prior_p)
    kl = kl_terms.reshape(S, -1).sum(axis=1).mean()
    q_mean = q_raw.mean(axis=0)
    acyc, dh_dg = acyclicity_h_grad(aggregate_g(q_mean))
    sparsity = q_mean.sum()
    elbo = reconstruction - kl
    total = -elbo + config.lambda_c * acyc + config.lambda_s * sparsity
    loss = LossBreakdown(float(elbo), float(reconstruction), float(kl), float(acyc), float(sparsity), float(total))
    if not grads:
        return loss

    # d total / d r
    d_ll = -1.0 / S
    d_lam = d_ll * (o / lam - delta)
    d_r = d_lam * expit(r)
    dec_grads, d_xdec = backward(model.decoder, dec_cache, d_r.reshape(S * V, 1))
    d_filtered = d_xdec.reshape(S, V, -1)[:, :, : W * V * K1].reshape(S, V, W, V, K1)
    d_at = (d_filtered * batch.history[:, None]).sum(axis=2)  # (S, j, i, k)
    d_soft = d_at.transpose(0, 3, 2, 1)
    d_u = d_soft * soft * (1 - soft)
    d_q = d_u * (1.0 / q + 1.0 / (1 - q)) / tau
    p = np.clip(config.prior_p, PROB_EPS, 1 - PROB_EPS)
    d_q += (np.log(q / p) - np.log((1 - q) / (1 - p))) / S
    d_qraw = d_q * inside
    g_pen = config.lambda_c * dh_dg
    np.fill_diagonal(g_pen, 0.0)
    d_qraw += (g_pen[None, None] + config.lambda_s) / S
    d_z = d_qraw * beta * q_raw * (1 - q_raw)
    enc_grads, _ = backward(model.encoder, enc_cache, d_z.reshape(S, -1))
    return loss, enc_grads + dec_grads


def mean_posterior(model: TnparModel, data: WindowData, chunk: int = 4096) -> np.ndarray:
    """Posterior edge probabilities averaged over every window in ``data``."""
    total = np.zeros((model.k_max + 1, model.type_count, model.type_count))
    for start in range(0, len(data), chunk):
        part = data.subset(slice(start, start + chunk))
        x = np.concatenate([part.current, part.history.reshape(len(part), -1)], axis=1)
        z, _ = forward(model.encoder, x)
        total += expit(model.beta * z).reshape(len(part), *total.shape).sum(axis=0)
    return total / max(len(data), 1)


@dataclass
class TrainResult:
    posterior: CausalTensor
    model: TnparModel
    enc_opt: AdamState
    dec_opt: AdamState
    log: list[dict] = field(default_factory=list)
    config: TrainConfig | None = None


def train(tensor: CountTensor, masks: DistanceMasks, config: TrainConfig) -> TrainResult:
    """Fit encoder and decoder jointly with Adam on shuffled mini-batches.

    ``masks`` must hold at least ``config.k_max + 1`` slices. The ablation
    mode is applied here.
    """
    if tensor.counts.size == 0 or tensor.bin_count == 0:
        raise ValueError("cannot train on an empty dataset")
    if masks.k_max < config.k_max:
        raise ValueError(f"masks have K={masks.k_max}, config needs K={config.k_max}")
    masks = masks.truncate(config.k_max)
    config, masks, tensor = apply_mode(config, masks, tensor)
    data = build_dataset(tensor, masks, config.omega)

    rng = np.random.default_rng(config.seed)
    model = TnparModel.init(tensor.type_count, config, rng)
    # start the decoder at the empirical mean intensity
    mean_rate = max(float(data.current.mean()) / config.delta, 10 * LAMBDA_FLOOR)
    model.decoder.params[-1][:] = np.log(np.expm1(mean_rate))
    enc_opt = AdamState.for_params(model.encoder.params, lr=config.learning_rate)
    dec_opt = AdamState.for_params(model.decoder.params, lr=config.learning_rate)
    n_enc = len(model.encoder.params)

    history = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(data))
        sums = np.zeros(6)
        n_batches = 0
        for start in range(0, len(data), config.batch_size):
            batch = data.subset(order[start:start + config.batch_size])
            loss, g = elbo_batch(model, batch, config, rng, grads=True)
            vals = dataclasses.astuple(loss)
            if not np.all(np.isfinite(vals)) or not all(np.all(np.isfinite(x)) for x in g):
                raise TrainingDiverged(f"non-finite loss in epoch {epoch}: {loss}", epoch - 1)
            adam_step(enc_opt, model.encoder.params, g[:n_enc])
            adam_step(dec_opt, model.decoder.params, g[n_enc:])
            sums += vals
            n_batches += 1
        means = sums / n_batches
        row = {"epoch": epoch, "reconstruction": means[1], "kl": means[2], "acyclicity": means[3],
               "sparsity": means[4], "total": means[5]}
        history.append(row)
        log.debug("epoch %d total %.6f recon %.6f kl %.6f", epoch, means[5], means[1], means[2])

    posterior = CausalTensor(np.clip(mean_posterior(model, data), 0.0, 1.0))
    return TrainResult(posterior, model, enc_opt, dec_opt, history, config)
