"""
Mixture density network and kernel mixture network estimators.

Both put a mixture head on a tanh MLP and train it by minibatch Adam on the
negative conditional log-likelihood, with Gaussian noise added to every
minibatch and optional standardization of x and y. The fitted mixture is
mapped back to the original units with the affine mixture transform.
"""

import logging
from typing import Callable, NamedTuple, Optional, Tuple, Union

import numpy as np
from scipy.special import expit, logsumexp, softmax

from app.core.errors import ConfigurationError, EstimatorStateError, InputShapeError, TrainingDivergenceError
from app.models.configs import KmnConfig, MdnConfig
from app.models.schemas import EstimatorDocument, EstimatorKind
from app.services.estimator import ConditionalDensityEstimator, Dataset, NormalizationStats, normalize_fit
from app.services.gmm import GaussianMixture, as_points
from app.services.nn_core import AdamState, Mlp, adam_step, backward_from_trace, forward_trace, mlp_forward

logger = logging.getLogger(__name__)

_LOG_2PI = np.log(2.0 * np.pi)
_TINY = np.finfo(np.float64).tiny
SeedLike = Union[int, np.random.Generator, None]


def softplus(a: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, a)


# ---------------------------------------------------------------------------
# Heads
# ---------------------------------------------------------------------------

class MdnHead:
    """
    Raw output layout ``[logits (K), means (K*m), scale pre-activations (K*m)]``.

    Weights are a softmax of the logits, means are linear and scales are the
    softplus of their pre-activations.
    """

    def __init__(self, n_components: int, y_dim: int):
        self.n_components = n_components
        self.y_dim = y_dim

    @property
    def n_outputs(self) -> int:
        return self.n_components * (1 + 2 * self.y_dim)

    @property
    def extra_params(self) -> np.ndarray:
        return np.zeros(0)

    def set_extra_params(self, values: np.ndarray):
        pass

    def _split(self, raw: np.ndarray):
        K, m = self.n_components, self.y_dim
        if raw.shape[-1] != self.n_outputs:
            raise InputShapeError(f"MDN head expects {self.n_outputs} raw outputs, got {raw.shape[-1]}")
        logits = raw[..., :K]
        means = raw[..., K:K + K * m].reshape(raw.shape[:-1] + (K, m))
        pre = raw[..., K + K * m:].reshape(raw.shape[:-1] + (K, m))
        return logits, means, pre

    def mixture(self, raw: np.ndarray) -> GaussianMixture:
        logits, means, pre = self._split(np.asarray(raw, dtype=np.float64))
        return GaussianMixture(softmax(logits), means, np.maximum(softplus(pre), _TINY))

    def batch_components(self, raw: np.ndarray):
        """Weights (n, K), means and scales (n, K, m) for a batch of raw outputs."""
        logits, means, pre = self._split(raw)
        return softmax(logits, axis=1), means, np.maximum(softplus(pre), _TINY)

    def initialize_network(self, net: Mlp):
        """Spread the initial component means evenly over [-1.5, 1.5]."""
        output = net.layers()[-1]
        K, m = self.n_components, self.y_dim
        starts = np.linspace(-1.5, 1.5, K) if K > 1 else np.zeros(1)
        output.b[K:K + K * m] = np.repeat(starts, m)

    def log_likelihood(self, raw: np.ndarray, y: np.ndarray) -> np.ndarray:
        return self._evaluate(raw, y, with_grad=False)[0]

    def loss_and_grad(self, raw: np.ndarray, y: np.ndarray):
        """
        Per-sample negative log-likelihood and its gradient.

        Returns:
            (losses (B,), d_raw (B, out), d_extra (0,))
        """
        log_p, d_raw = self._evaluate(raw, y, with_grad=True)
        return -log_p, d_raw, np.zeros(0)

    def _evaluate(self, raw: np.ndarray, y: np.ndarray, with_grad: bool):
        logits, means, pre = self._split(raw)
        sigma = np.maximum(softplus(pre), _TINY)
        log_w = logits - logsumexp(logits, axis=1, keepdims=True)
        z = (y[:, None, :] - means) / sigma
        log_comp = log_w - 0.5 * np.sum(z * z, axis=2) - np.sum(np.log(sigma), axis=2) - 0.5 * self.y_dim * _LOG_2PI
        log_p = logsumexp(log_comp, axis=1)
        if not with_grad:
            return log_p, None

        resp = np.exp(log_comp - log_p[:, None])
        weights = np.exp(log_w)
        d_logits = weights - resp
        d_means = -resp[:, :, None] * z / sigma
        d_sigma = -resp[:, :, None] * (z * z - 1.0) / sigma
        d_pre = d_sigma * expit(pre)
        d_raw = np.concatenate(
            [d_logits, d_means.reshape(raw.shape[0], -1), d_pre.reshape(raw.shape[0], -1)], axis=1
        )
        return log_p, d_raw


class KmnHead:
    """
    Network emits only logits over ``centers x scales``; component ``k*S + s``
    sits at center ``k`` with scale ``exp(log_scales[s])`` in every dimension.
    """

    def __init__(self, centers: np.ndarray, log_scales: np.ndarray, trainable: bool = True):
        self.centers = np.asarray(centers, dtype=np.float64)
        if self.centers.ndim == 1:
            self.centers = self.centers[:, None]
        self.log_scales = np.asarray(log_scales, dtype=np.float64).ravel()
        self.trainable = trainable

    @property
    def n_centers(self) -> int:
        return self.centers.shape[0]

    @property
    def n_scales(self) -> int:
        return self.log_scales.size

    @property
    def y_dim(self) -> int:
        return self.centers.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.n_centers * self.n_scales

    @property
    def extra_params(self) -> np.ndarray:
        return self.log_scales.copy() if self.trainable else np.zeros(0)

    def set_extra_params(self, values: np.ndarray):
        if self.trainable:
            self.log_scales = np.array(values, dtype=np.float64)

    def initialize_network(self, net: Mlp):
        pass

    def _component_arrays(self) -> Tuple[np.ndarray, np.ndarray]:
        means = np.repeat(self.centers, self.n_scales, axis=0)
        log_sigma = np.tile(self.log_scales, self.n_centers)
        return means, log_sigma

    def mixture(self, raw: np.ndarray) -> GaussianMixture:
        raw = np.asarray(raw, dtype=np.float64)
        if raw.shape[-1] != self.n_outputs:
            raise InputShapeError(f"KMN head expects {self.n_outputs} logits, got {raw.shape[-1]}")
        means, log_sigma = self._component_arrays()
        scales = np.repeat(np.exp(log_sigma)[:, None], self.y_dim, axis=1)
        return GaussianMixture(softmax(raw), means, scales)

    def batch_components(self, raw: np.ndarray):
        means, log_sigma = self._component_arrays()
        n = raw.shape[0]
        scales = np.broadcast_to(np.exp(log_sigma)[None, :, None], (n, means.shape[0], self.y_dim))
        return softmax(raw, axis=1), np.broadcast_to(means, (n,) + means.shape), scales

    def log_likelihood(self, raw: np.ndarray, y: np.ndarray) -> np.ndarray:
        return self._evaluate(raw, y, with_grad=False)[0]

    def loss_and_grad(self, raw: np.ndarray, y: np.ndarray):
        log_p, d_raw, d_log_scales = self._evaluate(raw, y, with_grad=True)
        d_extra = d_log_scales if self.trainable else np.zeros(0)
        return -log_p, d_raw, d_extra

    def _evaluate(self, raw: np.ndarray, y: np.ndarray, with_grad: bool):
        if raw.shape[-1] != self.n_outputs:
            raise InputShapeError(f"KMN head expects {self.n_outputs} logits, got {raw.shape[-1]}")
        means, log_sigma = self._component_arrays()
        m = self.y_dim
        log_w = raw - logsumexp(raw, axis=1, keepdims=True)
        z = (y[:, None, :] - means[None, :, :]) / np.exp(log_sigma)[None, :, None]
        sq = np.sum(z * z, axis=2)
        log_comp = log_w - 0.5 * sq - m * log_sigma - 0.5 * m * _LOG_2PI
        log_p = logsumexp(log_comp, axis=1)
        if not with_grad:
            return log_p, None, None

        resp = np.exp(log_comp - log_p[:, None])
        d_raw = np.exp(log_w) - resp
        # d(-log p)/d log_sigma_k = -resp_k * (sum_j z_j^2 - m)
        d_comp = -resp * (sq - m)
        d_log_scales = d_comp.sum(axis=0).reshape(self.n_centers, self.n_scales).sum(axis=0)
        return log_p, d_raw, d_log_scales


Head = Union[MdnHead, KmnHead]


def mdn_head(raw, n_components: int, y_dim: int) -> GaussianMixture:
    """Mixture from one raw MDN output vector of length ``K + 2*K*m``."""
    return MdnHead(n_components, y_dim).mixture(raw)


def kmn_head(raw_logits, centers, log_scales) -> GaussianMixture:
    """Mixture from KMN logits over fixed centers and shared scales."""
    return KmnHead(centers, log_scales).mixture(raw_logits)


# ---------------------------------------------------------------------------
# Center selection, noise, loss
# ---------------------------------------------------------------------------

def _kmeans_plus_plus(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    chosen = [int(rng.integers(0, n))]
    dist_sq = np.sum((points - points[chosen[0]]) ** 2, axis=1)
    for _ in range(1, k):
        total = dist_sq.sum()
        if total > 0:
            index = int(rng.choice(n, p=dist_sq / total))
        else:
            remaining = np.setdiff1d(np.arange(n), chosen)
            index = int(rng.choice(remaining))
        chosen.append(index)
        dist_sq = np.minimum(dist_sq, np.sum((points - points[index]) ** 2, axis=1))
    return points[chosen].copy()


def kmn_init_centers(data: Dataset, n_centers: int, seed: SeedLike = None,
                     max_iter: int = 100, tol: float = 1e-6) -> np.ndarray:
    """
    K-means centers of ``data.Y`` (k-means++ seeding, Lloyd iterations).

    Args:
        data: dataset whose targets are clustered (pass normalized data)
        n_centers: number of clusters, at most ``len(data)``
        seed: seed or generator

    Returns:
        ``(n_centers, m)`` array of centers
    """
    points = data.Y
    if n_centers < 1 or n_centers > points.shape[0]:
        raise ConfigurationError(f"n_centers must lie in [1, {points.shape[0]}], got {n_centers}")
    rng = np.random.default_rng(seed)
    centers = _kmeans_plus_plus(points, n_centers, rng)

    for _ in range(max_iter):
        dist_sq = np.sum((points[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        labels = np.argmin(dist_sq, axis=1)
        updated = centers.copy()
        for j in range(n_centers):
            members = labels == j
            if np.any(members):
                updated[j] = points[members].mean(axis=0)
        shift = np.max(np.linalg.norm(updated - centers, axis=1))
        centers = updated
        if shift < tol:
            break
    return centers


def perturb_batch(xb: np.ndarray, yb: np.ndarray, noise_std_x: float, noise_std_y: float,
                  rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """Add i.i.d. Gaussian noise with the given standard deviations to a minibatch."""
    if noise_std_x < 0 or noise_std_y < 0:
        raise ConfigurationError("noise standard deviations must be nonnegative")
    if noise_std_x > 0:
        xb = xb + noise_std_x * rng.standard_normal(xb.shape)
    if noise_std_y > 0:
        yb = yb + noise_std_y * rng.standard_normal(yb.shape)
    return xb, yb


def nll_loss_and_grad(net: Mlp, head: Head, xb: np.ndarray, yb: np.ndarray,
                      batch_index: Optional[int] = None) -> Tuple[float, np.ndarray]:
    """
    Summed negative log-likelihood of a batch and its gradient.

    The gradient is laid out as the network's flat parameters followed by
    the head's trainable parameters (KMN log-scales when trainable).
    """
    xb = np.atleast_2d(np.asarray(xb, dtype=np.float64))
    yb, _ = as_points(yb, head.y_dim)
    if xb.shape[0] == 0 or xb.shape[0] != yb.shape[0]:
        raise InputShapeError("batch must be nonempty with matching x and y rows")

    trace = forward_trace(net, xb)
    losses, d_raw, d_extra = head.loss_and_grad(trace.output, yb)
    loss = float(np.sum(losses))
    if not np.isfinite(loss):
        raise TrainingDivergenceError("non-finite training loss", batch_index)
    grad = np.concatenate([backward_from_trace(net, trace, d_raw), d_extra])
    return loss, grad


class TaylorCheck(NamedTuple):
    lhs: float
    rhs: float
    stderr: float


def noise_reg_taylor_check(
    loss_fn: Callable[[np.ndarray], np.ndarray],
    x0,
    eta: float,
    n_mc: int,
    seed: SeedLike = 0,
    step: float = 1e-3,
    chunk: int = 100_000,
) -> TaylorCheck:
    """
    Compare the expected loss under Gaussian input noise with its
    second-order expansion ``L(x0) + eta**2 / 2 * tr(H)``.

    Args:
        loss_fn: vectorized loss taking an ``(n, d)`` array and returning ``(n,)``
        x0: expansion point
        eta: noise standard deviation
        n_mc: Monte Carlo sample count for the left-hand side
        step: finite-difference step for the Hessian diagonal

    Returns:
        TaylorCheck(lhs, rhs, stderr) with the Monte Carlo standard error of lhs
    """
    x0 = np.asarray(x0, dtype=np.float64).ravel()
    base = float(np.asarray(loss_fn(x0[None, :])).ravel()[0])
    if eta == 0:
        return TaylorCheck(base, base, 0.0)

    d = x0.size
    shifts = np.vstack([x0 + step * np.eye(d), x0 - step * np.eye(d)])
    shifted = np.asarray(loss_fn(shifts), dtype=np.float64).ravel()
    trace_h = float(np.sum((shifted[:d] + shifted[d:] - 2.0 * base) / step ** 2))
    rhs = base + 0.5 * eta ** 2 * trace_h

    rng = np.random.default_rng(seed)
    total, total_sq, done = 0.0, 0.0, 0
    while done < n_mc:
        size = min(chunk, n_mc - done)
        values = np.asarray(loss_fn(x0 + eta * rng.standard_normal((size, d))), dtype=np.float64).ravel()
        total += values.sum()
        total_sq += np.dot(values, values)
        done += size
    lhs = total / n_mc
    variance = max(total_sq / n_mc - lhs * lhs, 0.0)
    return TaylorCheck(lhs, rhs, float(np.sqrt(variance / n_mc)))


# ---------------------------------------------------------------------------
# Estimators
# ---------------------------------------------------------------------------

class _NeuralEstimator(ConditionalDensityEstimator):
    config: Union[MdnConfig, KmnConfig]

    def __init__(self, config):
        super().__init__()
        self.config = config
        self.net: Optional[Mlp] = None
        self.head: Optional[Head] = None
        self.loss_history: list = []

    def _build_head(self, train: Dataset, rng: np.random.Generator) -> Head:
        raise NotImplementedError

    def _pack(self) -> np.ndarray:
        return np.concatenate([self.net.params, self.head.extra_params])

    def _unpack(self, params: np.ndarray):
        n_net = self.net.params.size
        self.net.params = params[:n_net].copy()
        self.head.set_extra_params(params[n_net:])

    @property
    def parameters(self) -> np.ndarray:
        """Flat trainable parameters (network, then head)."""
        return self._pack()

    def fit(self, data: Dataset) -> "_NeuralEstimator":
        """
        Train with shuffled minibatch Adam for ``config.epochs`` epochs.

        Noise is added to each minibatch in the normalized coordinates. The
        last partial minibatch of an epoch is kept.
        """
        cfg = self.config
        rng = np.random.default_rng(cfg.seed)
        if cfg.data_normalization:
            stats, train = normalize_fit(data)
        else:
            stats, train = NormalizationStats.identity(data.x_dim, data.y_dim), data

        self.head = self._build_head(train, rng)
        layer_sizes = (data.x_dim, *cfg.hidden_sizes, self.head.n_outputs)
        self.net = Mlp.initialize(layer_sizes, seed=rng, weight_norm=cfg.weight_norm)
        self.head.initialize_network(self.net)

        params = self._pack()
        adam = AdamState.zeros(params.size, lr=cfg.learning_rate)
        n = len(train)
        batch_size = min(cfg.batch_size, n)
        self.loss_history = []

        logger.info(
            f"Training {self.kind.value} on {n} samples: {cfg.epochs} epochs, batch {batch_size}, "
            f"noise ({cfg.noise_std_x}, {cfg.noise_std_y})"
        )
        for epoch in range(cfg.epochs):
            order = rng.permutation(n)
            epoch_loss = 0.0
            for batch_index, start in enumerate(range(0, n, batch_size)):
                idx = order[start:start + batch_size]
                xb, yb = perturb_batch(train.X[idx], train.Y[idx], cfg.noise_std_x, cfg.noise_std_y, rng)
                loss, grad = nll_loss_and_grad(self.net, self.head, xb, yb, batch_index)
                params = adam_step(adam, params, grad)
                self._unpack(params)
                epoch_loss += loss
            self.loss_history.append(epoch_loss / n)
            if (epoch + 1) % 100 == 0:
                logger.info(f"epoch {epoch + 1}/{cfg.epochs}: mean loss {epoch_loss / n:.6f}")

        self._bind(stats, data.x_dim, data.y_dim)
        return self

    def _normalized_conditional(self, x_norm: np.ndarray, x: np.ndarray) -> GaussianMixture:
        return self.head.mixture(mlp_forward(self.net, x_norm))

    def log_pdf_rows(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        X, Y = self._rows(X, Y)
        raw = forward_trace(self.net, self.stats.normalize_x(X)).output
        return self.head.log_likelihood(raw, self.stats.normalize_y(Y)) - self.stats.log_jacobian_y

    def mean_std_rows(self, X) -> Tuple[np.ndarray, np.ndarray]:
        if not self.is_fitted:
            raise EstimatorStateError(f"{type(self).__name__} must be fitted before querying")
        X = np.asarray(X, dtype=np.float64)
        X = X[:, None] if X.ndim == 1 else X
        if X.shape[1:] != (self.x_dim,):
            raise InputShapeError(f"expected X (n, {self.x_dim}), got {X.shape}")
        raw = forward_trace(self.net, self.stats.normalize_x(X)).output
        weights, means, scales = self.head.batch_components(raw)
        mean = np.einsum("nk,nkm->nm", weights, means)
        second = np.einsum("nk,nkm->nm", weights, scales ** 2 + means ** 2)
        std = np.sqrt(np.maximum(second - mean ** 2, 0.0))
        return mean * self.stats.sigma_y + self.stats.mu_y, std * self.stats.sigma_y

    def config_dict(self) -> dict:
        return self.config.model_dump(mode="json")


class MixtureDensityNetwork(_NeuralEstimator):
    kind = EstimatorKind.MDN

    def __init__(self, config: Optional[MdnConfig] = None):
        super().__init__(config or MdnConfig())

    def _build_head(self, train: Dataset, rng: np.random.Generator) -> MdnHead:
        return MdnHead(self.config.n_components, train.y_dim)

    def _document_fields(self) -> dict:
        return {"network": self.net.to_document(), "loss_history": list(self.loss_history)}

    @classmethod
    def from_document(cls, doc: EstimatorDocument) -> "MixtureDensityNetwork":
        est = cls(MdnConfig(**doc.config))
        est.net = Mlp.from_document(doc.network)
        est.head = MdnHead(est.config.n_components, doc.y_dim)
        est.loss_history = list(doc.loss_history)
        est._bind(NormalizationStats.from_document(doc.stats), doc.x_dim, doc.y_dim)
        return est


class KernelMixtureNetwork(_NeuralEstimator):
    kind = EstimatorKind.KMN

    def __init__(self, config: Optional[KmnConfig] = None):
        super().__init__(config or KmnConfig())

    def _build_head(self, train: Dataset, rng: np.random.Generator) -> KmnHead:
        cfg = self.config
        n_centers = cfg.n_centers
        if n_centers > len(train):
            logger.warning(f"KMN asks for {n_centers} centers but only {len(train)} samples; clipping")
            n_centers = len(train)
        centers = kmn_init_centers(train, n_centers, seed=rng)
        return KmnHead(centers, np.log(cfg.init_scales), trainable=cfg.train_scales)

    def _document_fields(self) -> dict:
        return {
            "network": self.net.to_document(),
            "centers": self.head.centers.tolist(),
            "log_scales": self.head.log_scales.tolist(),
            "loss_history": list(self.loss_history),
        }

    @classmethod
    def from_document(cls, doc: EstimatorDocument) -> "KernelMixtureNetwork":
        est = cls(KmnConfig(**doc.config))
        est.net = Mlp.from_document(doc.network)
        est.head = KmnHead(doc.centers, doc.log_scales, trainable=est.config.train_scales)
        est.loss_history = list(doc.loss_history)
        est._bind(NormalizationStats.from_document(doc.stats), doc.x_dim, doc.y_dim)
        return est
