"""Supervised autoencoder pretraining and per-class latent Gaussian priors.

The pretraining objective is the sum of a reconstruction term (mean
per-sample L2 norm of the pixel residual, the unsquared norm) and the
negative log-likelihood of the encoder's class head. After pretraining,
each class's encoded latents are summarized by a multivariate normal
(mean + full covariance) whose Cholesky factor drives generator sampling.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .data import batch_iter
from .errors import DivergenceError

PROB_FLOOR = 1e-12


@dataclass
class ClassPriors:
    """Per-class latent Gaussians: mean, covariance, and sampling factor."""

    mean: np.ndarray  # (C, q)
    cov: np.ndarray  # (C, q, q), symmetric PSD
    epsilon: float  # diagonal loading added before factorization
    class_counts: np.ndarray  # (C,) training sample counts
    chol: np.ndarray | None = None  # (C, q, q) lower factors of cov + eps*I

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.cov = np.asarray(self.cov, dtype=np.float64)
        self.class_counts = np.asarray(self.class_counts, dtype=np.int64)
        c, q = self.mean.shape
        if self.cov.shape != (c, q, q):
            raise ValueError(
                f"cov shape {self.cov.shape} does not match mean shape {self.mean.shape}"
            )
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        asym = np.abs(self.cov - np.transpose(self.cov, (0, 2, 1))).max()
        if asym > 1e-6:
            raise ValueError(f"covariance asymmetry {asym:.3g} exceeds 1e-6")
        if self.chol is None:
            eye = np.eye(q)
            self.chol = np.linalg.cholesky(self.cov + self.epsilon * eye)

    @property
    def num_classes(self) -> int:
        return self.mean.shape[0]

    @property
    def latent_dim(self) -> int:
        return self.mean.shape[1]


@dataclass
class SlpplHistory:
    """Per-epoch averages of the two pretraining loss components."""

    l_rec: list = field(default_factory=list)
    l_bce: list = field(default_factory=list)
    l_total: list = field(default_factory=list)

    def append(self, rec: float, bce: float):
        self.l_rec.append(rec)
        self.l_bce.append(bce)
        self.l_total.append(rec + bce)

    def __len__(self) -> int:
        return len(self.l_total)


@dataclass
class SlpplConfig:
    epochs: int = 30
    batch_size: int = 64
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    seed: int = 0


def _image_target(x, like: torch.Tensor) -> torch.Tensor:
    """Channels-last torch view of a batch, in the dtype of `like`."""
    if isinstance(x, np.ndarray):
        x = torch.from_numpy(np.ascontiguousarray(x))
    return x.to(like.dtype)


def _residual_norm(x, rec: torch.Tensor) -> torch.Tensor:
    target = _image_target(x, rec)
    residual = (target - rec).reshape(len(rec), -1)
    return torch.linalg.vector_norm(residual, dim=1).mean()


def _nll(probs: torch.Tensor, y) -> torch.Tensor:
    y_t = torch.as_tensor(np.asarray(y, dtype=np.int64))
    p_true = probs[torch.arange(len(y_t)), y_t].clamp(min=PROB_FLOOR)
    return (-torch.log(p_true)).mean()


def _loss_terms(x, y, bundle):
    """One encoder pass shared by both loss components."""
    z, probs = bundle.encode(x)
    rec = bundle.decode(z)
    return _residual_norm(x, rec), _nll(probs, y)


def loss_rec(x_batch, bundle) -> torch.Tensor:
    """Mean per-sample L2 norm of the reconstruction residual (unsquared)."""
    z, _ = bundle.encode(x_batch)
    return _residual_norm(x_batch, bundle.decode(z))


def loss_bce(x_batch, y_batch, bundle) -> torch.Tensor:
    """Mean negative log-probability of the true class under the encoder head."""
    _, probs = bundle.encode(x_batch)
    return _nll(probs, y_batch)


def train_slppl(data, bundle, config: SlpplConfig):
    """Adam pretraining of encoder + decoder on the joint loss.

    Mutates `bundle` in place and returns (bundle, history). Raises a
    divergence error carrying the epoch and partial history if any loss
    stops being finite.
    """
    params = list(bundle.enc.parameters()) + list(bundle.dec.parameters())
    opt = torch.optim.Adam(params, lr=config.lr, betas=(config.beta1, config.beta2))
    history = SlpplHistory()
    for epoch in range(config.epochs):
        rec_sum, bce_sum, batches = 0.0, 0.0, 0
        for x, y in batch_iter(data, config.batch_size, seed=config.seed, epoch=epoch):
            l_rec_t, l_bce_t = _loss_terms(x, y, bundle)
            loss = l_rec_t + l_bce_t
            if not torch.isfinite(loss):
                raise DivergenceError(
                    f"pretraining loss became non-finite at epoch {epoch}",
                    epoch=epoch,
                    history=history,
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            rec_sum += float(l_rec_t.detach())
            bce_sum += float(l_bce_t.detach())
            batches += 1
        history.append(rec_sum / batches, bce_sum / batches)
    return bundle, history


def encode_all(data, bundle, batch_size: int = 256) -> tuple[np.ndarray, np.ndarray]:
    """Encode a dataset in chunks; returns (latents float64 (N, q), labels)."""
    images = data.base.images if hasattr(data, "base") else data.images
    labels = data.base.labels if hasattr(data, "base") else data.labels
    chunks = []
    with torch.no_grad():
        for start in range(0, len(labels), batch_size):
            z, _ = bundle.encode(images[start : start + batch_size])
            chunks.append(z.numpy().astype(np.float64))
    return np.concatenate(chunks), labels


def fit_class_priors(
    data, bundle, epsilon: float = 1e-4, diagonal_only: bool = False
) -> ClassPriors:
    """Fit mean + biased covariance of encoded latents per class.

    `diagonal_only` drops off-diagonal covariance as an ablation mode.
    """
    latents, labels = encode_all(data, bundle)
    c = data.num_classes
    q = latents.shape[1]
    mean = np.zeros((c, q))
    cov = np.zeros((c, q, q))
    counts = np.zeros(c, dtype=np.int64)
    for k in range(c):
        zk = latents[labels == k]
        if len(zk) == 0:
            raise ValueError(f"class {k} has no samples to fit a prior")
        counts[k] = len(zk)
        mean[k] = zk.mean(axis=0)
        centered = zk - mean[k]
        cov[k] = centered.T @ centered / len(zk)
        if diagonal_only:
            cov[k] = np.diag(np.diag(cov[k]))
    return ClassPriors(mean=mean, cov=cov, epsilon=epsilon, class_counts=counts)


def sample_prior(priors: ClassPriors, class_idx: int, n: int, seed) -> np.ndarray:
    """Draw n latents from class `class_idx`: mu + chol @ u, u ~ N(0, I)."""
    if not 0 <= class_idx < priors.num_classes:
        raise ValueError(
            f"class {class_idx} outside [0, {priors.num_classes})"
        )
    rng = np.random.default_rng(seed)
    u = rng.standard_normal((n, priors.latent_dim))
    return priors.mean[class_idx] + u @ priors.chol[class_idx].T
