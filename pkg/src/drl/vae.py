"""
Convolutional beta-VAE: encoder to (mu, log_var), reparameterized sampling,
transpose-convolutional decoder and the negated ELBO.
"""
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from src.models.data_model import ModelConfig
from src.ndgrad import ops
from src.ndgrad.errors import NonFiniteError, ShapeError
from src.ndgrad.losses import squared_error_sum
from src.ndgrad.nn import BatchNorm2d, Conv2d, ConvTranspose2d, LeakyReLU, Linear, Module, Sequential
from src.ndgrad.tensor import Tensor, as_tensor


@dataclass
class LatentPosterior:
    mu: Tensor
    log_var: Tensor

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(0.5 * self.log_var.data)


def as_image_batch(x, image_size: int) -> Tensor:
    """Accept (B, S, S) or (B, 1, S, S) and return (B, 1, S, S)."""
    x = as_tensor(x)
    if x.ndim == 3:
        x = x.reshape((x.shape[0], 1, x.shape[1], x.shape[2]))
    if x.ndim != 4 or x.shape[1:] != (1, image_size, image_size):
        raise ShapeError("encode", [x.shape], f"expected (B, 1, {image_size}, {image_size})")
    return x


class Encoder(Module):
    """Stride-2 conv blocks (conv, batch norm, leaky ReLU), then linear heads for mu and log_var."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, variational: bool = True):
        super().__init__()
        self.image_size = cfg.image_size
        self.latent_dim = cfg.latent_dim
        self.variational = variational
        layers: List[Module] = []
        in_channels = 1
        for width in cfg.filters:
            layers += [Conv2d(in_channels, width, rng), BatchNorm2d(width), LeakyReLU(cfg.slope)]
            in_channels = width
        self.blocks = Sequential(*layers)
        self.final_side = cfg.image_size // 2 ** len(cfg.filters)
        self.flat_features = in_channels * self.final_side ** 2
        self.mu_head = Linear(self.flat_features, cfg.latent_dim, rng)
        if variational:
            self.logvar_head = Linear(self.flat_features, cfg.latent_dim, rng)

    def features(self, x) -> Tensor:
        x = as_image_batch(x, self.image_size)
        h = self.blocks(x)
        return h.reshape((h.shape[0], self.flat_features))

    def forward(self, x) -> LatentPosterior:
        h = self.features(x)
        mu = self.mu_head(h)
        if not self.variational:
            return LatentPosterior(mu, as_tensor(np.zeros(mu.shape)))
        return LatentPosterior(mu, self.logvar_head(h))


class Decoder(Module):
    """Linear projection to the encoder's final feature map, mirrored transpose-conv blocks, sigmoid output."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__()
        self.latent_dim = cfg.latent_dim
        widths = list(reversed(cfg.filters))
        self.start_channels = widths[0]
        self.start_side = cfg.image_size // 2 ** len(cfg.filters)
        self.project = Linear(cfg.latent_dim, widths[0] * self.start_side ** 2, rng)
        layers: List[Module] = []
        for in_width, out_width in zip(widths, widths[1:]):
            layers += [ConvTranspose2d(in_width, out_width, rng), BatchNorm2d(out_width), LeakyReLU(cfg.slope)]
        layers.append(ConvTranspose2d(widths[-1], 1, rng))
        self.blocks = Sequential(*layers)

    def forward(self, z: Tensor) -> Tensor:
        z = as_tensor(z)
        if z.ndim != 2 or z.shape[1] != self.latent_dim:
            raise ShapeError("decode", [z.shape], f"expected (B, {self.latent_dim})")
        h = self.project(z).reshape((z.shape[0], self.start_channels, self.start_side, self.start_side))
        return ops.sigmoid(self.blocks(h))


def reparameterize(post: LatentPosterior, noise: np.ndarray) -> Tensor:
    """z = mu + exp(log_var / 2) * noise; the noise is a constant, so no gradient reaches it."""
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != post.mu.shape:
        raise ShapeError("reparameterize", [post.mu.shape, noise.shape])
    return post.mu + ops.exp(post.log_var * 0.5) * noise


def kl_divergence(post: LatentPosterior) -> Tensor:
    """Per-sample KL(N(mu, sigma^2) || N(0, I)) = 1/2 sum(mu^2 + sigma^2 - ln sigma^2 - 1)."""
    mu, log_var = post.mu, post.log_var
    return ((mu * mu + ops.exp(log_var) - log_var - 1.0) * 0.5).sum(axis=1)


def reconstruction_error(x: Tensor, x_hat: Tensor) -> Tensor:
    """Per-sample squared error summed over pixels."""
    return squared_error_sum(as_tensor(x), x_hat)


def reconstruction_loss(x, x_hat: Tensor) -> Tensor:
    """Pixel-summed squared error, mean over the batch."""
    x = as_image_batch(x, x_hat.shape[-1])
    return reconstruction_error(x, x_hat).mean()


def elbo_terms(x, x_hat: Tensor, post: LatentPosterior) -> Tuple[Tensor, Tensor]:
    """Batch means of the reconstruction error and the KL term."""
    return reconstruction_loss(x, x_hat), kl_divergence(post).mean()


def elbo_loss(x, x_hat: Tensor, post: LatentPosterior, beta: float) -> Tensor:
    """Negated ELBO: mean over the batch of recon + beta * KL."""
    if beta < 0:
        raise ValueError(f"beta must be non-negative, got {beta}")
    recon, kl = elbo_terms(x, x_hat, post)
    loss = recon + kl * beta
    if not np.isfinite(loss.item()):
        raise NonFiniteError("elbo_loss")
    return loss


def monte_carlo_kl(mu: np.ndarray, log_var: np.ndarray, samples: int,
                   rng: np.random.Generator) -> float:
    """Sample estimate of E_q[ln q(z) - ln p(z)] for one diagonal Gaussian posterior."""
    mu = np.asarray(mu, dtype=np.float64)
    log_var = np.asarray(log_var, dtype=np.float64)
    sigma = np.exp(0.5 * log_var)
    eps = rng.standard_normal((samples, mu.size))
    z = mu + sigma * eps
    log_q = -0.5 * np.sum(eps ** 2 + log_var + np.log(2 * np.pi), axis=1)
    log_p = -0.5 * np.sum(z ** 2 + np.log(2 * np.pi), axis=1)
    return float(np.mean(log_q - log_p))


class BetaVAE(Module):
    """Encoder plus decoder; `variational=False` gives the deterministic autoencoder of the CBM baseline."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, variational: bool = True):
        super().__init__()
        self.cfg = cfg
        self.variational = variational
        self.encoder = Encoder(cfg, rng, variational=variational)
        self.decoder = Decoder(cfg, rng)

    def encode(self, x) -> LatentPosterior:
        return self.encoder(x)

    def decode(self, z: Tensor) -> Tensor:
        return self.decoder(z)

    def forward(self, x, noise: Optional[np.ndarray] = None) -> Tuple[Tensor, LatentPosterior, Tensor]:
        """Returns (x_hat, posterior, z). Without noise, or in deterministic mode, z is the posterior mean."""
        post = self.encode(x)
        z = reparameterize(post, noise) if (self.variational and noise is not None) else post.mu
        return self.decode(z), post, z
