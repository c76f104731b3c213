import numpy as np

from src.ndgrad.tensor import Tensor, no_grad


def latent_traversal(model, z: np.ndarray, dim: int, lo: float = -2.0, hi: float = 2.0, steps: int = 8) -> np.ndarray:
    """Decode z with z[dim] swept linearly over [lo, hi]; returns (steps, H, W)."""
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    if not 0 <= dim < z.size:
        raise IndexError(f"latent dimension {dim} out of range [0, {z.size})")
    if not lo < hi:
        raise ValueError(f"traversal needs lo < hi, got [{lo}, {hi}]")
    if steps < 2:
        raise ValueError(f"traversal needs at least 2 steps, got {steps}")
    latents = np.tile(z, (steps, 1))
    latents[:, dim] = np.linspace(lo, hi, steps)
    was_training = model.training
    model.eval()
    try:
        with no_grad():
            images = model.decode(Tensor(latents)).data
    finally:
        model.train(was_training)
    return images.reshape(steps, images.shape[-2], images.shape[-1])
