"""Token containers: flat sequences and sequences that remember their latent grid."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .tensor_kernels import as_tensor


@dataclass(frozen=True)
class ImageTokenGrid:
    """``N x d`` tokens in row-major raster order over an ``H x W`` latent."""

    tokens: np.ndarray
    height: int
    width: int

    def __post_init__(self):
        t = as_tensor(self.tokens)
        object.__setattr__(self, "tokens", t)
        if t.ndim != 2:
            raise ShapeError(f"grid tokens must be N x d, got {t.shape}")
        if self.height < 0 or self.width < 0 or t.shape[0] != self.height * self.width:
            raise ShapeError(f"{t.shape[0]} tokens do not fill a {self.height}x{self.width} grid")

    @property
    def n(self) -> int:
        return self.tokens.shape[0]

    @property
    def dim(self) -> int:
        return self.tokens.shape[1]

    def to_image(self) -> np.ndarray:
        """Channels-first ``d x H x W`` view."""
        return np.ascontiguousarray(self.tokens.T.reshape(self.dim, self.height, self.width))

    @classmethod
    def from_image(cls, img: np.ndarray) -> "ImageTokenGrid":
        img = as_tensor(img)
        if img.ndim != 3:
            raise ShapeError(f"expected d x H x W, got {img.shape}")
        d, h, w = img.shape
        return cls(img.reshape(d, h * w).T, h, w)

    def with_tokens(self, tokens: np.ndarray) -> "ImageTokenGrid":
        return ImageTokenGrid(tokens, self.height, self.width)


def tokens_of(x) -> np.ndarray:
    return x.tokens if isinstance(x, ImageTokenGrid) else as_tensor(x)
