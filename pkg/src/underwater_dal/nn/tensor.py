from typing import Optional

import numpy as np

from ..lib.errors import ShapeError


class Tensor:
    """Row-major float array with an optional gradient buffer of the same shape."""

    __slots__ = ("data", "grad")

    def __init__(self, data, grad: Optional[np.ndarray] = None):
        self.data = np.ascontiguousarray(data)
        self.grad = None
        if grad is not None:
            self.set_grad(grad)

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def set_grad(self, grad):
        grad = np.asarray(grad)
        if grad.shape != self.data.shape:
            raise ShapeError(f"gradient shape {grad.shape} does not match tensor shape {self.data.shape}")
        self.grad = grad

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"
