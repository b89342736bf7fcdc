import numpy as np


def sgd_step(params, grads, velocities, lr, momentum):
    """In-place momentum SGD: ``v <- momentum*v + g``; ``p <- p - lr*v``."""
    for p, g, v in zip(params, grads, velocities):
        if g is None:
            continue
        v *= momentum
        v += g
        p -= lr * v


class SGD:
    """Momentum SGD over named parameter tensors, velocities zero-initialised.

    ``weight_decay`` adds ``weight_decay * p`` to the gradient of every
    multi-dimensional weight; biases are never decayed.
    """

    def __init__(self, params, momentum=0.9, weight_decay=0.0):
        self.params = list(params)
        self.momentum = float(momentum)
        self.weight_decay = float(weight_decay)
        self.velocities = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def grad_norm(self):
        total = 0.0
        for p in self.params:
            if p.grad is not None:
                total += float(np.vdot(p.grad, p.grad))
        return float(np.sqrt(total))

    def step(self, lr, clip_norm=None):
        factor = 1.0
        if clip_norm:
            norm = self.grad_norm()
            if norm > clip_norm:
                factor = clip_norm / norm
        for p, v in zip(self.params, self.velocities):
            g = p.grad
            if g is None:
                continue
            v *= self.momentum
            if factor != 1.0:
                g = g * factor
            v += g
            if self.weight_decay and p.data.ndim >= 2:
                v += self.weight_decay * p.data
            p.data -= lr * v
