"""
Differentiating through an input gradient
=========================================

The alignment penalty compares the input gradient at ``x`` with the one at a
nearby ``x + eta``. Training on it means taking a gradient of a gradient. This
walk-through checks the tape against central differences on a 1-d toy.
"""

import numpy as np

from fgsmlab import autodiff as ad

# %%
# Scalar warm-up: f(x) = x^3, so f' = 3x^2 and f'' = 6x. Recording the first
# backward pass with ``create_graph=True`` makes f' itself differentiable.
x = ad.leaf([1], [2.0], requires_grad=True)
(d1,) = ad.grad(ad.sum(ad.mul(ad.mul(x, x), x)), [x], create_graph=True)
(d2,) = ad.grad(ad.sum(d1), [x])
print("f'(2) =", d1.data[0], " f''(2) =", d2.data[0])

# %%
# A small convolutional loss. The penalty is a function of the weights only
# (eta is fixed by the seed), so central differences give a reference.
from fgsmlab.nn import conv2d, cross_entropy, linear, maxpool2
from fgsmlab.regularizers import gradalign_penalty

rng = np.random.default_rng(0)
shapes = {"conv_w": (2, 1, 5, 5), "conv_b": (2,), "fc_w": (4, 32), "fc_b": (4,)}
theta0 = rng.normal(scale=0.4, size=sum(int(np.prod(s)) for s in shapes.values()))
images = rng.uniform(0.1, 0.9, size=(3, 1, 12, 12))
labels = np.array([0, 2, 3])


class Weights:
    def __init__(self, flat):
        pos = 0
        for name, shape in shapes.items():
            n = int(np.prod(shape))
            setattr(self, name, ad.reshape(ad.crop(flat, (slice(pos, pos + n),)), shape))
            pos += n


def per_example(w, x, y):
    h = maxpool2(ad.relu(conv2d(x, w.conv_w, w.conv_b)))
    return cross_entropy(linear(ad.reshape(h, (x.shape[0], -1)), w.fc_w, w.fc_b), y, reduction="none")


def penalty(flat, create_graph=False):
    return gradalign_penalty(Weights(flat), images, labels, epsilon=16 / 255, samples=2,
                             create_graph=create_graph, rng=7, loss_fn=per_example)


theta = ad.leaf(theta0.shape, theta0, requires_grad=True)
(analytic,) = ad.grad(penalty(theta, create_graph=True), [theta])
numeric = ad.fd_grad(penalty, theta0, h=1e-6)
err = np.abs(analytic.data - numeric).max() / np.abs(numeric).max()
print(f"{theta0.size} weights, penalty {penalty(ad.Tensor(theta0)).item():.4f}, "
      f"relative error {err:.1e}")
