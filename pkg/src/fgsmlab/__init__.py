"""Desk-scale adversarial training lab: FGSM/PGD, GradAlign and orthogonality
regularization of a small CIFAR CNN, built on a numpy autodiff core with
double backprop."""

from . import autodiff, attacks, data, metrics, nn, regularizers
from .attacks import AttackSpec, fgsm, pgd
from .data import Dataset, load_cifar10, subset, synthetic_dataset
from .metrics import MetricsRecord, accuracy, detect_double_descent, local_linearity, robust_accuracy
from .nn import Cnn5Params, cnn5_forward, cross_entropy, init_params
from .regularizers import RegularizerSpec, cosine_sim, gradalign_penalty, orth_penalty, orthogonality_gap

__version__ = "0.1.0"
