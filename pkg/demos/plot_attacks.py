"""
FGSM and PGD against a briefly trained CNN
==========================================

Train the five-layer CNN cleanly on the synthetic blocks dataset, then see how
much accuracy survives one signed step versus ten projected steps.
"""

import tempfile

import numpy as np

from fgsmlab import AttackSpec, accuracy, fgsm, pgd, robust_accuracy, synthetic_dataset
from fgsmlab.runner import TrainConfig, train

# %%
# Clean training (epsilon = 0 turns the FGSM step into the identity).
cfg = TrainConfig(dataset="synthetic", train_n=256, eval_n=100, epochs=10, batch_size=16, epsilon=0.0,
                  lambda_ga=0.0, lambda_orth=0.0, ll_n=16, ll_samples=1, checkpoint_every=0,
                  output_dir=tempfile.mkdtemp())
params = train(cfg).params
test = synthetic_dataset(cfg.seed + 1, 100)
print("clean accuracy", accuracy(params, test))

# %%
# Robust accuracy against growing budgets.
for eps in (2 / 255, 8 / 255, 16 / 255, 32 / 255):
    one = robust_accuracy(params, test, AttackSpec.fgsm(eps))
    ten = robust_accuracy(params, test, AttackSpec.pgd(eps, steps=10), seed=0)
    print(f"eps={eps * 255:4.0f}/255  fgsm {one:.2f}  pgd-10 {ten:.2f}")

# %%
# Both attacks respect the box exactly, in the working precision.
x, y = test.images[:8], test.labels[:8]
spec = AttackSpec.pgd(16 / 255, steps=10)
adv = pgd(params, x, y, spec, rng=1)
print("max |delta|", np.abs(adv - x).max(), "<=", np.float32(spec.epsilon))
print("pixel range", adv.min(), adv.max())
print("fgsm moves", np.mean(fgsm(params, x, y, AttackSpec.fgsm()) != x), "of pixels")
