"""
The four regularization settings side by side
=============================================

FGSM adversarial training with no regularizer, the alignment penalty, the
orthogonality penalty, and both. Each run gets its own directory with a
metrics CSV, which the analysis helpers turn into episodes and SVG curves.
"""

import sys
import tempfile
from pathlib import Path

from fgsmlab.runner import TrainConfig, analyze, plot, train_all_settings

out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp())
cfg = TrainConfig(dataset="synthetic", train_n=512, eval_n=100, epochs=12, eval_steps=5,
                  ll_n=32, ll_samples=2, checkpoint_every=0, output_dir=str(out))

# %%
# A few minutes on a laptop; the alignment runs dominate.
results = train_all_settings(cfg)
for setting, res in results.items():
    last = res.history[-1]
    print(f"{setting:10s} clean {last.clean_acc:.2f} robust {last.robust_acc:.2f} "
          f"linearity {last.local_linearity:.3f} orth_gap {last.orth_gap:.4f}")

# %%
# Episodes where robust accuracy falls and then recovers, and one chart per run.
for setting, res in results.items():
    csv = res.run_dir / "metrics.csv"
    print(analyze(csv, drop_threshold=0.05, recovery_fraction=0.8).text(), end="")
    plot(csv, ["robust_acc", "local_linearity", "orth_gap"], res.run_dir / "curves.svg", title=setting)
print("runs written to", out)
