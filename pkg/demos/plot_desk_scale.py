"""
Desk-scale run on CIFAR-10 binaries
===================================

2000 training images, epsilon = 16/255, 30 epochs of plain FGSM training,
then analysis and plotting of the metrics CSV.

Pass the directory holding ``data_batch_1.bin`` ... ``test_batch.bin``. With
no argument, a synthetic stand-in is written in the same binary layout so the
whole pipeline (loader, subsets, training, evaluation) still runs end to end.
"""

import sys
import tempfile
import time
from pathlib import Path

from fgsmlab.data import synthetic_dataset, write_cifar10
from fgsmlab.runner import TrainConfig, analyze, plot, train

work = Path(tempfile.mkdtemp())
if len(sys.argv) > 1:
    data_dir = Path(sys.argv[1])
else:
    data_dir = work / "cifar-10-batches-bin"
    data_dir.mkdir()
    for i in range(1, 6):
        write_cifar10(synthetic_dataset(i, 1000), data_dir / f"data_batch_{i}.bin")
    write_cifar10(synthetic_dataset(0, 1000), data_dir / "test_batch.bin")
    print("no CIFAR-10 directory given; using synthetic batches in", data_dir)

# %%
cfg = TrainConfig(dataset="cifar10", data_dir=str(data_dir), train_n=2000, epochs=30,
                  epsilon=16 / 255, output_dir=str(work / "runs"), record_wall_time=True)
cfg = cfg.with_setting("none")
start = time.perf_counter()
result = train(cfg)
print(f"{cfg.epochs} epochs in {time.perf_counter() - start:.0f}s")

# %%
csv = result.run_dir / "metrics.csv"
print(analyze(csv).text(), end="")
svg = plot(csv, ["clean_acc", "robust_acc", "local_linearity"], result.run_dir / "curves.svg",
           title="FGSM-AT, no regularization")
print("wrote", csv, "and", svg)
