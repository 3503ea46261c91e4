"""Train a small spiking CNN, then use MC dropout to flag uncertain images.

Uses a synthetic two-class shape dataset, so it runs anywhere in a few
minutes. The steps are: split, train with rate coding, evaluate once
deterministically and once with 100 dropout passes, then list the test images
whose predictive entropy exceeds the triage threshold.

    python demos/train_and_triage.py [epochs]
"""

import sys

import numpy as np

from bcsnn.bayes import triage
from bcsnn.data import SplitSpec, split, synthetic_dataset
from bcsnn.models import build_desk_model, summary
from bcsnn.trainer import TrainConfig, evaluate, train

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 30

data = synthetic_dataset(num_classes=2, per_class=125, image_size=32, seed=0)
train_set, test_set = split(data, SplitSpec(0.8, 0.2, seed=0))
print(f"{len(train_set)} training and {len(test_set)} test images, classes {data.class_names}")

net = build_desk_model(seed=0)
print(summary(net))

config = TrainConfig(learning_rate=1e-4, batch_size=20, epochs=epochs, coding="rate", seed=0)
_, history = train(net, train_set, None, config,
                   callback=lambda m: print(f"epoch {m.epoch:3d}  loss {m.train_loss:.4f}  acc {m.train_acc:5.1f}%"))

plain = evaluate(net, test_set, "rate", num_steps=config.num_steps)
print(f"\ndeterministic test accuracy {plain.metrics.accuracy:.1f}%")

mc = evaluate(net, test_set, "rate", mc=True, mc_passes=100, num_steps=config.num_steps, base_seed=0)
report = mc.report
print(f"MC dropout test accuracy    {mc.metrics.accuracy:.1f}%")
ok = report.correct
print(f"mean entropy, correct      {report.entropy[ok].mean():.4f} nats")
if (~ok).any():
    print(f"mean entropy, misclassified {report.entropy[~ok].mean():.4f} nats")

# Send anything at or above 0.4 nats (ln 2 is the two-class maximum) to review.
flagged = triage(report, threshold=0.4)
print(f"\n{len(flagged)} of {len(report)} test images flagged for review")
for i in flagged:
    print(f"  image {i:3d}: predicted {data.class_names[report.predicted[i]]:5s} "
          f"true {data.class_names[report.true_label[i]]:5s} "
          f"H = {report.entropy[i]:.3f}  MI = {report.mutual_information[i]:.3f}")

print("\nentropy histogram (nats):")
counts, edges = np.histogram(report.entropy, bins=7, range=(0, np.log(2)))
for c, lo in zip(counts, edges):
    print(f"  {lo:.2f}  {'#' * c}")
