"""Rate coding against the two time-to-first-spike readouts.

Trains one fresh desk model per output coding with identical seeds and
writes a table of per-class metrics, training time and mean uncertainty.
Which coding wins at this scale is an empirical question, so nothing is
asserted about the ordering.

    python demos/compare_codings.py [epochs] [out.csv]
"""

import sys

from bcsnn.data import SplitSpec, split, synthetic_dataset
from bcsnn.models import build_desk_model
from bcsnn.trainer import TrainConfig, compare_codings, write_coding_table

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 10
out = sys.argv[2] if len(sys.argv) > 2 else "coding_comparison.csv"

train_set, test_set = split(synthetic_dataset(2, 125, 32, seed=0), SplitSpec(0.8, 0.2, seed=0))
config = TrainConfig(learning_rate=1e-4, batch_size=20, epochs=epochs, seed=0)
rows = compare_codings(lambda: build_desk_model(seed=0), train_set, test_set, config, mc_passes=100)
write_coding_table(out, rows)

print(f"{'coding':18s} {'acc %':>6s} {'train s':>8s} {'H nats':>7s} {'MI nats':>8s}")
for r in rows:
    if r["class"] == "Average":
        print(f"{r['coding']:18s} {r['accuracy']:6.1f} {r['train_seconds']:8.1f} "
              f"{r['mean_entropy']:7.4f} {r['mean_mi']:8.4f}")
print(f"\nfull table written to {out}")
