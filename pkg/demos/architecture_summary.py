"""Layer table of the full-size network and the small desk variant.

The full model takes 128x128 RGB inputs and has 77,597,926 trainable
parameters, almost all of them in the first dense layer. Building it
allocates about 300 MB of float32 weights.

    python demos/architecture_summary.py
"""

from bcsnn.models import build_desk_model, build_paper_model, summary

print(summary(build_paper_model(num_classes=2)))
print()
print(summary(build_desk_model()))
