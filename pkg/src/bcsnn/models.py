"""Network builders for the full-size BCSNN and the scaled desk model.

Both follow the same block grammar:

* conv block:   Conv2d(3x3) -> BatchNorm2d -> Leaky -> MaxPool2d(2x2)
* dense block:  Linear -> BatchNorm1d -> Leaky -> Dropout
* output block: Linear -> BatchNorm1d -> Leaky (records membrane)
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .layers import (BatchNorm1d, BatchNorm2d, Conv2d, Dropout, Flatten, Leaky, Linear,
                     MaxPool2d)
from .network import Network
from .neuron import LifParams

PAPER_CONV_FILTERS = (64, 128, 256, 512)
PAPER_HIDDEN_WIDTHS = (4096, 128, 64, 32)
PAPER_DROPOUT_RATES = (0.5, 0.3, 0.2, 0.2)
PAPER_INPUT_SIZE = 128
PAPER_TOTAL_PARAMS = 77_597_926


@dataclass
class ArchitectureSpec:
    conv_filters: tuple = (8, 16)
    hidden_widths: tuple = (32,)
    dropout_rates: tuple = (0.2,)
    num_classes: int = 2
    input_size: int = 32
    in_channels: int = 3
    kernel_size: int = 3
    pool_size: int = 2
    lif: LifParams = field(default_factory=LifParams)
    relaxed: bool = False
    name: str = "desk"

    def validate(self):
        if len(self.conv_filters) + len(self.hidden_widths) == 0:
            raise ValidationError("architecture needs at least one hidden block")
        if len(self.dropout_rates) != len(self.hidden_widths):
            raise ValidationError("need exactly one dropout rate per hidden dense block")
        if self.num_classes < 2:
            raise ValidationError("num_classes must be at least 2")
        if any(int(w) < 1 for w in tuple(self.conv_filters) + tuple(self.hidden_widths)):
            raise ValidationError("layer widths must be positive")
        size = self.input_size
        for _ in self.conv_filters:
            size = (size - self.kernel_size + 1) // self.pool_size
            if size < 1:
                raise ValidationError(f"input size {self.input_size} too small for {len(self.conv_filters)} conv blocks")
        return self


def _build(spec: ArchitectureSpec, seed: int, dtype) -> Network:
    spec.validate()
    lif = spec.lif
    layers = []
    channels = spec.in_channels
    size = spec.input_size
    for filters in spec.conv_filters:
        layers += [Conv2d(channels, filters, spec.kernel_size), BatchNorm2d(filters),
                   Leaky(lif, spec.relaxed), MaxPool2d(spec.pool_size)]
        channels = filters
        size = (size - spec.kernel_size + 1) // spec.pool_size
    layers.append(Flatten())
    width = channels * size * size if spec.conv_filters else spec.in_channels * spec.input_size**2
    for hidden, rate in zip(spec.hidden_widths, spec.dropout_rates):
        layers += [Linear(width, hidden), BatchNorm1d(hidden), Leaky(lif, spec.relaxed), Dropout(rate)]
        width = hidden
    layers += [Linear(width, spec.num_classes), BatchNorm1d(spec.num_classes),
               Leaky(lif, spec.relaxed, record_membrane=True)]
    net = Network(layers, (spec.in_channels, spec.input_size, spec.input_size),
                  seed=seed, dtype=dtype, name=spec.name)
    net.init_params()
    return net


def paper_spec(num_classes: int = 2, lif: LifParams | None = None) -> ArchitectureSpec:
    return ArchitectureSpec(PAPER_CONV_FILTERS, PAPER_HIDDEN_WIDTHS, PAPER_DROPOUT_RATES,
                            num_classes=num_classes, input_size=PAPER_INPUT_SIZE,
                            lif=lif or LifParams(), name="paper")


def build_paper_model(num_classes: int = 2, seed: int = 0, lif: LifParams | None = None,
                      input_size: int = PAPER_INPUT_SIZE, dtype=np.float32) -> Network:
    """The 9-block BCSNN: four conv blocks, four dense blocks, one output block.

    Weights default to float32 (the 18432x4096 layer alone holds 75.5M weights).
    Only the reference input size of 128 yields the 18432-wide flatten.
    """
    if num_classes not in (2, 3):
        raise ValidationError("the full model is defined for 2 or 3 classes")
    if input_size != PAPER_INPUT_SIZE:
        raise ValidationError(f"the paper model needs {PAPER_INPUT_SIZE}x{PAPER_INPUT_SIZE} inputs, got {input_size}")
    return _build(paper_spec(num_classes, lif), seed, dtype)


def build_desk_model(spec: ArchitectureSpec | None = None, seed: int = 0, dtype=np.float64) -> Network:
    """Same block grammar at reduced width; defaults to 8/16 filters on 32x32 inputs."""
    return _build(spec or ArchitectureSpec(), seed, dtype)


def summary_rows(network: Network) -> list[tuple[str, str, int]]:
    """``(layer name, output shape, parameter count)`` rows in the style of a layer table."""
    rows = []
    for i, (layer, shape) in enumerate(zip(network.layers, network.shapes), start=1):
        dims = ", ".join(str(d) for d in (-1,) + tuple(shape))
        shape_str = f"[{dims}]"
        if isinstance(layer, Leaky) and layer.record_membrane:
            shape_str = f"[[{shape_str}, {shape_str}]]"
        rows.append((f"{layer.display_name}-{i}", shape_str, layer.param_count()))
    return rows


def summary(network: Network) -> str:
    rows = summary_rows(network)
    total = sum(r[2] for r in rows)
    width = max(28, max(len(r[1]) for r in rows) + 2)
    rule = "-" * (20 + width + 16)
    lines = [rule, f"{'Layer (type)':>20}{'Output Shape':>{width}}{'Param #':>16}", "=" * len(rule)]
    lines += [f"{name:>20}{shape:>{width}}{count:>16,}" for name, shape, count in rows]
    lines += ["=" * len(rule), f"Total params: {total:,}", f"Trainable params: {total:,}",
              "Non-trainable params: 0", rule]
    return "\n".join(lines)
