"""Sequential spiking network simulated over discrete time steps.

The network is unrolled for ``num_steps`` steps. Every step feeds the input
current of that step through the layer stack; LIF layers carry their membrane
from step to step. A :class:`TimeTape` records the per-step caches so that
:func:`bptt_backward` can walk the unrolled graph in reverse.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CheckpointError, DimensionError, TapeError
from .layers import (EVAL, MC_EVAL, MODES, TRAIN, Conv2d, Dropout, Layer, Leaky, Linear,
                     layer_from_config)

CHECKPOINT_FORMAT = "bcsnn-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class TimeTape:
    """Everything the backward pass needs from one forward simulation."""

    num_steps: int
    mode: str
    inputs: np.ndarray
    masks: dict[int, np.ndarray]
    caches: list[list] = field(default_factory=list)
    outputs: np.ndarray | None = None
    static_head: bool = False

    @property
    def complete(self) -> bool:
        return len(self.caches) == self.num_steps and self.outputs is not None


@dataclass
class Simulation:
    """Output-layer activity of one forward simulation.

    ``spikes`` and ``membrane`` are shaped ``(num_steps, batch, num_outputs)``.
    """

    spikes: np.ndarray
    membrane: np.ndarray
    tape: TimeTape | None = None


class Network:
    """Ordered stack of layers with a fixed per-sample input shape."""

    def __init__(self, layers: list[Layer], input_shape: tuple, seed: int = 0,
                 dtype=np.float64, name: str = "network"):
        self.layers = list(layers)
        self.input_shape = tuple(int(s) for s in input_shape)
        self.seed = int(seed)
        self.dtype = np.dtype(dtype)
        self.name = name
        self.shapes = self._infer_shapes()
        if not isinstance(self.layers[-1], Leaky):
            raise DimensionError("the output layer must be a Leaky layer")

    def _infer_shapes(self) -> list[tuple]:
        shapes = []
        shape = self.input_shape
        for layer in self.layers:
            shape = layer.output_shape(shape)
            shapes.append(shape)
        return shapes

    def init_params(self, seed: int | None = None):
        if seed is not None:
            self.seed = int(seed)
        rng = np.random.default_rng(self.seed)
        for layer in self.layers:
            layer.init_params(rng, self.dtype)

    @property
    def num_outputs(self) -> int:
        return self.shapes[-1][0]

    def input_shape_for(self, layer_index: int) -> tuple:
        return self.input_shape if layer_index == 0 else self.shapes[layer_index - 1]

    def parameters(self):
        """Yield ``(key, array)`` for every trainable array."""
        for i, layer in enumerate(self.layers):
            for name, arr in layer.params.items():
                yield f"{i}.{name}", arr

    def gradients(self):
        for i, layer in enumerate(self.layers):
            for name, arr in layer.grads.items():
                yield f"{i}.{name}", arr

    def param_count(self) -> int:
        return sum(layer.param_count() for layer in self.layers)

    def zero_grad(self):
        for layer in self.layers:
            layer.zero_grad()

    def dropout_layers(self):
        return [(i, l) for i, l in enumerate(self.layers) if isinstance(l, Dropout)]

    # -- simulation -------------------------------------------------------
    def _install_masks(self, masks):
        for i, layer in self.dropout_layers():
            layer.mask = None if masks is None else masks.get(i)

    def forward(self, inputs, mode: str = EVAL, masks: dict | None = None,
                record_tape: bool = False, update_stats: bool = True) -> Simulation:
        """Simulate the network on per-step input currents.

        Args:
            inputs: array shaped ``(num_steps, batch, *input_shape)``.
            mode: ``"train"``, ``"eval"`` or ``"mc-eval"``.
            masks: dropout masks from :func:`sample_dropout_masks`; required
                in train and mc-eval modes when the network has dropout.
            record_tape: keep per-step caches for :func:`bptt_backward`.
            update_stats: let train-mode batch norm update its running stats.
        """
        inputs = np.asarray(inputs)
        if inputs.ndim != len(self.input_shape) + 2 or inputs.shape[2:] != self.input_shape:
            raise DimensionError(
                f"expected inputs (num_steps, batch, {', '.join(map(str, self.input_shape))}), got {inputs.shape}")
        tape = TimeTape(inputs.shape[0], mode, inputs, dict(masks or {})) if record_tape else None
        out, membrane = self.run_layers(inputs, 0, len(self.layers), mode, masks, tape, update_stats)
        if tape is not None:
            tape.outputs = out
        return Simulation(out, membrane, tape)

    def run_layers(self, inputs, start: int, stop: int, mode: str = EVAL, masks: dict | None = None,
                   tape: TimeTape | None = None, update_stats: bool = True):
        """Run layers ``start:stop`` over all steps of ``inputs`` (time-major, batch second).

        Returns the stacked per-step outputs of layer ``stop - 1`` and, when
        that layer is a LIF layer, its per-step membrane (else ``None``).
        """
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}")
        num_steps, batch = inputs.shape[:2]
        layers = self.layers[start:stop]
        dropouts = [(i, l) for i, l in self.dropout_layers() if start <= i < stop]
        if mode != EVAL and dropouts:
            if masks is None:
                raise TapeError(f"{mode} mode needs dropout masks")
            for i, _ in dropouts:
                if masks[i].shape[0] != batch:
                    raise DimensionError(f"mask batch {masks[i].shape[0]} != input batch {batch}")
        self._install_masks(masks)
        for layer in layers:
            layer.reset_state()

        # A time-invariant input (stride 0 over time) through a stateless
        # affine first layer gives the same output at every step.
        static_head = inputs.strides[0] == 0 and isinstance(layers[0], (Conv2d, Linear))
        if tape is not None:
            tape.static_head = static_head
        out_shape = self.shapes[stop - 1]
        out = np.zeros((num_steps, batch) + out_shape, dtype=self.dtype)
        membrane = np.zeros_like(out) if isinstance(layers[-1], Leaky) else None
        head = None
        for t in range(num_steps):
            x = inputs[t].astype(self.dtype, copy=False)
            step_caches = []
            for li, layer in enumerate(layers):
                if li == 0 and static_head:
                    if head is None:
                        head = layer.forward(x, mode, update_stats)
                    x, cache = head
                else:
                    x, cache = layer.forward(x, mode, update_stats)
                step_caches.append(cache)
            out[t] = x
            if membrane is not None:
                membrane[t] = step_caches[-1]
            if tape is not None:
                tape.caches.append(step_caches)
        self._install_masks(None)
        return out, membrane

    def first_dropout_index(self) -> int | None:
        d = self.dropout_layers()
        return d[0][0] if d else None

    # -- checkpoints ------------------------------------------------------
    def config(self) -> dict:
        return {"name": self.name, "input_shape": list(self.input_shape), "seed": self.seed,
                "dtype": self.dtype.str, "layers": [l.config() for l in self.layers]}

    @classmethod
    def from_config(cls, cfg: dict) -> "Network":
        layers = [layer_from_config(c) for c in cfg["layers"]]
        return cls(layers, tuple(cfg["input_shape"]), seed=cfg["seed"],
                   dtype=np.dtype(cfg["dtype"]), name=cfg.get("name", "network"))


def replay(network: Network, tape: TimeTape) -> np.ndarray:
    """Re-run the forward pass recorded in ``tape`` without touching running stats."""
    sim = network.forward(tape.inputs, tape.mode, masks=tape.masks or None, update_stats=False)
    return sim.spikes


def bptt_backward(network: Network, tape: TimeTape, grad_spikes) -> None:
    """Accumulate parameter gradients by backpropagation through time.

    ``grad_spikes`` is dL/d(output spikes), shaped like ``tape.outputs``.
    Spiking nonlinearities use the fast-sigmoid surrogate derivative; the
    membrane recurrence and the reset term are differentiated across steps.
    Gradients are added to ``layer.grads``; call ``zero_grad`` first.
    """
    if tape is None or not tape.complete:
        raise TapeError("bptt_backward needs the tape of a completed forward pass")
    grad_spikes = np.asarray(grad_spikes)
    if grad_spikes.shape != tape.outputs.shape:
        raise DimensionError(f"gradient shape {grad_spikes.shape} != output shape {tape.outputs.shape}")
    for layer in network.layers:
        layer.begin_backward()
    layers = network.layers
    head_grad = None
    for t in range(tape.num_steps - 1, -1, -1):
        g = grad_spikes[t].astype(network.dtype, copy=False)
        caches = tape.caches[t]
        for li in range(len(layers) - 1, 0, -1):
            g = layers[li].backward(g, caches[li])
        if tape.static_head:
            # the head is affine in its parameters: one backward on the summed gradient
            head_grad = g if head_grad is None else head_grad + g
        else:
            layers[0].backward(g, caches[0], need_input_grad=False)
    if head_grad is not None:
        layers[0].backward(head_grad, tape.caches[0][0], need_input_grad=False)


def sample_dropout_masks(network: Network, rng_seed, batch_size: int = 1) -> dict[int, np.ndarray]:
    """Draw one inverted-dropout mask per dropout layer.

    Each unit is kept with probability ``1 - rate`` and scaled by
    ``1 / (1 - rate)``. The masks stay fixed for a whole forward pass.
    ``rng_seed`` may be an int seed or a ``numpy.random.Generator``.
    """
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    masks = {}
    for i, layer in network.dropout_layers():
        shape = (batch_size,) + network.input_shape_for(i)
        if layer.rate == 0.0:
            masks[i] = np.ones(shape, dtype=network.dtype)
        else:
            keep = rng.random(shape) < (1.0 - layer.rate)
            masks[i] = keep.astype(network.dtype) / network.dtype.type(1.0 - layer.rate)
    return masks


def save_checkpoint(path, network: Network, metadata: dict | None = None) -> Path:
    """Write parameters, running statistics, layer configs and seed to ``.npz``."""
    path = Path(path)
    meta = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION,
            "network": network.config(), "metadata": metadata or {}}
    arrays = {"__meta__": np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)}
    for i, layer in enumerate(network.layers):
        for name, arr in layer.params.items():
            arrays[f"param/{i}/{name}"] = arr
        for name, arr in layer.buffers.items():
            arrays[f"buffer/{i}/{name}"] = arr
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_checkpoint(path) -> tuple[Network, dict]:
    path = Path(path)
    try:
        with np.load(path, allow_pickle=False) as data:
            meta = json.loads(bytes(data["__meta__"]).decode())
            arrays = {k: data[k] for k in data.files if k != "__meta__"}
    except (OSError, KeyError, ValueError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if meta.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a bcsnn checkpoint")
    if meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {meta.get('version')}")
    network = Network.from_config(meta["network"])
    for i, layer in enumerate(network.layers):
        shapes = layer.param_shapes()
        layer.params = {}
        for name, shape in shapes.items():
            arr = arrays.get(f"param/{i}/{name}")
            if arr is None or arr.shape != tuple(shape):
                raise CheckpointError(f"layer {i} parameter {name!r} missing or misshapen")
            layer.params[name] = arr
        layer.buffers = {k.rsplit("/", 1)[1]: v for k, v in arrays.items() if k.startswith(f"buffer/{i}/")}
        layer._grads = None
    return network, meta["metadata"]


__all__ = [
    "TRAIN", "EVAL", "MC_EVAL", "Network", "Simulation", "TimeTape", "bptt_backward",
    "replay", "sample_dropout_masks", "save_checkpoint", "load_checkpoint",
]
