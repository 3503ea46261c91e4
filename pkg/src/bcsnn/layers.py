"""Differentiable layer kernels operating on one simulation time step.

Every layer maps a batch-first array to a batch-first array and returns a
cache for its backward pass. Recurrent state (the LIF membrane) lives on the
layer object and is cleared by :meth:`Layer.reset_state` at the start of each
simulated sample; gradients flowing backwards through time are carried the
same way.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError, InvalidParameterError, TapeError
from .neuron import LifParams, fast_sigmoid, heaviside, surrogate_grad

TRAIN, EVAL, MC_EVAL = "train", "eval", "mc-eval"
MODES = (TRAIN, EVAL, MC_EVAL)


class Layer:
    """Base class. Subclasses fill ``params`` and implement the kernels."""

    kind = "layer"
    display_name = "Layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self._grads: dict[str, np.ndarray] | None = None

    # -- parameters -----------------------------------------------------
    def param_shapes(self) -> dict[str, tuple]:
        return {}

    def init_params(self, rng: np.random.Generator, dtype=np.float64):
        self._grads = None

    @property
    def grads(self) -> dict[str, np.ndarray]:
        if self._grads is None:
            self._grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        return self._grads

    def zero_grad(self):
        if self._grads is not None:
            for g in self._grads.values():
                g.fill(0.0)

    def param_count(self) -> int:
        return int(sum(math.prod(s) for s in self.param_shapes().values()))

    def config(self) -> dict:
        return {"kind": self.kind}

    # -- simulation -----------------------------------------------------
    def output_shape(self, in_shape: tuple) -> tuple:
        return tuple(in_shape)

    def reset_state(self):
        pass

    def begin_backward(self):
        pass

    def forward(self, x, mode: str, update_stats: bool = True):
        raise NotImplementedError

    def backward(self, grad_out, cache, need_input_grad=True):
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}({self.config()})"


def _uniform_fan_in(rng, shape, fan_in, dtype):
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype, copy=False)


class Conv2d(Layer):
    """Valid (unpadded), stride-1 2-D convolution."""

    kind = "conv"
    display_name = "Conv2d"

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int = 3):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size

    def param_shapes(self):
        k = self.kernel_size
        return {
            "weight": (self.out_channels, self.in_channels, k, k),
            "bias": (self.out_channels,),
        }

    def init_params(self, rng, dtype=np.float64):
        fan_in = self.in_channels * self.kernel_size**2
        self.params = {k: _uniform_fan_in(rng, s, fan_in, dtype) for k, s in self.param_shapes().items()}
        super().init_params(rng, dtype)

    def config(self):
        return {"kind": self.kind, "in_channels": self.in_channels,
                "out_channels": self.out_channels, "kernel_size": self.kernel_size}

    def output_shape(self, in_shape):
        if len(in_shape) != 3 or in_shape[0] != self.in_channels:
            raise DimensionError(f"Conv2d expects ({self.in_channels}, H, W), got {in_shape}")
        c, h, w = in_shape
        k = self.kernel_size
        if h < k or w < k:
            raise DimensionError(f"input {h}x{w} smaller than kernel {k}x{k}")
        return (self.out_channels, h - k + 1, w - k + 1)

    def _cols(self, x):
        k = self.kernel_size
        windows = sliding_window_view(x, (k, k), axis=(2, 3))  # B, C, Ho, Wo, k, k
        b, c, ho, wo = windows.shape[:4]
        cols = np.ascontiguousarray(windows.transpose(0, 2, 3, 1, 4, 5))
        return cols.reshape(b * ho * wo, c * k * k), (b, ho, wo)

    def forward(self, x, mode, update_stats=True):
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise DimensionError(f"Conv2d expects (B, {self.in_channels}, H, W), got {x.shape}")
        cols, (b, ho, wo) = self._cols(x)
        w = self.params["weight"].reshape(self.out_channels, -1)
        y = (cols @ w.T + self.params["bias"]).reshape(b, ho, wo, self.out_channels)
        return np.ascontiguousarray(y.transpose(0, 3, 1, 2)), (cols, x.shape)

    def backward(self, grad_out, cache, need_input_grad=True):
        cols, shape = cache
        b, f, ho, wo = grad_out.shape
        gy = grad_out.transpose(0, 2, 3, 1).reshape(-1, f)
        g = self.grads
        g["weight"] += (gy.T @ cols).reshape(g["weight"].shape)
        g["bias"] += gy.sum(axis=0)
        if not need_input_grad:
            return None
        k = self.kernel_size
        c = self.in_channels
        dcols = (gy @ self.params["weight"].reshape(f, -1)).reshape(b, ho, wo, c, k, k)
        grad_x = np.zeros(shape, dtype=grad_out.dtype)
        for i in range(k):
            for j in range(k):
                grad_x[:, :, i:i + ho, j:j + wo] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        return grad_x


class Linear(Layer):
    kind = "linear"
    display_name = "Linear"

    def __init__(self, in_features: int, out_features: int):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features

    def param_shapes(self):
        return {"weight": (self.out_features, self.in_features), "bias": (self.out_features,)}

    def init_params(self, rng, dtype=np.float64):
        self.params = {k: _uniform_fan_in(rng, s, self.in_features, dtype)
                       for k, s in self.param_shapes().items()}
        super().init_params(rng, dtype)

    def config(self):
        return {"kind": self.kind, "in_features": self.in_features, "out_features": self.out_features}

    def output_shape(self, in_shape):
        if tuple(in_shape) != (self.in_features,):
            raise DimensionError(f"Linear expects ({self.in_features},), got {in_shape}")
        return (self.out_features,)

    def forward(self, x, mode, update_stats=True):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise DimensionError(f"Linear expects (B, {self.in_features}), got {x.shape}")
        return x @ self.params["weight"].T + self.params["bias"], x

    def backward(self, grad_out, cache, need_input_grad=True):
        x = cache
        g = self.grads
        g["weight"] += grad_out.T @ x
        g["bias"] += grad_out.sum(axis=0)
        if not need_input_grad:
            return None
        return grad_out @ self.params["weight"]


class _BatchNorm(Layer):
    """Shared batch-normalisation kernel; subclasses fix the reduction axes.

    Train mode normalises with the statistics of the current batch at the
    current time step and folds them into the running estimates. Eval and
    MC-eval modes use the running estimates only.
    """

    reduce_axes: tuple = (0,)
    feature_ndim = 1

    def __init__(self, num_features: int, eps: float = 1e-5, momentum: float = 0.1):
        super().__init__()
        self.num_features = num_features
        self.eps = eps
        self.momentum = momentum

    def param_shapes(self):
        return {"weight": (self.num_features,), "bias": (self.num_features,)}

    def init_params(self, rng, dtype=np.float64):
        n = self.num_features
        self.params = {"weight": np.ones(n, dtype=dtype), "bias": np.zeros(n, dtype=dtype)}
        self.buffers = {"running_mean": np.zeros(n, dtype=dtype), "running_var": np.ones(n, dtype=dtype)}
        super().init_params(rng, dtype)

    def config(self):
        return {"kind": self.kind, "num_features": self.num_features,
                "eps": self.eps, "momentum": self.momentum}

    def output_shape(self, in_shape):
        if len(in_shape) != self.feature_ndim or in_shape[0] != self.num_features:
            raise DimensionError(f"{self.display_name} cannot take input of shape {in_shape}")
        return tuple(in_shape)

    def _bcast(self, v):
        return v.reshape((1, -1) + (1,) * (self.feature_ndim - 1))

    def forward(self, x, mode, update_stats=True):
        if x.ndim != self.feature_ndim + 1 or x.shape[1] != self.num_features:
            raise DimensionError(f"{self.display_name} got input of shape {x.shape}")
        if mode == TRAIN:
            mean = x.mean(axis=self.reduce_axes)
            var = x.var(axis=self.reduce_axes)
            if update_stats:
                n = x.size // self.num_features
                unbiased = var * n / (n - 1) if n > 1 else var
                m = self.momentum
                rm, rv = self.buffers["running_mean"], self.buffers["running_var"]
                rm *= 1 - m
                rm += m * mean
                rv *= 1 - m
                rv += m * unbiased
        else:
            mean = self.buffers["running_mean"]
            var = self.buffers["running_var"]
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - self._bcast(mean)) * self._bcast(inv_std)
        y = xhat * self._bcast(self.params["weight"]) + self._bcast(self.params["bias"])
        return y, (xhat, inv_std, mode == TRAIN)

    def backward(self, grad_out, cache, need_input_grad=True):
        xhat, inv_std, batch_stats = cache
        g = self.grads
        g["weight"] += (grad_out * xhat).sum(axis=self.reduce_axes)
        g["bias"] += grad_out.sum(axis=self.reduce_axes)
        gxhat = grad_out * self._bcast(self.params["weight"])
        if not batch_stats:
            return gxhat * self._bcast(inv_std)
        mean_g = gxhat.mean(axis=self.reduce_axes)
        mean_gx = (gxhat * xhat).mean(axis=self.reduce_axes)
        return (gxhat - self._bcast(mean_g) - xhat * self._bcast(mean_gx)) * self._bcast(inv_std)


class BatchNorm2d(_BatchNorm):
    kind = "batchnorm-2d"
    display_name = "BatchNorm2d"
    reduce_axes = (0, 2, 3)
    feature_ndim = 3


class BatchNorm1d(_BatchNorm):
    kind = "batchnorm-1d"
    display_name = "BatchNorm1d"
    reduce_axes = (0,)
    feature_ndim = 1


class MaxPool2d(Layer):
    """Non-overlapping max pooling; trailing rows/columns are dropped."""

    kind = "maxpool"
    display_name = "MaxPool2d"

    def __init__(self, pool_size: int = 2):
        super().__init__()
        self.pool_size = pool_size

    def config(self):
        return {"kind": self.kind, "pool_size": self.pool_size}

    def output_shape(self, in_shape):
        if len(in_shape) != 3:
            raise DimensionError(f"MaxPool2d expects (C, H, W), got {in_shape}")
        c, h, w = in_shape
        p = self.pool_size
        if h < p or w < p:
            raise DimensionError(f"input {h}x{w} smaller than pool {p}x{p}")
        return (c, h // p, w // p)

    def forward(self, x, mode, update_stats=True):
        b, c, h, w = x.shape
        p = self.pool_size
        ho, wo = h // p, w // p
        blocks = x[:, :, :ho * p, :wo * p].reshape(b, c, ho, p, wo, p)
        blocks = blocks.transpose(0, 1, 2, 4, 3, 5).reshape(b, c, ho, wo, p * p)
        idx = blocks.argmax(axis=-1)
        y = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
        return y, (idx, x.shape)

    def backward(self, grad_out, cache, need_input_grad=True):
        idx, shape = cache
        b, c, h, w = shape
        p = self.pool_size
        ho, wo = grad_out.shape[2:]
        blocks = np.zeros((b, c, ho, wo, p * p), dtype=grad_out.dtype)
        np.put_along_axis(blocks, idx[..., None], grad_out[..., None], axis=-1)
        blocks = blocks.reshape(b, c, ho, wo, p, p).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, ho * p, wo * p)
        grad_x = np.zeros(shape, dtype=grad_out.dtype)
        grad_x[:, :, :ho * p, :wo * p] = blocks
        return grad_x


class Flatten(Layer):
    kind = "flatten"
    display_name = "Flatten"

    def output_shape(self, in_shape):
        return (int(math.prod(in_shape)),)

    def forward(self, x, mode, update_stats=True):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, grad_out, cache, need_input_grad=True):
        return grad_out.reshape(cache)


class Dropout(Layer):
    """Inverted dropout with an externally supplied mask.

    The mask is installed once per stochastic forward pass (see
    :func:`bcsnn.network.sample_dropout_masks`) and reused at every time step.
    It is applied in train and MC-eval modes; eval mode is the identity.
    """

    kind = "dropout"
    display_name = "Dropout"

    def __init__(self, rate: float = 0.5):
        super().__init__()
        if not (0.0 <= rate < 1.0):
            raise InvalidParameterError(f"dropout rate must lie in [0, 1), got {rate}")
        self.rate = rate
        self.mask: np.ndarray | None = None

    def config(self):
        return {"kind": self.kind, "rate": self.rate}

    def forward(self, x, mode, update_stats=True):
        if mode == EVAL:
            return x, None
        if self.mask is None:
            raise TapeError("dropout layer has no mask for a stochastic pass")
        if self.mask.shape != x.shape:
            raise DimensionError(f"dropout mask {self.mask.shape} does not match input {x.shape}")
        return x * self.mask, self.mask

    def backward(self, grad_out, cache, need_input_grad=True):
        return grad_out if cache is None else grad_out * cache


class Leaky(Layer):
    """Layer of LIF neurons with reset-by-subtraction.

    At step ``t`` the membrane integrates the incoming current and the layer
    emits the spike of the updated membrane::

        u[t] = beta * u[t-1] + I[t] - s[t-1] * theta
        s[t] = H(u[t] - theta)

    which is the single-neuron update of :func:`bcsnn.neuron.lif_step` read
    from the emitted-spike side, with ``u[0] = s[0] = 0``. In ``relaxed`` mode
    the forward spike is the fast sigmoid itself, making the network smooth
    (used for finite-difference gradient checks).
    """

    kind = "lif"
    display_name = "Leaky"

    def __init__(self, lif: LifParams | None = None, relaxed: bool = False, record_membrane: bool = False):
        super().__init__()
        self.lif = lif or LifParams()
        self.relaxed = relaxed
        self.record_membrane = record_membrane
        self.u: np.ndarray | None = None
        self.s: np.ndarray | None = None
        self._carry: np.ndarray | None = None

    def config(self):
        return {"kind": self.kind, "beta": self.lif.beta, "theta": self.lif.theta,
                "slope_k": self.lif.slope_k, "relaxed": self.relaxed,
                "record_membrane": self.record_membrane}

    def reset_state(self):
        self.u = None
        self.s = None

    def spike_fn(self, u):
        return fast_sigmoid(u, self.lif) if self.relaxed else heaviside(u, self.lif)

    def forward(self, x, mode, update_stats=True):
        if self.u is None:
            self.u = np.zeros_like(x)
            self.s = np.zeros_like(x)
        elif self.u.shape != x.shape:
            raise DimensionError(f"membrane {self.u.shape} does not match input {x.shape}")
        lif = self.lif
        u = lif.beta * self.u + x - self.s * lif.theta
        s = self.spike_fn(u)
        self.u, self.s = u, s
        return s, u

    def begin_backward(self):
        self._carry = None

    def backward(self, grad_out, cache, need_input_grad=True):
        u = cache
        lif = self.lif
        ds = surrogate_grad(u, lif)
        if self._carry is None:
            grad_u = grad_out * ds
        else:
            grad_u = (grad_out - lif.theta * self._carry) * ds + lif.beta * self._carry
        self._carry = grad_u
        return grad_u


LAYER_TYPES = {cls.kind: cls for cls in (Conv2d, Linear, BatchNorm2d, BatchNorm1d, MaxPool2d, Flatten, Dropout, Leaky)}


def layer_from_config(cfg: dict) -> Layer:
    cfg = dict(cfg)
    kind = cfg.pop("kind")
    if kind not in LAYER_TYPES:
        raise InvalidParameterError(f"unknown layer kind {kind!r}")
    if kind == "lif":
        lif = LifParams(beta=cfg.pop("beta"), theta=cfg.pop("theta"), slope_k=cfg.pop("slope_k"))
        return Leaky(lif, **cfg)
    return LAYER_TYPES[kind](**cfg)
