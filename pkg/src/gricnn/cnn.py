"""Deterministic convolution stack with a symmetric flatten layer and an MLP head.

Parameters are held in :class:`NetworkParams`, an immutable snapshot whose
trainable arrays can be listed in a fixed order with
:meth:`NetworkParams.tensors`. Gradients use the same ordering, which keeps
SGD, gradient checking and serialisation to one code path each.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import kernels
from .grid import GridError, as_grid
from .symmetry import is_dih4_invariant, symmetrize_kernel

PARAMS_FORMAT = "gricnn-params"
PARAMS_VERSION = 1
TARGET_LOW, TARGET_HIGH = 0.1, 0.9


class ShapeError(ValueError):
    pass


class TrainingDiverged(FloatingPointError):
    pass


# -- activations --------------------------------------------------------------


@dataclass(frozen=True)
class Activation:
    kind: str = "sigmoid"
    slope: float = 0.0

    def __post_init__(self):
        if self.kind not in ("sigmoid", "relu", "lrelu"):
            raise ValueError(f"unknown activation {self.kind!r}")

    @classmethod
    def parse(cls, text: "str | Activation") -> "Activation":
        """``sigmoid``, ``relu`` or ``lrelu:<slope>`` (slope defaults to 0.01)."""
        if isinstance(text, Activation):
            return text
        name, _, arg = str(text).partition(":")
        name = name.strip().lower()
        if name == "lrelu":
            return cls("lrelu", float(arg) if arg else 0.01)
        if arg:
            raise ValueError(f"activation {name!r} takes no argument")
        return cls(name)

    def __str__(self) -> str:
        return f"lrelu:{self.slope!r}" if self.kind == "lrelu" else self.kind

    def __call__(self, z):
        z = np.asarray(z, dtype=np.float64)
        if self.kind == "sigmoid":
            with np.errstate(over="ignore"):
                return 1.0 / (1.0 + np.exp(-z))
        if self.kind == "relu":
            return np.maximum(z, 0.0)
        return np.where(z >= 0, z, self.slope * z)

    def derivative(self, z, a):
        """d act / d z, given the pre-activation ``z`` and output ``a``."""
        if self.kind == "sigmoid":
            return a * (1.0 - a)
        if self.kind == "relu":
            return (z > 0).astype(np.float64)
        return np.where(z >= 0, 1.0, self.slope)


def activate(z, kind: "str | Activation" = "sigmoid"):
    return Activation.parse(kind)(z)


SIGMOID = Activation("sigmoid")


# -- primitive ops ------------------------------------------------------------


def conv_same(image: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Zero-padded centred cross-correlation, stride 1, output side = input side."""
    image = as_grid(image)
    kernel = as_grid(kernel)
    if kernel.shape[0] > image.shape[0]:
        raise GridError(f"kernel side {kernel.shape[0]} exceeds image side {image.shape[0]}")
    return kernels.conv_same(image, kernel)


def avg_pool(image: np.ndarray, w: int) -> np.ndarray:
    """Non-overlapping ``w`` x ``w`` block means."""
    image = np.asarray(image, dtype=np.float64)
    n = image.shape[-1]
    if w < 1 or w % 2 == 0:
        raise ShapeError(f"pool window must be a positive odd integer, got {w}")
    if n % w:
        raise ShapeError(f"side {n} not divisible by pool window {w}")
    if w == 1:
        return image.copy()
    lead = image.shape[:-2]
    blocks = image.reshape(*lead, n // w, w, n // w, w)
    return blocks.sum(axis=(-3, -1)) / (w * w)


def _unpool(grad: np.ndarray, w: int) -> np.ndarray:
    if w == 1:
        return grad
    return np.repeat(np.repeat(grad, w, axis=-2), w, axis=-1) / (w * w)


# -- parameters ---------------------------------------------------------------


@dataclass(frozen=True)
class LayerSpec:
    kernel_side: int
    in_channels: int
    out_channels: int
    activation: Activation = SIGMOID
    pool: int = 1

    def __post_init__(self):
        if self.kernel_side not in (3, 5, 7, 9, 11):
            raise ShapeError(f"kernel side must be one of 3..11 odd, got {self.kernel_side}")
        if self.pool < 1 or self.pool % 2 == 0:
            raise ShapeError(f"pool window must be odd, got {self.pool}")

    def to_dict(self) -> dict:
        return {
            "kernel_side": self.kernel_side,
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "activation": str(self.activation),
            "pool": self.pool,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        return cls(
            int(d["kernel_side"]),
            int(d["in_channels"]),
            int(d["out_channels"]),
            Activation.parse(d["activation"]),
            int(d.get("pool", 1)),
        )


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class NetworkParams:
    """Conv kernel banks, flatten templates and head weights of one network.

    ``kernels[l]`` has shape (out, in, k, k), ``biases[l]`` shape (out,),
    ``templates`` shape (C, F, s, s) with ``s`` the final feature-map side, and
    ``head`` is a list of (W, b) affine layers ending in 2 output nodes.
    """

    layers: tuple[LayerSpec, ...]
    kernels: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    templates: np.ndarray
    head: tuple[tuple[np.ndarray, np.ndarray], ...]
    input_side: int
    flatten_activation: Activation = SIGMOID
    symmetric: bool = False

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "kernels", tuple(_frozen(k) for k in self.kernels))
        object.__setattr__(self, "biases", tuple(_frozen(b) for b in self.biases))
        object.__setattr__(self, "templates", _frozen(self.templates))
        object.__setattr__(self, "head", tuple((_frozen(w), _frozen(b)) for w, b in self.head))
        self.validate()

    def validate(self) -> None:
        side = self.input_side
        if side % 2 == 0:
            raise ShapeError(f"input side must be odd, got {side}")
        in_ch = 1
        if len(self.kernels) != len(self.layers) or len(self.biases) != len(self.layers):
            raise ShapeError("one kernel bank and bias vector per layer required")
        for spec, k, b in zip(self.layers, self.kernels, self.biases):
            if spec.in_channels != in_ch:
                raise ShapeError(f"layer expects {spec.in_channels} input channels, gets {in_ch}")
            want = (spec.out_channels, spec.in_channels, spec.kernel_side, spec.kernel_side)
            if k.shape != want or b.shape != (spec.out_channels,):
                raise ShapeError(f"kernel bank {k.shape} / bias {b.shape} do not match {spec}")
            if spec.kernel_side > side:
                raise ShapeError(f"kernel side {spec.kernel_side} exceeds feature side {side}")
            if side % spec.pool:
                raise ShapeError(f"feature side {side} not divisible by pool {spec.pool}")
            side //= spec.pool
            in_ch = spec.out_channels
        if self.templates.ndim != 4 or self.templates.shape[0] != in_ch or self.templates.shape[2:] != (side, side):
            raise ShapeError(f"templates {self.templates.shape} do not match final map ({in_ch}, *, {side}, {side})")
        width = self.flatten_size
        for w, b in self.head:
            if w.ndim != 2 or w.shape[1] != width or b.shape != (w.shape[0],):
                raise ShapeError(f"head layer {w.shape} does not accept {width} inputs")
            width = w.shape[0]
        if width != 2:
            raise ShapeError(f"head must end in 2 output nodes, ends in {width}")

    @property
    def final_side(self) -> int:
        return self.templates.shape[-1]

    @property
    def flatten_size(self) -> int:
        return self.templates.shape[0] * self.templates.shape[1]

    def tensors(self) -> list[np.ndarray]:
        """All trainable arrays: kernels, biases, templates, then head (W, b) pairs."""
        out = list(self.kernels) + list(self.biases) + [self.templates]
        for w, b in self.head:
            out += [w, b]
        return out

    def tensor_classes(self) -> list[str]:
        n = len(self.layers)
        return ["kernel"] * n + ["bias"] * n + ["template"] + ["head"] * (2 * len(self.head))

    def with_tensors(self, tensors: Sequence[np.ndarray]) -> "NetworkParams":
        n = len(self.layers)
        t = list(tensors)
        head = tuple((t[2 * n + 1 + 2 * j], t[2 * n + 2 + 2 * j]) for j in range(len(self.head)))
        return replace(self, kernels=tuple(t[:n]), biases=tuple(t[n:2 * n]), templates=t[2 * n], head=head)

    def map_grids(self, fn) -> list[np.ndarray]:
        """Tensors list with ``fn`` applied to every kernel and template grid."""
        return _map_grid_tensors(self, self.tensors(), fn)

    def check_symmetric(self) -> bool:
        grids = [k[o, i] for k in self.kernels for o in range(k.shape[0]) for i in range(k.shape[1])]
        grids += [t for row in self.templates for t in row]
        return all(is_dih4_invariant(g) for g in grids)

    def n_free_parameters(self) -> int:
        return int(sum(t.size for t in self.tensors()))


def _map_grid_tensors(params: NetworkParams, tensors: Sequence[np.ndarray], fn) -> list[np.ndarray]:
    out = list(tensors)
    n = len(params.layers)
    for idx in list(range(n)) + [2 * n]:
        arr = np.asarray(out[idx])
        mapped = np.empty_like(arr, dtype=np.float64)
        for pos in np.ndindex(arr.shape[:2]):
            mapped[pos] = fn(arr[pos])
        out[idx] = mapped
    return out


def project_symmetric(params: NetworkParams, tensors: Sequence[np.ndarray]) -> list[np.ndarray]:
    """Orbit-average every kernel/template entry of a params-shaped tensor list."""
    return _map_grid_tensors(params, tensors, symmetrize_kernel)


def init_params(
    rng: np.random.Generator,
    input_side: int,
    kernel_sides: Sequence[int],
    activation: "str | Activation" = "sigmoid",
    channels: int = 1,
    flatten_nodes: int = 8,
    hidden: int = 0,
    pools: Sequence[int] | None = None,
    symmetric: bool = False,
    low: float = -0.5,
    high: float = 0.5,
) -> NetworkParams:
    """Random network with every weight drawn uniform in [low, high), biases 0.

    Draw order is fixed (kernels layer by layer, templates, head) so a seed
    fully determines the network.
    """
    act = Activation.parse(activation)
    pools = list(pools) if pools is not None else [1] * len(kernel_sides)
    layers, banks, biases = [], [], []
    in_ch, side = 1, input_side
    for k, w in zip(kernel_sides, pools):
        spec = LayerSpec(int(k), in_ch, channels, act, int(w))
        layers.append(spec)
        banks.append(rng.uniform(low, high, size=(channels, in_ch, k, k)))
        biases.append(np.zeros(channels))
        in_ch = channels
        side //= w
    templates = rng.uniform(low, high, size=(in_ch, flatten_nodes, side, side))
    head = []
    width = in_ch * flatten_nodes
    for out_width in ([hidden] if hidden else []) + [2]:
        head.append((rng.uniform(low, high, size=(out_width, width)), np.zeros(out_width)))
        width = out_width
    params = NetworkParams(tuple(layers), tuple(banks), tuple(biases), templates, tuple(head), input_side, act, symmetric)
    if symmetric:
        params = params.with_tensors(project_symmetric(params, params.tensors()))
    return params


# -- forward / backward -------------------------------------------------------


@dataclass
class StackCache:
    inputs: list = field(default_factory=list)  # per layer: input maps (Cin, n, n)
    pre: list = field(default_factory=list)  # per layer: conv + bias (Cout, n, n)
    post: list = field(default_factory=list)  # per layer: activation output before pooling
    final: np.ndarray | None = None
    flat_pre: np.ndarray | None = None
    flat: np.ndarray | None = None


def _check_input(image: np.ndarray, params: NetworkParams) -> np.ndarray:
    image = as_grid(image)
    if image.shape[0] != params.input_side:
        raise ShapeError(f"input side {image.shape[0]} != network input side {params.input_side}")
    return image


def stack_forward(image: np.ndarray, params: NetworkParams, cache: StackCache | None = None) -> np.ndarray:
    """Conv layers then the flatten layer; returns the flatten vector (C*F,)."""
    x = _check_input(image, params)[None]
    for spec, bank, bias in zip(params.layers, params.kernels, params.biases):
        z = np.empty((spec.out_channels,) + x.shape[1:])
        for o in range(spec.out_channels):
            acc = kernels.conv_same(x[0], bank[o, 0])
            for i in range(1, spec.in_channels):
                acc = acc + kernels.conv_same(x[i], bank[o, i])
            z[o] = acc + bias[o]
        a = spec.activation(z)
        if cache is not None:
            cache.inputs.append(x)
            cache.pre.append(z)
            cache.post.append(a)
        x = avg_pool(a, spec.pool) if spec.pool > 1 else a
    u = (params.templates * x[:, None]).sum(axis=(2, 3)).ravel()
    v = params.flatten_activation(u)
    if cache is not None:
        cache.final, cache.flat_pre, cache.flat = x, u, v
    return v


def forward_stack(image: np.ndarray, params: NetworkParams) -> np.ndarray:
    return stack_forward(image, params)


def stack_backward(cache: StackCache, params: NetworkParams, grad_flat: np.ndarray) -> list[np.ndarray]:
    """Gradients (params.tensors() order, head entries zero) given dL/d flatten vector."""
    n = len(params.layers)
    grads: list[np.ndarray] = [np.zeros_like(t) for t in params.tensors()]
    du = grad_flat * params.flatten_activation.derivative(cache.flat_pre, cache.flat)
    du = du.reshape(params.templates.shape[:2])
    grads[2 * n] = du[:, :, None, None] * cache.final[:, None]
    dx = (du[:, :, None, None] * params.templates).sum(axis=1)
    for layer in range(n - 1, -1, -1):
        spec = params.layers[layer]
        bank = params.kernels[layer]
        da = _unpool(dx, spec.pool)
        dz = da * spec.activation.derivative(cache.pre[layer], cache.post[layer])
        x = cache.inputs[layer]
        k = spec.kernel_side
        gk = np.empty_like(bank)
        for o in range(spec.out_channels):
            for i in range(spec.in_channels):
                gk[o, i] = kernels.conv_kernel_grad(x[i], dz[o], k)
        grads[layer] = gk
        grads[n + layer] = dz.sum(axis=(1, 2))
        if layer > 0:
            dx = np.empty_like(x)
            for i in range(spec.in_channels):
                acc = kernels.conv_same(dz[0], bank[0, i][::-1, ::-1])
                for o in range(1, spec.out_channels):
                    acc = acc + kernels.conv_same(dz[o], bank[o, i][::-1, ::-1])
                dx[i] = acc
    return grads


def head_forward(v: np.ndarray, params: NetworkParams, trace: list | None = None) -> np.ndarray:
    """Affine + sigmoid per head layer; 2 outputs in (0, 1)."""
    h = np.asarray(v, dtype=np.float64)
    if h.shape != (params.flatten_size,):
        raise ShapeError(f"flatten vector length {h.shape} != {params.flatten_size}")
    for w, b in params.head:
        if trace is not None:
            trace.append(h)
        h = SIGMOID(w @ h + b)
    if trace is not None:
        trace.append(h)
    return h


def head_backward(trace: list, params: NetworkParams, grad_out: np.ndarray) -> tuple[list, np.ndarray]:
    """Head gradients as [W0, b0, W1, b1, ...] and dL/d flatten vector."""
    grads = []
    g = grad_out
    for j in range(len(params.head) - 1, -1, -1):
        w, _ = params.head[j]
        out = trace[j + 1]
        dz = g * out * (1.0 - out)
        grads[:0] = [np.outer(dz, trace[j]), dz]
        g = w.T @ dz
    return grads, g


def network_forward(image: np.ndarray, params: NetworkParams) -> np.ndarray:
    return head_forward(forward_stack(image, params), params)


def targets_for(label: int) -> np.ndarray:
    t = np.full(2, TARGET_LOW)
    t[int(label)] = TARGET_HIGH
    return t


def loss_and_grads(params: NetworkParams, batch) -> tuple[float, list[np.ndarray]]:
    """Mean squared error on the sigmoid outputs and its gradient (unprojected)."""
    batch = list(batch)
    n = len(params.layers)
    total = [np.zeros_like(t) for t in params.tensors()]
    loss = 0.0
    for image, label in batch:
        cache = StackCache()
        v = stack_forward(image, params, cache)
        trace: list = []
        out = head_forward(v, params, trace)
        err = out - targets_for(label)
        loss += float(np.mean(err * err))
        head_grads, dv = head_backward(trace, params, err / (err.size * len(batch)) * 2.0)
        grads = stack_backward(cache, params, dv)
        grads[2 * n + 1:] = head_grads
        for acc, g in zip(total, grads):
            acc += g
    return loss / len(batch), total


def apply_update(params: NetworkParams, grads: Sequence[np.ndarray], lr: float) -> NetworkParams:
    if params.symmetric:
        grads = project_symmetric(params, grads)
    return params.with_tensors([t - lr * g for t, g in zip(params.tensors(), grads)])


def sgd_step(params: NetworkParams, batch, lr: float) -> NetworkParams:
    """One plain SGD step on the batch MSE.

    In symmetric mode the kernel and template gradients are orbit-averaged
    first, so the update stays inside the Dih4-invariant subspace exactly.
    """
    if lr < 0:
        raise ValueError("learning rate must be non-negative")
    loss, grads = loss_and_grads(params, batch)
    if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
        raise TrainingDiverged(f"non-finite loss {loss}")
    if lr == 0:
        return params
    return apply_update(params, grads, lr)


# -- serialisation ------------------------------------------------------------


def params_meta(params: NetworkParams) -> dict:
    return {
        "layers": [s.to_dict() for s in params.layers],
        "input_side": params.input_side,
        "flatten_activation": str(params.flatten_activation),
        "symmetric": params.symmetric,
        "head_layers": len(params.head),
    }


def params_arrays(params: NetworkParams, prefix: str = "") -> dict[str, np.ndarray]:
    arrays = {}
    for i, (k, b) in enumerate(zip(params.kernels, params.biases)):
        arrays[f"{prefix}kernel_{i}"] = k
        arrays[f"{prefix}bias_{i}"] = b
    arrays[f"{prefix}templates"] = params.templates
    for j, (w, b) in enumerate(params.head):
        arrays[f"{prefix}head_w_{j}"] = w
        arrays[f"{prefix}head_b_{j}"] = b
    return arrays


def params_from(meta: dict, arrays, prefix: str = "") -> NetworkParams:
    layers = tuple(LayerSpec.from_dict(d) for d in meta["layers"])
    n = len(layers)
    return NetworkParams(
        layers,
        tuple(arrays[f"{prefix}kernel_{i}"] for i in range(n)),
        tuple(arrays[f"{prefix}bias_{i}"] for i in range(n)),
        arrays[f"{prefix}templates"],
        tuple((arrays[f"{prefix}head_w_{j}"], arrays[f"{prefix}head_b_{j}"]) for j in range(meta["head_layers"])),
        int(meta["input_side"]),
        Activation.parse(meta["flatten_activation"]),
        bool(meta["symmetric"]),
    )


def save_params(path, params: NetworkParams, extra: dict | None = None) -> None:
    """Write an ``.npz`` container: a JSON ``meta`` string plus raw float64 arrays."""
    meta = {"format": PARAMS_FORMAT, "version": PARAMS_VERSION, "network": params_meta(params)}
    if extra:
        meta.update(extra)
    with open(path, "wb") as fh:
        np.savez(fh, meta=np.array(json.dumps(meta, sort_keys=True)), **params_arrays(params))


def load_params(path) -> tuple[NetworkParams, dict]:
    with np.load(Path(path), allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        if meta.get("format") != PARAMS_FORMAT:
            raise ValueError(f"{path}: not a {PARAMS_FORMAT} file")
        if meta.get("version") != PARAMS_VERSION:
            raise ValueError(f"{path}: unsupported version {meta.get('version')}")
        params = params_from(meta["network"], data)
    return params, meta
