"""Declarative network definition, forward execution, and gradients.

A NetworkSpec is an ordered layer list (res2block / conv3x3 / downsample /
upsample).  Both restoration networks are built here:

* the prior network: 10 Res2Blocks with two average-pool downsample and two
  bilinear upsample stages, dropout after every layer;
* the restoration network: a 3x3 conv entry consuming the degraded image
  concatenated with the uncertainty prior, followed by the same
  encoder/decoder trunk, no dropout.

Parameters are stored as float32 (the checkpoint format), all math runs in
float64.  Dropout masks are drawn from an explicit SeededRng, held fixed
between a step's forward and backward passes.
"""

import enum
import math
from dataclasses import dataclass

import numpy as np

from . import layers
from .rng import SeededRng

PARAM_DTYPE = np.float32


class ForwardMode(enum.Enum):
    TRAIN = "train"
    EVAL_DETERMINISTIC = "eval_deterministic"
    EVAL_MC_DROPOUT = "eval_mc_dropout"


def _scale_for(out_ch: int, preferred: int = 4) -> int:
    for s in range(preferred, 0, -1):
        if out_ch % s == 0:
            return s
    return 1


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # res2block | conv3x3 | downsample | upsample
    in_ch: int = 0
    out_ch: int = 0
    scale: int = 0


def res2block(m: int, n: int, scale: int = 0) -> LayerSpec:
    return LayerSpec("res2block", m, n, scale if scale else _scale_for(n))


def conv3x3(m: int, n: int) -> LayerSpec:
    return LayerSpec("conv3x3", m, n)


DOWNSAMPLE = LayerSpec("downsample")
UPSAMPLE = LayerSpec("upsample")


@dataclass(frozen=True)
class NetworkSpec:
    layers: tuple = ()
    dropout_rate: float = 0.1
    dropout_everywhere: bool = False
    upsample_mode: str = "bilinear"

    def validate(self):
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.upsample_mode not in ("bilinear", "nearest"):
            raise ValueError(f"unknown upsample mode {self.upsample_mode!r}")
        cur = None
        for i, layer in enumerate(self.layers):
            if layer.kind in ("res2block", "conv3x3"):
                if cur is not None and layer.in_ch != cur:
                    raise ValueError(
                        f"layer {i} expects {layer.in_ch} channels but receives {cur}"
                    )
                if layer.kind == "res2block" and layer.out_ch % layer.scale:
                    raise ValueError(
                        f"layer {i}: {layer.out_ch} channels not divisible by scale {layer.scale}"
                    )
                cur = layer.out_ch
            elif layer.kind not in ("downsample", "upsample"):
                raise ValueError(f"unknown layer kind {layer.kind!r}")
        return self

    @property
    def in_channels(self) -> int:
        for layer in self.layers:
            if layer.kind in ("res2block", "conv3x3"):
                return layer.in_ch
        raise ValueError("spec has no parameterized layers")

    @property
    def out_channels(self) -> int:
        for layer in reversed(self.layers):
            if layer.kind in ("res2block", "conv3x3"):
                return layer.out_ch
        raise ValueError("spec has no parameterized layers")

    @property
    def pool_divisor(self) -> int:
        return 2 ** sum(1 for l in self.layers if l.kind == "downsample")

    def descriptor(self) -> dict:
        return {
            "layers": [
                {"kind": l.kind, "in_ch": l.in_ch, "out_ch": l.out_ch, "scale": l.scale}
                for l in self.layers
            ],
            "dropout_rate": self.dropout_rate,
            "dropout_everywhere": self.dropout_everywhere,
            "upsample_mode": self.upsample_mode,
        }

    @classmethod
    def from_descriptor(cls, d: dict) -> "NetworkSpec":
        spec = cls(
            layers=tuple(
                LayerSpec(x["kind"], x["in_ch"], x["out_ch"], x["scale"]) for x in d["layers"]
            ),
            dropout_rate=d["dropout_rate"],
            dropout_everywhere=d["dropout_everywhere"],
            upsample_mode=d["upsample_mode"],
        )
        return spec.validate()


def build_atnet1_spec(dropout_rate: float = 0.1, upsample_mode: str = "bilinear") -> NetworkSpec:
    """Prior network: Res2Block encoder/decoder, dropout after every layer."""
    spec = NetworkSpec(
        layers=(
            res2block(3, 64),
            DOWNSAMPLE,
            res2block(64, 64),
            DOWNSAMPLE,
            res2block(64, 64),
            res2block(64, 64),
            res2block(64, 64),
            res2block(64, 64),
            res2block(64, 64),
            UPSAMPLE,
            res2block(64, 64),
            UPSAMPLE,
            res2block(64, 16),
            res2block(16, 3),
        ),
        dropout_rate=dropout_rate,
        dropout_everywhere=True,
        upsample_mode=upsample_mode,
    )
    return spec.validate()


def build_atnet_spec(
    prior_channels: int = 3, dropout_rate: float = 0.1, upsample_mode: str = "bilinear"
) -> NetworkSpec:
    """Restoration network: consumes the degraded image (3 channels)
    concatenated with the uncertainty prior (1 or 3 channels); no dropout."""
    if prior_channels not in (1, 3):
        raise ValueError(f"prior_channels must be 1 or 3, got {prior_channels}")
    spec = NetworkSpec(
        layers=(
            conv3x3(3 + prior_channels, 16),
            res2block(16, 64),
            DOWNSAMPLE,
            res2block(64, 64),
            DOWNSAMPLE,
            res2block(64, 64),
            res2block(64, 64),
            res2block(64, 64),
            res2block(64, 64),
            res2block(64, 64),
            UPSAMPLE,
            res2block(64, 64),
            UPSAMPLE,
            res2block(64, 3),
        ),
        dropout_rate=dropout_rate,
        dropout_everywhere=False,
        upsample_mode=upsample_mode,
    )
    return spec.validate()


def _layer_prefix(index: int) -> str:
    return f"L{index:02d}"


def param_shapes(spec: NetworkSpec) -> dict:
    """Ordered map of parameter name -> shape for a spec."""
    shapes = {}
    for li, layer in enumerate(spec.layers):
        pre = _layer_prefix(li)
        if layer.kind == "conv3x3":
            shapes[f"{pre}.w"] = (layer.out_ch, layer.in_ch, 3, 3)
            shapes[f"{pre}.b"] = (layer.out_ch,)
        elif layer.kind == "res2block":
            m, n, s = layer.in_ch, layer.out_ch, layer.scale
            width = n // s
            shapes[f"{pre}.entry_w"] = (n, m, 1, 1)
            shapes[f"{pre}.entry_b"] = (n,)
            for j in range(2, s + 1):
                shapes[f"{pre}.g{j}_w"] = (width, width, 3, 3)
                shapes[f"{pre}.g{j}_b"] = (width,)
            shapes[f"{pre}.exit_w"] = (n, n, 1, 1)
            shapes[f"{pre}.exit_b"] = (n,)
            if m != n:
                shapes[f"{pre}.shortcut_w"] = (n, m, 1, 1)
                shapes[f"{pre}.shortcut_b"] = (n,)
    return shapes


def init_params(spec: NetworkSpec, rng: SeededRng) -> dict:
    """Fan-in-scaled uniform initialization, seed-controlled.

    Weights and their biases draw from U(-1/sqrt(fan_in), +1/sqrt(fan_in)).
    """
    params = {}
    pending_bound = None
    for name, shape in param_shapes(spec).items():
        if name.endswith("_w") or name.endswith(".w"):
            fan_in = int(np.prod(shape[1:]))
            pending_bound = 1.0 / math.sqrt(fan_in)
            bound = pending_bound
        else:
            bound = pending_bound
        params[name] = rng.uniform(-bound, bound, shape).astype(PARAM_DTYPE)
    return params


def _layer_params_f64(params: dict, prefix: str) -> dict:
    out = {}
    plen = len(prefix) + 1
    for name, value in params.items():
        if name.startswith(prefix + "."):
            out[name[plen:]] = np.asarray(value, dtype=np.float64)
    return out


def _check_input(spec: NetworkSpec, x: np.ndarray):
    if x.ndim != 4:
        raise ValueError(f"input must be (N, C, H, W), got shape {x.shape}")
    if x.shape[1] != spec.in_channels:
        raise ValueError(f"input has {x.shape[1]} channels, spec expects {spec.in_channels}")
    div = spec.pool_divisor
    if x.shape[2] % div or x.shape[3] % div:
        raise ValueError(
            f"spatial dims {x.shape[2]}x{x.shape[3]} must be divisible by {div}"
        )


def _run_forward(spec: NetworkSpec, params: dict, x: np.ndarray, mode: ForwardMode,
                 rng: SeededRng | None):
    spec.validate()
    _check_input(spec, x)
    use_dropout = (
        mode in (ForwardMode.TRAIN, ForwardMode.EVAL_MC_DROPOUT)
        and spec.dropout_everywhere
        and spec.dropout_rate > 0.0
    )
    if use_dropout and rng is None:
        raise ValueError("dropout-active forward requires an rng")
    keep = 1.0 - spec.dropout_rate
    cur = np.ascontiguousarray(x, dtype=np.float64)
    tape = []
    for li, layer in enumerate(spec.layers):
        if layer.kind == "res2block":
            p = _layer_params_f64(params, _layer_prefix(li))
            cur, cache = layers.res2block_forward(cur, p, layer.scale)
            entry = (layer, cache, p)
        elif layer.kind == "conv3x3":
            p = _layer_params_f64(params, _layer_prefix(li))
            xin = cur
            cur = layers.conv2d(xin, p["w"], p["b"])
            entry = (layer, xin, p)
        elif layer.kind == "downsample":
            cur = layers.avg_pool_2x(cur)
            entry = (layer, None, None)
        else:  # upsample
            in_hw = cur.shape[2:]
            cur = layers.upsample_2x(cur, spec.upsample_mode)
            entry = (layer, in_hw, None)
        mask = None
        if use_dropout:
            mask = (rng.random(cur.shape) < keep) / keep  # inverted dropout
            cur = cur * mask
        tape.append((entry, mask))
    out = layers.sigmoid(cur)
    return out, tape


def forward(spec: NetworkSpec, params: dict, x: np.ndarray,
            mode: ForwardMode = ForwardMode.EVAL_DETERMINISTIC,
            rng: SeededRng | None = None) -> np.ndarray:
    """Run the network; output passes through a sigmoid into [0, 1]."""
    out, _ = _run_forward(spec, params, x, mode, rng)
    return out


def _run_backward(spec: NetworkSpec, tape, out: np.ndarray, gy_out: np.ndarray):
    g = layers.sigmoid_vjp(gy_out, out)
    grads = {}
    for li in range(len(spec.layers) - 1, -1, -1):
        (layer, cache, p), mask = tape[li]
        if mask is not None:
            g = g * mask
        pre = _layer_prefix(li)
        if layer.kind == "res2block":
            g, layer_grads = layers.res2block_vjp(g, cache, p, layer.scale)
            for k, v in layer_grads.items():
                grads[f"{pre}.{k}"] = v
        elif layer.kind == "conv3x3":
            g, gw, gb = layers.conv2d_vjp(cache, p["w"], g)
            grads[f"{pre}.w"] = gw
            grads[f"{pre}.b"] = gb
        elif layer.kind == "downsample":
            g = layers.avg_pool_2x_vjp(g)
        else:
            g = layers.upsample_2x_vjp(g, cache, spec.upsample_mode)
    return grads, g


def compute_gradients(spec: NetworkSpec, params: dict, x: np.ndarray, loss_fn,
                      mode: ForwardMode = ForwardMode.TRAIN,
                      rng: SeededRng | None = None):
    """Reverse-mode gradients of a scalar loss on the forward output.

    ``loss_fn(output) -> (loss, grad_wrt_output)`` or
    ``(loss, grad_wrt_output, aux)``.  Dropout masks drawn in the forward
    pass are reused in the backward pass.  Returns (loss, grads, output,
    aux); gradient shapes mirror parameter shapes exactly.
    """
    out, tape = _run_forward(spec, params, x, mode, rng)
    res = loss_fn(out)
    if len(res) == 2:
        loss, gy = res
        aux = {}
    else:
        loss, gy, aux = res
    if not math.isfinite(loss):
        raise ValueError(f"non-finite loss: {loss}")
    grads, _ = _run_backward(spec, tape, out, gy)
    return loss, grads, out, aux
