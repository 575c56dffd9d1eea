"""Highway / Residual block variants composed into staged dense networks.

A network is ``input projection -> stage 0 blocks -> [projection] -> stage 1
blocks -> ... -> output projection``. Projections are affine; a projection
between stages only exists where the width changes.

Parameters live in one ordered ``dict`` keyed by dotted names such as
``"stage0.block2.t_w"`` so that optimisers, checkpoints and gradient checks
can treat the whole model as a flat collection of arrays.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .numerics import Rng, matmul, sigmoid

__all__ = [
    "BlockVariant",
    "StageSpec",
    "NetworkSpec",
    "BlockParams",
    "BlockRecord",
    "ForwardTrace",
    "Network",
    "init_network",
    "forward_block",
    "forward",
    "backward",
    "lesion",
    "shuffle_stage",
    "block_param_count",
    "with_block_params",
]

T_BIAS_INIT = -1.0
C_BIAS_INIT = 1.0


class BlockVariant(enum.Enum):
    PLAIN = "plain"
    RESIDUAL = "residual"
    FULL = "full"
    COUPLED = "coupled"
    T_ONLY = "t-only"
    C_ONLY = "c-only"

    @classmethod
    def parse(cls, name: str) -> "BlockVariant":
        key = name.strip().lower().replace("_", "-")
        aliases = {"tonly": "t-only", "conly": "c-only", "highway": "coupled"}
        key = aliases.get(key, key)
        for v in cls:
            if v.value == key:
                return v
        raise ValueError(f"unknown block variant {name!r}")

    @property
    def has_t(self) -> bool:
        return self in (BlockVariant.FULL, BlockVariant.COUPLED, BlockVariant.T_ONLY)

    @property
    def has_c(self) -> bool:
        return self in (BlockVariant.FULL, BlockVariant.C_ONLY)

    @property
    def has_skip(self) -> bool:
        return self is not BlockVariant.PLAIN

    @property
    def transforms(self) -> int:
        """Number of width x width affine maps per block (H plus gates)."""
        return 1 + int(self.has_t) + int(self.has_c)


@dataclass(frozen=True)
class StageSpec:
    width: int
    blocks: int
    variant: BlockVariant


@dataclass(frozen=True)
class NetworkSpec:
    input_dim: int
    stages: tuple[StageSpec, ...]
    output_dim: int
    seed: int = 0
    activation: str = "tanh"

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))
        if self.input_dim <= 0 or self.output_dim <= 0:
            raise ValueError("input_dim and output_dim must be positive")
        if not self.stages:
            raise ValueError("network needs at least one stage")
        for i, st in enumerate(self.stages):
            if st.width <= 0:
                raise ValueError(f"stage {i} has non-positive width {st.width}")
            if st.blocks < 1:
                raise ValueError(f"stage {i} needs at least one block")
        if self.activation not in ("tanh", "relu"):
            raise ValueError(f"unsupported activation {self.activation!r}")

    @property
    def total_blocks(self) -> int:
        return sum(st.blocks for st in self.stages)

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "output_dim": self.output_dim,
            "seed": self.seed,
            "activation": self.activation,
            "stages": [
                {"width": s.width, "blocks": s.blocks, "variant": s.variant.value}
                for s in self.stages
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        stages = tuple(
            StageSpec(int(s["width"]), int(s["blocks"]), BlockVariant.parse(s["variant"]))
            for s in d["stages"]
        )
        return cls(
            int(d["input_dim"]), stages, int(d["output_dim"]), int(d["seed"]), d["activation"]
        )


def block_param_count(variant: BlockVariant, width: int) -> int:
    return variant.transforms * (width * width + width)


@dataclass
class BlockParams:
    variant: BlockVariant
    h_w: np.ndarray
    h_b: np.ndarray
    t_w: Optional[np.ndarray] = None
    t_b: Optional[np.ndarray] = None
    c_w: Optional[np.ndarray] = None
    c_b: Optional[np.ndarray] = None
    activation: str = "tanh"
    identity: bool = False

    @property
    def width(self) -> int:
        return self.h_w.shape[0]


@dataclass
class BlockRecord:
    stage: int
    index: int
    x: np.ndarray
    y: np.ndarray
    h: Optional[np.ndarray] = None
    t: Optional[np.ndarray] = None
    c: Optional[np.ndarray] = None


@dataclass
class ForwardTrace:
    inputs: np.ndarray
    stage_inputs: list
    blocks: list
    stage_bounds: list
    logits: np.ndarray

    @property
    def block_outputs(self) -> list:
        return [r.y for r in self.blocks]

    def stage_records(self, stage: int) -> list:
        lo, hi = self.stage_bounds[stage]
        return self.blocks[lo:hi]


@dataclass
class Network:
    spec: NetworkSpec
    params: dict
    identity_blocks: frozenset = field(default_factory=frozenset)

    def block_key(self, stage: int, block: int, name: str) -> str:
        return f"stage{stage}.block{block}.{name}"

    def block(self, stage: int, block: int) -> BlockParams:
        st = self.spec.stages[stage]
        p = self.params
        k = lambda n: self.block_key(stage, block, n)
        return BlockParams(
            variant=st.variant,
            h_w=p[k("h_w")],
            h_b=p[k("h_b")],
            t_w=p.get(k("t_w")),
            t_b=p.get(k("t_b")),
            c_w=p.get(k("c_w")),
            c_b=p.get(k("c_b")),
            activation=self.spec.activation,
            identity=(stage, block) in self.identity_blocks,
        )

    def has_projection(self, stage: int) -> bool:
        """True if an affine projection feeds stage ``stage`` from the previous one."""
        return stage > 0 and f"proj{stage}.w" in self.params

    def copy(self) -> "Network":
        return Network(
            self.spec, {k: v.copy() for k, v in self.params.items()}, self.identity_blocks
        )

    def num_parameters(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def flat(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.params.values()])

    def with_flat(self, theta: np.ndarray) -> "Network":
        params, i = {}, 0
        for k, v in self.params.items():
            params[k] = np.asarray(theta[i : i + v.size], dtype=np.float64).reshape(v.shape).copy()
            i += v.size
        return Network(self.spec, params, self.identity_blocks)


def _block_names(variant: BlockVariant) -> list:
    names = ["h_w", "h_b"]
    if variant.has_t:
        names += ["t_w", "t_b"]
    if variant.has_c:
        names += ["c_w", "c_b"]
    return names


def init_network(spec: NetworkSpec) -> Network:
    """Gaussian init: std sqrt(2/fan_in) for H and projections, sqrt(1/fan_in) for gates.

    Transform-gate biases start at -1 and carry-gate biases at +1; every other
    bias is zero.
    """
    rng = Rng(spec.seed)
    params: dict = {}

    def dense(fan_in, fan_out, scale):
        return rng.normal((fan_in, fan_out), std=np.sqrt(scale / fan_in))

    w0 = spec.stages[0].width
    params["input.w"] = dense(spec.input_dim, w0, 2.0)
    params["input.b"] = np.zeros(w0)
    prev = w0
    for s, st in enumerate(spec.stages):
        if s > 0 and st.width != prev:
            params[f"proj{s}.w"] = dense(prev, st.width, 2.0)
            params[f"proj{s}.b"] = np.zeros(st.width)
        w = st.width
        for b in range(st.blocks):
            pre = f"stage{s}.block{b}."
            params[pre + "h_w"] = dense(w, w, 2.0)
            params[pre + "h_b"] = np.zeros(w)
            if st.variant.has_t:
                params[pre + "t_w"] = dense(w, w, 1.0)
                params[pre + "t_b"] = np.full(w, T_BIAS_INIT)
            if st.variant.has_c:
                params[pre + "c_w"] = dense(w, w, 1.0)
                params[pre + "c_b"] = np.full(w, C_BIAS_INIT)
        prev = w
    params["output.w"] = dense(prev, spec.output_dim, 2.0)
    params["output.b"] = np.zeros(spec.output_dim)
    return Network(spec, params)


def _activate(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "tanh":
        return np.tanh(z)
    return np.maximum(z, 0.0)


def _activate_grad(h: np.ndarray, activation: str) -> np.ndarray:
    # Both derivatives are expressible through the activation output.
    if activation == "tanh":
        return 1.0 - h * h
    return (h > 0).astype(np.float64)


def _affine(x, w, b):
    return matmul(x, w) + b


def forward_block(variant: BlockVariant, params: BlockParams, x: np.ndarray):
    """Evaluate one block; returns ``(y, gates)`` with ``gates`` holding H, T, C."""
    if x.ndim != 2 or x.shape[1] != params.width:
        raise ValueError(f"block of width {params.width} got input of shape {x.shape}")
    if params.identity:
        return x.copy(), {}
    h = _activate(_affine(x, params.h_w, params.h_b), params.activation)
    t = sigmoid(_affine(x, params.t_w, params.t_b)) if variant.has_t else None
    c = sigmoid(_affine(x, params.c_w, params.c_b)) if variant.has_c else None
    if variant is BlockVariant.PLAIN:
        y = h
    elif variant is BlockVariant.RESIDUAL:
        y = h + x
    elif variant is BlockVariant.T_ONLY:
        y = h * t + x
    elif variant is BlockVariant.C_ONLY:
        y = h + x * c
    elif variant is BlockVariant.COUPLED:
        y = h * t + x * (1.0 - t)
    else:
        y = h * t + x * c
    gates = {"h": h}
    if t is not None:
        gates["t"] = t
    if c is not None:
        gates["c"] = c
    return y, gates


def forward(net: Network, x: np.ndarray) -> ForwardTrace:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.spec.input_dim:
        raise ValueError(
            f"network expects inputs with {net.spec.input_dim} columns, got shape {x.shape}"
        )
    p = net.params
    a = _affine(x, p["input.w"], p["input.b"])
    records, bounds, stage_inputs = [], [], []
    for s, st in enumerate(net.spec.stages):
        if net.has_projection(s):
            a = _affine(a, p[f"proj{s}.w"], p[f"proj{s}.b"])
        stage_inputs.append(a)
        lo = len(records)
        for b in range(st.blocks):
            y, gates = forward_block(st.variant, net.block(s, b), a)
            records.append(
                BlockRecord(s, b, a, y, gates.get("h"), gates.get("t"), gates.get("c"))
            )
            a = y
        bounds.append((lo, len(records)))
    logits = _affine(a, p["output.w"], p["output.b"])
    return ForwardTrace(x, stage_inputs, records, bounds, logits)


def _block_backward(net: Network, rec: BlockRecord, dy: np.ndarray, grads: dict) -> np.ndarray:
    s, b = rec.stage, rec.index
    key = lambda n: net.block_key(s, b, n)
    variant = net.spec.stages[s].variant
    if (s, b) in net.identity_blocks:
        for n in _block_names(variant):
            grads[key(n)] = np.zeros_like(net.params[key(n)])
        return dy
    x, h, t, c = rec.x, rec.h, rec.t, rec.c
    dx = np.zeros_like(x)
    dt = dc = None
    if variant is BlockVariant.PLAIN:
        dh = dy
    elif variant is BlockVariant.RESIDUAL:
        dh = dy
        dx += dy
    elif variant is BlockVariant.T_ONLY:
        dh, dt = dy * t, dy * h
        dx += dy
    elif variant is BlockVariant.C_ONLY:
        dh, dc = dy, dy * x
        dx += dy * c
    elif variant is BlockVariant.COUPLED:
        dh, dt = dy * t, dy * (h - x)
        dx += dy * (1.0 - t)
    else:
        dh, dt, dc = dy * t, dy * h, dy * x
        dx += dy * c

    def through(dout, act_grad, wname, bname):
        dz = dout * act_grad
        grads[key(wname)] = matmul(x.T, dz)
        grads[key(bname)] = dz.sum(axis=0)
        return matmul(dz, net.params[key(wname)].T)

    dx += through(dh, _activate_grad(h, net.spec.activation), "h_w", "h_b")
    if dt is not None:
        dx += through(dt, t * (1.0 - t), "t_w", "t_b")
    if dc is not None:
        dx += through(dc, c * (1.0 - c), "c_w", "c_b")
    return dx


def backward(net: Network, trace: ForwardTrace, loss_grad: np.ndarray) -> dict:
    """Gradients of a scalar loss w.r.t. every parameter, given dLoss/dlogits."""
    if loss_grad.shape != trace.logits.shape:
        raise ValueError(
            f"loss gradient shape {loss_grad.shape} does not match logits {trace.logits.shape}"
        )
    if len(trace.blocks) != net.spec.total_blocks:
        raise ValueError("trace does not belong to this network (block count differs)")
    p = net.params
    grads: dict = {}
    last = trace.blocks[-1].y
    if last.shape[1] != p["output.w"].shape[0]:
        raise ValueError("trace does not belong to this network (width differs)")
    grads["output.w"] = matmul(last.T, loss_grad)
    grads["output.b"] = loss_grad.sum(axis=0)
    da = matmul(loss_grad, p["output.w"].T)
    for s in reversed(range(len(net.spec.stages))):
        lo, hi = trace.stage_bounds[s]
        for rec in reversed(trace.blocks[lo:hi]):
            da = _block_backward(net, rec, da, grads)
        if net.has_projection(s):
            prev_out = trace.blocks[lo - 1].y
            grads[f"proj{s}.w"] = matmul(prev_out.T, da)
            grads[f"proj{s}.b"] = da.sum(axis=0)
            da = matmul(da, p[f"proj{s}.w"].T)
    grads["input.w"] = matmul(trace.inputs.T, da)
    grads["input.b"] = da.sum(axis=0)
    return {k: grads[k] for k in p}


def lesion(net: Network, stage: int, block: int) -> Network:
    """Copy of ``net`` with one block replaced by the identity map."""
    if not 0 <= stage < len(net.spec.stages):
        raise IndexError(f"stage index {stage} out of range")
    if not 0 <= block < net.spec.stages[stage].blocks:
        raise IndexError(f"block index {block} out of range for stage {stage}")
    return Network(net.spec, dict(net.params), net.identity_blocks | {(stage, block)})


def shuffle_stage(net: Network, stage: int, perm: Sequence[int]) -> Network:
    """Reorder the blocks of one stage: new position ``i`` runs old block ``perm[i]``."""
    if not 0 <= stage < len(net.spec.stages):
        raise IndexError(f"stage index {stage} out of range")
    n = net.spec.stages[stage].blocks
    perm = [int(i) for i in perm]
    if len(perm) != n or sorted(perm) != list(range(n)):
        raise ValueError(f"{perm} is not a permutation of {n} blocks")
    names = _block_names(net.spec.stages[stage].variant)
    params = dict(net.params)
    for new, old in enumerate(perm):
        for nm in names:
            params[net.block_key(stage, new, nm)] = net.params[net.block_key(stage, old, nm)]
    identity = {(s, b) for s, b in net.identity_blocks if s != stage}
    identity |= {(stage, new) for new, old in enumerate(perm) if (stage, old) in net.identity_blocks}
    return Network(net.spec, params, frozenset(identity))


def with_block_params(net: Network, stage: int, block: int, **arrays) -> Network:
    """Copy of ``net`` with selected arrays of one block replaced."""
    params = dict(net.params)
    for name, value in arrays.items():
        k = net.block_key(stage, block, name)
        if k not in params:
            raise KeyError(k)
        params[k] = np.array(value, dtype=np.float64).reshape(params[k].shape)
    return replace(net, params=params)
