"""U-shaped generators and Markovian patch critics for 1-D signals and 2-D images."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .backbone import Tensor, ops
from .backbone.tensor import ShapeError

Params = dict  # name -> Tensor, insertion ordered


@dataclass(frozen=True)
class ArchDescriptor:
    """Shared architecture of every generator and critic in a model.

    ``dropout`` lists one rate per decoder level, innermost first; the final
    (output) level never uses dropout.
    """

    rank: int = 1
    length: int = 256
    in_channels: int = 1
    channels: tuple = (16, 32, 64, 128)
    dropout: tuple = (0.5, 0.5, 0.0)
    critic_channels: tuple = (16, 32, 64)
    down_kernel: int = 4
    up_kernel: int = 3
    critic_kernel: int = 4
    critic_final_kernel: int = 3
    slope: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        object.__setattr__(self, "dropout", tuple(float(r) for r in self.dropout))
        object.__setattr__(self, "critic_channels", tuple(int(c) for c in self.critic_channels))
        if self.rank not in (1, 2):
            raise ValueError(f"rank must be 1 or 2, got {self.rank}")
        if not self.channels or not self.critic_channels:
            raise ValueError("channel lists must be nonempty")
        if self.length % (2 ** self.depth):
            raise ValueError(f"length {self.length} is not divisible by 2**depth ({2 ** self.depth})")
        if len(self.dropout) != self.depth - 1:
            raise ValueError(f"need {self.depth - 1} decoder dropout rates, got {len(self.dropout)}")
        if any(not 0 <= r < 1 for r in self.dropout):
            raise ValueError(f"dropout rates must lie in [0, 1): {self.dropout}")
        if self.down_kernel != 4 or self.up_kernel % 2 == 0 or self.critic_final_kernel % 2 == 0:
            raise ValueError("down kernel must be 4 and up/critic-final kernels odd")

    @property
    def depth(self) -> int:
        return len(self.channels)

    @property
    def sample_shape(self) -> tuple:
        """Network-layout shape of one sample (without batch axis)."""
        return (self.in_channels,) + (self.length,) * self.rank

    @classmethod
    def default_1d(cls, length: int = 256) -> "ArchDescriptor":
        return cls(rank=1, length=length)

    @classmethod
    def default_2d(cls, size: int = 32, in_channels: int = 1) -> "ArchDescriptor":
        return cls(rank=2, length=size, in_channels=in_channels, channels=(16, 32, 64), dropout=(0.5, 0.5))

    def to_text(self) -> str:
        lines = []
        for key, value in asdict(self).items():
            if isinstance(value, (tuple, list)):
                value = ",".join(str(v) for v in value)
            lines.append(f"{key}={value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ArchDescriptor":
        kinds = {f.name: f.type for f in cls.__dataclass_fields__.values()}
        kwargs = {}
        for line in text.splitlines():
            if not line.strip():
                continue
            key, _, raw = line.partition("=")
            if key not in kinds:
                raise ValueError(f"unknown architecture key {key!r}")
            if kinds[key] == "tuple":
                cast = float if key == "dropout" else int
                kwargs[key] = tuple(cast(v) for v in raw.split(",") if v)
            elif kinds[key] == "float":
                kwargs[key] = float(raw)
            else:
                kwargs[key] = int(raw)
        return cls(**kwargs)


# -- layout helpers ----------------------------------------------------------

def to_batch(array: np.ndarray, desc: ArchDescriptor) -> np.ndarray:
    """Record layout (T,) or (H, W, C) -> network layout [1, C, ...]."""
    a = np.asarray(array)
    if desc.rank == 1:
        if a.shape != (desc.length,):
            raise ShapeError(f"expected a signal of shape {(desc.length,)}, got {a.shape}")
        return a[None, None, :]
    want = (desc.length, desc.length, desc.in_channels)
    if a.shape != want:
        raise ShapeError(f"expected an image of shape {want}, got {a.shape}")
    return np.transpose(a, (2, 0, 1))[None]


def from_batch(array: np.ndarray, desc: ArchDescriptor) -> np.ndarray:
    if desc.rank == 1:
        return np.asarray(array)[0, 0]
    return np.transpose(np.asarray(array)[0], (1, 2, 0))


def _conv(desc: ArchDescriptor):
    return ops.conv1d if desc.rank == 1 else ops.conv2d


def _check_input(x: Tensor, desc: ArchDescriptor) -> None:
    if x.ndim != desc.rank + 2 or x.shape[1:] != desc.sample_shape:
        raise ShapeError(f"network input {x.shape} does not match descriptor sample shape {desc.sample_shape}")


# -- parameters --------------------------------------------------------------

def _kernel_shape(desc, cout, cin, k):
    return (cout, cin) + (k,) * desc.rank


def generator_shapes(desc: ArchDescriptor) -> dict:
    ch, depth = desc.channels, desc.depth
    shapes = {}
    cin = desc.in_channels
    for level, cout in enumerate(ch):
        shapes[f"down{level}.w"] = _kernel_shape(desc, cout, cin, desc.down_kernel)
        shapes[f"down{level}.b"] = (cout,)
        cin = cout
    for j in range(depth):
        cin = ch[-1] if j == 0 else 2 * ch[depth - 1 - j]
        cout = desc.in_channels if j == depth - 1 else ch[depth - 2 - j]
        shapes[f"up{j}.w"] = _kernel_shape(desc, cout, cin, desc.up_kernel)
        shapes[f"up{j}.b"] = (cout,)
    return shapes


def critic_shapes(desc: ArchDescriptor) -> dict:
    shapes = {}
    cin = desc.in_channels
    for level, cout in enumerate(desc.critic_channels):
        shapes[f"conv{level}.w"] = _kernel_shape(desc, cout, cin, desc.critic_kernel)
        shapes[f"conv{level}.b"] = (cout,)
        cin = cout
    shapes["final.w"] = _kernel_shape(desc, 1, cin, desc.critic_final_kernel)
    shapes["final.b"] = (1,)
    return shapes


def init_params(shapes: dict, seed: int, std: float = 0.02) -> Params:
    """Weights ~ Normal(0, std), biases zero; reproducible from ``seed``."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in shapes.items():
        if name.endswith(".b"):
            data = np.zeros(shape)
        else:
            data = rng.normal(0.0, std, size=shape)
        params[name] = Tensor(data, requires_grad=True)
    return params


def init_generator(desc: ArchDescriptor, seed: int) -> Params:
    return init_params(generator_shapes(desc), seed)


def init_critic(desc: ArchDescriptor, seed: int) -> Params:
    return init_params(critic_shapes(desc), seed)


# -- forward passes ----------------------------------------------------------

def generator_forward(
    params: Params,
    desc: ArchDescriptor,
    x: Tensor,
    rng: np.random.Generator | None = None,
    noise: bool = True,
    ablate_skips: bool = False,
) -> Tensor:
    """U-net: strided-conv encoder, upsample+conv decoder, skip concatenation.

    With ``noise`` on, dropout on the inner decoder levels draws a fresh mask
    from ``rng`` on every call; this is the generator's only noise source and
    stays on at inference unless explicitly disabled.
    """
    _check_input(x, desc)
    conv = _conv(desc)
    depth = desc.depth
    h = x
    skips = []
    for level in range(depth):
        h = conv(h, params[f"down{level}.w"], params[f"down{level}.b"], stride=2, padding=1)
        h = ops.leaky_relu(h, desc.slope)
        skips.append(h)
    up_pad = desc.up_kernel // 2
    for j in range(depth):
        h = ops.upsample(h)
        h = conv(h, params[f"up{j}.w"], params[f"up{j}.b"], stride=1, padding=up_pad)
        if j == depth - 1:
            return ops.tanh(h)
        h = ops.leaky_relu(h, desc.slope)
        rate = desc.dropout[j]
        if noise and rate > 0:
            if rng is None:
                raise ValueError("generator_forward: noise requires an rng")
            h = ops.dropout(h, rate, rng)
        skip = skips[depth - 2 - j]
        if ablate_skips:
            skip = Tensor(np.zeros_like(skip.data))
        h = ops.concat([h, skip], axis=1)
    raise AssertionError("unreachable")


def critic_forward(params: Params, desc: ArchDescriptor, x: Tensor, tangent: np.ndarray | None = None):
    """Patch critic: strided convs, a final conv to one score channel, mean.

    Returns the scalar score. When ``tangent`` is given, also returns the
    directional derivative of the score along ``tangent`` with respect to the
    input, built from taped ops so it can be differentiated with respect to
    the parameters. The critic is piecewise linear in its input, so the
    activation slopes are locally constant and the result is exact.
    """
    _check_input(x, desc)
    conv = _conv(desc)
    h = x
    t = None if tangent is None else Tensor(tangent)
    for level in range(len(desc.critic_channels)):
        w, b = params[f"conv{level}.w"], params[f"conv{level}.b"]
        pre = conv(h, w, b, stride=2, padding=1)
        if t is not None:
            slopes = np.where(pre.data > 0, 1.0, desc.slope).astype(pre.data.dtype)
            t = ops.mul(conv(t, w, None, stride=2, padding=1), Tensor(slopes))
        h = ops.leaky_relu(pre, desc.slope)
    pad = desc.critic_final_kernel // 2
    score = ops.mean(conv(h, params["final.w"], params["final.b"], stride=1, padding=pad))
    if t is None:
        return score
    return score, ops.mean(conv(t, params["final.w"], None, stride=1, padding=pad))


def critic_patch_map(params: Params, desc: ArchDescriptor, x: Tensor) -> Tensor:
    """Per-patch scores before the mean (used for receptive-field checks)."""
    conv = _conv(desc)
    h = x
    for level in range(len(desc.critic_channels)):
        h = ops.leaky_relu(conv(h, params[f"conv{level}.w"], params[f"conv{level}.b"], stride=2, padding=1), desc.slope)
    pad = desc.critic_final_kernel // 2
    return conv(h, params["final.w"], params["final.b"], stride=1, padding=pad)


def critic_receptive_field(desc: ArchDescriptor) -> int:
    """Input extent (per axis) seen by one patch score."""
    field_ = desc.critic_final_kernel
    for _ in desc.critic_channels:
        field_ = (field_ - 1) * 2 + desc.critic_kernel
    return field_


@dataclass
class Networks:
    """The four networks of one dual pair."""

    ga: Params = field(default_factory=dict)
    gb: Params = field(default_factory=dict)
    da: Params = field(default_factory=dict)
    db: Params = field(default_factory=dict)

    def groups(self) -> dict:
        return {"G_A": self.ga, "G_B": self.gb, "D_A": self.da, "D_B": self.db}


class BoundGenerator:
    """A generator's parameters bound to its descriptor and dropout stream."""

    def __init__(self, params: Params, desc: ArchDescriptor, rng: np.random.Generator | None = None, noise: bool = True):
        self.params, self.desc, self.rng, self.noise = params, desc, rng, noise

    def __call__(self, x: Tensor) -> Tensor:
        return generator_forward(self.params, self.desc, x, self.rng, self.noise)


class BoundCritic:
    def __init__(self, params: Params, desc: ArchDescriptor):
        self.params, self.desc = params, desc

    def __call__(self, x: Tensor, tangent: np.ndarray | None = None):
        return critic_forward(self.params, self.desc, x, tangent)
