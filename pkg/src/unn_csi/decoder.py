"""The under-parameterized decoder: architecture spec, parameters, forward pass.

A decoder stacks three layer types. Inner layers apply a 1x1(x1) convolution
(a channel-mode product), double selected spatial modes with fixed linear
upsampling operators, then ReLU and per-filter batch normalization.
Pre-output layers do the same without upsampling. The output layer applies the
channel-mode product followed by TanH, so every output entry lies in (-1, 1).

The same code serves 3-way tensors (subcarrier x snapshot x channel) and 4-way
tensors (snapshot x subcarrier x user x channel); the spec just carries one
more spatial mode.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from math import prod, sqrt

import numpy as np

from .tensors import make_upsampler, mode_product

__all__ = [
    "SeedRule",
    "DecoderSpec",
    "ParamSet",
    "splitmix64",
    "uniform_stream",
    "generate_seed",
    "init_params",
    "batch_norm",
    "forward",
    "param_count",
    "compression_ratio",
    "spec_to_json",
    "spec_from_json",
]

BN_EPS = 1e-5

_U64 = 0xFFFFFFFFFFFFFFFF
_SM64_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_SM64_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_SM64_MIX2 = np.uint64(0x94D049BB133111EB)


def splitmix64(seed: int, count: int) -> np.ndarray:
    """First `count` outputs of the SplitMix64 generator as uint64.

    Pure integer arithmetic mod 2**64, so the stream is bit-exact on every
    platform. Used for the decoder seed tensor and for parameter init.
    """
    idx = np.arange(1, count + 1, dtype=np.uint64)
    z = np.uint64(seed & _U64) + idx * _SM64_GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _SM64_MIX1
    z = (z ^ (z >> np.uint64(27))) * _SM64_MIX2
    return z ^ (z >> np.uint64(31))


def uniform_stream(seed: int, count: int) -> np.ndarray:
    """Deterministic doubles in [0, 1): the top 53 bits of each SplitMix64 word."""
    return (splitmix64(seed, count) >> np.uint64(11)) * (2.0**-53)


@dataclass(frozen=True)
class SeedRule:
    """How to regenerate the fixed random input tensor: PRNG seed and the
    half-range `a` of the uniform distribution U(-a, +a)."""

    seed: int
    half_range: float

    def __post_init__(self):
        if not 0 <= self.seed <= _U64:
            raise ValueError("seed must fit in 64 bits")
        if self.half_range < 0:
            raise ValueError("half_range must be >= 0")


@dataclass(frozen=True)
class DecoderSpec:
    """Architecture description.

    input_dims      spatial extents of the seed tensor (2 entries for the
                    single-user decoder, 3 for the multi-user decoder)
    widths          filter counts k_0..k_L (k_0 = seed depth, k_L = output width)
    inner_count     number of upsampling layers
    preoutput_count number of non-upsampling BN layers before the output
    upsample_flags  per inner layer, one bool per spatial mode
    seed_rule       rule for the fixed random input
    """

    input_dims: tuple
    widths: tuple
    inner_count: int
    preoutput_count: int
    upsample_flags: tuple
    seed_rule: SeedRule

    def __post_init__(self):
        object.__setattr__(self, "input_dims", tuple(int(d) for d in self.input_dims))
        object.__setattr__(self, "widths", tuple(int(k) for k in self.widths))
        object.__setattr__(
            self, "upsample_flags", tuple(tuple(bool(f) for f in row) for row in self.upsample_flags)
        )
        if self.inner_count < 1 or self.preoutput_count < 0:
            raise ValueError("need at least one inner layer")
        if len(self.widths) != self.n_layers + 1:
            raise ValueError(
                f"widths must list k_0..k_L ({self.n_layers + 1} values), got {len(self.widths)}"
            )
        if any(k < 1 for k in self.widths):
            raise ValueError("filter widths must be positive")
        if any(d < 1 for d in self.input_dims):
            raise ValueError("seed extents must be positive")
        if len(self.upsample_flags) != self.inner_count:
            raise ValueError("need one upsample flag row per inner layer")
        if any(len(row) != len(self.input_dims) for row in self.upsample_flags):
            raise ValueError("each flag row needs one entry per spatial mode")

    @property
    def n_layers(self) -> int:
        return self.inner_count + self.preoutput_count + 1

    @property
    def n_spatial(self) -> int:
        return len(self.input_dims)

    @property
    def output_width(self) -> int:
        return self.widths[-1]

    @property
    def output_dims(self) -> tuple:
        dims = list(self.input_dims)
        for row in self.upsample_flags:
            for ax, on in enumerate(row):
                if on:
                    dims[ax] *= 2
        return tuple(dims) + (self.output_width,)

    @property
    def seed_dims(self) -> tuple:
        return self.input_dims + (self.widths[0],)


@dataclass
class ParamSet:
    """All trainable scalars of a decoder.

    kernels[l] is the (k_l, k_{l+1}) matrix of the 1x1(x1) convolution of
    layer l+1; gammas/betas hold the batch-norm affine pairs of every layer
    except the output layer.
    """

    kernels: list = field(default_factory=list)
    gammas: list = field(default_factory=list)
    betas: list = field(default_factory=list)

    def arrays(self) -> list:
        """Canonical flat view: layer-ascending, kernel then gamma then beta."""
        out = []
        for l, w in enumerate(self.kernels):
            out.append(w)
            if l < len(self.gammas):
                out.append(self.gammas[l])
                out.append(self.betas[l])
        return out

    def copy(self) -> "ParamSet":
        return ParamSet(
            [w.copy() for w in self.kernels],
            [g.copy() for g in self.gammas],
            [b.copy() for b in self.betas],
        )

    def astype(self, dtype) -> "ParamSet":
        return ParamSet(
            [np.asarray(w, dtype=dtype) for w in self.kernels],
            [np.asarray(g, dtype=dtype) for g in self.gammas],
            [np.asarray(b, dtype=dtype) for b in self.betas],
        )


def check_params(spec: DecoderSpec, params: ParamSet) -> None:
    """Raise ValueError unless `params` matches the layer widths of `spec`."""
    L = spec.n_layers
    if len(params.kernels) != L or len(params.gammas) != L - 1 or len(params.betas) != L - 1:
        raise ValueError("parameter set does not match the layer count of the spec")
    for l in range(L):
        want = (spec.widths[l], spec.widths[l + 1])
        if tuple(params.kernels[l].shape) != want:
            raise ValueError(f"kernel {l} has shape {params.kernels[l].shape}, expected {want}")
        if l < L - 1:
            if params.gammas[l].shape != (spec.widths[l + 1],) or params.betas[l].shape != (
                spec.widths[l + 1],
            ):
                raise ValueError(f"batch-norm pair {l} does not match width {spec.widths[l + 1]}")


def generate_seed(rule: SeedRule, dims) -> np.ndarray:
    """The fixed random input tensor for `dims`, filled in row-major order with
    (2u - 1) * a for u drawn from the SplitMix64 uniform stream. Bit-exact."""
    dims = tuple(int(d) for d in dims)
    if any(d < 1 for d in dims):
        raise ValueError("seed extents must be positive")
    u = uniform_stream(rule.seed, prod(dims))
    return ((2.0 * u - 1.0) * rule.half_range).reshape(dims)


def init_params(spec: DecoderSpec, seed: int, dtype=np.float32) -> ParamSet:
    """Random starting point for a fit: kernel entries U(-s, s) with
    s = sqrt(1 / k_{l-1}), gamma = 1, beta = 0. One SplitMix64 stream drawn in
    canonical (layer-ascending, row-major) order keeps this reproducible."""
    total = sum(spec.widths[l] * spec.widths[l + 1] for l in range(spec.n_layers))
    u = uniform_stream(seed, total)
    params = ParamSet()
    pos = 0
    for l in range(spec.n_layers):
        k_in, k_out = spec.widths[l], spec.widths[l + 1]
        s = sqrt(1.0 / k_in)
        block = (2.0 * u[pos : pos + k_in * k_out] - 1.0) * s
        pos += k_in * k_out
        params.kernels.append(block.reshape(k_in, k_out).astype(dtype))
        if l < spec.n_layers - 1:
            params.gammas.append(np.ones(k_out, dtype=dtype))
            params.betas.append(np.zeros(k_out, dtype=dtype))
    return params


def param_count(spec: DecoderSpec) -> int:
    """Trainable scalar count: all kernel entries plus one (gamma, beta) pair
    per filter of every batch-normalized layer."""
    kernels = sum(spec.widths[l] * spec.widths[l + 1] for l in range(spec.n_layers))
    bn = sum(2 * spec.widths[l + 1] for l in range(spec.n_layers - 1))
    return kernels + bn


def compression_ratio(spec: DecoderSpec) -> float:
    """Parameter count over the number of complex channel coefficients the
    decoder reproduces (output spatial extents times output_width / 2)."""
    coeffs = prod(spec.output_dims[:-1]) * (spec.output_width // 2)
    return param_count(spec) / coeffs


def batch_norm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = BN_EPS) -> np.ndarray:
    """Per-filter normalization over all spatial positions of the single sample.

    Filters live on the last mode; mean and population variance are taken over
    everything else.
    """
    x = np.asarray(x)
    if x.shape[-1] != len(gamma) or x.shape[-1] != len(beta):
        raise ValueError("gamma/beta length must equal the filter count (last extent)")
    y, _, _ = _bn_forward(x, np.asarray(gamma), np.asarray(beta), eps)
    return y


def _bn_forward(x, gamma, beta, eps=BN_EPS):
    flat = x.reshape(-1, x.shape[-1])
    mu = flat.mean(axis=0)
    var = flat.var(axis=0)
    inv = 1.0 / np.sqrt(var + np.asarray(eps, dtype=flat.dtype))
    xhat = (flat - mu) * inv
    y = (xhat * gamma + beta).reshape(x.shape)
    return y, xhat, inv


def _apply_kernel(z, w):
    flat = z.reshape(-1, z.shape[-1])
    return (flat @ w).reshape(z.shape[:-1] + (w.shape[1],))


_UPSAMPLER_CACHE: dict = {}


def _upsampler(n: int, dtype) -> np.ndarray:
    key = (n, np.dtype(dtype).name)
    op = _UPSAMPLER_CACHE.get(key)
    if op is None:
        op = make_upsampler(n).astype(dtype)
        _UPSAMPLER_CACHE[key] = op
    return op


def upsample_schedule(spec: DecoderSpec) -> list:
    """Per inner layer, the (axis, source extent) pairs of enabled upsamplings."""
    extents = list(spec.input_dims)
    schedule = []
    for row in spec.upsample_flags:
        steps = []
        for ax, on in enumerate(row):
            if on:
                steps.append((ax, extents[ax]))
                extents[ax] *= 2
        schedule.append(steps)
    return schedule


def forward(spec: DecoderSpec, params: ParamSet, z0=None, dtype=np.float32, return_cache=False):
    """Run the decoder; returns the output tensor of extents spec.output_dims.

    z0 defaults to the tensor regenerated from spec.seed_rule. All arithmetic
    happens in `dtype` (float32 by default; float64 for verification). With
    return_cache=True also returns the per-layer intermediates needed by the
    reverse-mode pass in :mod:`unn_csi.fitting`.
    """
    check_params(spec, params)
    if z0 is None:
        z0 = generate_seed(spec.seed_rule, spec.seed_dims)
    z = np.ascontiguousarray(z0, dtype=dtype)
    if z.shape != spec.seed_dims:
        raise ValueError(f"seed tensor has shape {z.shape}, spec wants {spec.seed_dims}")

    schedule = upsample_schedule(spec)
    L = spec.n_layers
    cache = [] if return_cache else None
    for l in range(L):
        w = np.asarray(params.kernels[l], dtype=dtype)
        z_in = z
        u = _apply_kernel(z, w)
        if l < spec.inner_count:
            for ax, n in schedule[l]:
                u = mode_product(u, _upsampler(n, dtype), ax)
        if l == L - 1:
            z = np.tanh(u)
            if cache is not None:
                cache.append({"kind": "out", "z_in": z_in, "y": z})
        else:
            gamma = np.asarray(params.gammas[l], dtype=dtype)
            beta = np.asarray(params.betas[l], dtype=dtype)
            r = np.maximum(u, 0)
            y, xhat, inv = _bn_forward(r, gamma, beta)
            if cache is not None:
                cache.append({"kind": "bn", "z_in": z_in, "u": u, "xhat": xhat, "inv": inv})
            z = y
    if return_cache:
        return z, cache
    return z


def spec_to_json(spec: DecoderSpec) -> str:
    """Canonical JSON form (sorted keys, no whitespace) of a DecoderSpec."""
    doc = {
        "input_dims": list(spec.input_dims),
        "widths": list(spec.widths),
        "inner_count": spec.inner_count,
        "preoutput_count": spec.preoutput_count,
        "upsample_flags": [list(row) for row in spec.upsample_flags],
        "seed_rule": {"seed": spec.seed_rule.seed, "half_range": spec.seed_rule.half_range},
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def spec_from_json(text: str) -> DecoderSpec:
    doc = json.loads(text)
    return DecoderSpec(
        input_dims=tuple(doc["input_dims"]),
        widths=tuple(doc["widths"]),
        inner_count=int(doc["inner_count"]),
        preoutput_count=int(doc["preoutput_count"]),
        upsample_flags=tuple(tuple(row) for row in doc["upsample_flags"]),
        seed_rule=SeedRule(int(doc["seed_rule"]["seed"]), float(doc["seed_rule"]["half_range"])),
    )


def load_spec(path) -> DecoderSpec:
    with open(path, "r", encoding="utf-8") as fh:
        return spec_from_json(fh.read())


def save_spec(spec: DecoderSpec, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(spec_to_json(spec))
        fh.write("\n")


def params_to_vector(params: ParamSet) -> np.ndarray:
    """All scalars in canonical order (layer-ascending; kernel row-major, then
    gamma, then beta) as one flat array."""
    return np.concatenate([np.asarray(a).ravel() for a in params.arrays()])


def params_from_vector(spec: DecoderSpec, vec: np.ndarray, dtype=np.float32) -> ParamSet:
    vec = np.asarray(vec)
    if vec.size != param_count(spec):
        raise ValueError(f"vector has {vec.size} entries, spec needs {param_count(spec)}")
    params = ParamSet()
    pos = 0
    for l in range(spec.n_layers):
        k_in, k_out = spec.widths[l], spec.widths[l + 1]
        params.kernels.append(vec[pos : pos + k_in * k_out].reshape(k_in, k_out).astype(dtype))
        pos += k_in * k_out
        if l < spec.n_layers - 1:
            params.gammas.append(vec[pos : pos + k_out].astype(dtype))
            pos += k_out
            params.betas.append(vec[pos : pos + k_out].astype(dtype))
            pos += k_out
    return params
