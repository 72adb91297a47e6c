import numpy as np
import pytest

from unn_csi.channel import Scatterer, Scene, UserTrack
from unn_csi.decoder import DecoderSpec, ParamSet, SeedRule


def make_spec(input_dims, widths, inner, preout, flags, seed=42, a=0.5):
    return DecoderSpec(
        input_dims=input_dims,
        widths=widths,
        inner_count=inner,
        preoutput_count=preout,
        upsample_flags=flags,
        seed_rule=SeedRule(seed, a),
    )


@pytest.fixture
def tiny_spec():
    """Small 3-way decoder used across the fitting tests."""
    return make_spec((2, 3), (3, 4, 4, 4, 2), 2, 1, ((True, True), (True, True)))


@pytest.fixture
def micro_scene():
    """Two UEs 2 m apart sharing four scatterers; 8x8 tensor, 2x1 array."""
    scatterers = tuple(
        Scatterer((x, y, 4.0), complex(g_re, g_im))
        for x, y, g_re, g_im in [
            (-8.0, 10.0, 0.3, 0.1),
            (8.0, 14.0, -0.2, 0.25),
            (-8.0, 20.0, 0.15, -0.3),
            (8.0, 24.0, 0.28, 0.05),
        ]
    )
    ues = (
        UserTrack(1, (-1.0, 25.0, 1.5), (0.0, -0.1, 0.0)),
        UserTrack(2, (1.0, 25.0, 1.5), (0.0, -0.12, 0.0)),
    )
    return Scene(
        bs_position=(0.0, 0.0, 10.0),
        ura_rows=2,
        ura_cols=1,
        element_spacing_wl=0.5,
        scatterers=scatterers,
        ues=ues,
        carrier_hz=2.6e9,
        bandwidth_hz=1.0e7,
        n_sub=8,
        n_sp=8,
        snapshot_dt_s=0.05,
    )


def gradcheck_point(spec, seed, gap=0.5):
    """Evaluation point with a certified margin from every ReLU kink.

    Finite differences are only a valid derivative oracle on a smooth piece of
    the loss, so the point is constructed accordingly: the seed tensor is
    strictly positive, inner kernel columns carry a fixed sign each (negative
    columns give provably dead filters, positive ones provably active), and
    each batch-norm beta is placed after a dry forward pass so that every
    layer output stays at least `gap` above zero. Upsampling rows are convex
    combinations, so positivity survives interpolation.
    """
    from unn_csi.decoder import _apply_kernel, _bn_forward, _upsampler, generate_seed, upsample_schedule
    from unn_csi.tensors import mode_product

    rng = np.random.default_rng(seed)
    n_layers = spec.n_layers
    params = ParamSet()
    for l in range(n_layers):
        k_in, k_out = spec.widths[l], spec.widths[l + 1]
        if l == n_layers - 1:
            params.kernels.append(rng.uniform(-1, 1, (k_in, k_out)) * (0.6 / k_in))
        else:
            mag = rng.uniform(0.4, 1.0, (k_in, k_out))
            signs = np.where(np.arange(k_out) % 3 == 2, -1.0, 1.0)
            params.kernels.append(mag * signs[None, :])
            params.gammas.append(rng.uniform(0.5, 1.5, k_out))
            params.betas.append(np.zeros(k_out))
    z0 = np.abs(generate_seed(spec.seed_rule, spec.seed_dims)) + 0.2

    schedule = upsample_schedule(spec)
    z = z0.copy()
    for l in range(n_layers - 1):
        u = _apply_kernel(z, params.kernels[l])
        if l < spec.inner_count:
            for ax, n in schedule[l]:
                u = mode_product(u, _upsampler(n, np.float64), ax)
        r = np.maximum(u, 0)
        flat = r.reshape(-1, r.shape[-1])
        xhat_max = np.abs(
            (flat - flat.mean(0)) / np.sqrt(flat.var(0) + 1e-5)
        ).max(axis=0)
        params.betas[l] = params.gammas[l] * xhat_max + gap + rng.uniform(0.0, 0.3, r.shape[-1])
        z, _, _ = _bn_forward(r, params.gammas[l], params.betas[l])
    return params, z0
