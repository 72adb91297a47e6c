"""Independent loop-based reference implementations used as test oracles.

Everything here is written as plainly as possible (explicit loops, no shared
code with the package) so it can disagree with the library when the library is
wrong.
"""

import numpy as np


def loop_unfold_entry(tensor, mode, index):
    """Column position of the entry `index` in the mode-`mode` unfolding,
    derived directly from the documented cyclic rule."""
    ndim = tensor.ndim
    rest = [(mode + i) % ndim for i in range(1, ndim)]
    col = 0
    for ax in rest:
        col = col * tensor.shape[ax] + index[ax]
    return index[mode], col


def loop_mode_product(tensor, matrix, mode):
    """Triple-loop d-mode product."""
    shape = list(tensor.shape)
    shape[mode] = matrix.shape[0]
    out = np.zeros(shape, dtype=np.result_type(tensor, matrix))
    for out_idx in np.ndindex(*shape):
        acc = 0.0
        for k in range(tensor.shape[mode]):
            src = list(out_idx)
            src[mode] = k
            acc += matrix[out_idx[mode], k] * tensor[tuple(src)]
        out[out_idx] = acc
    return out


def loop_upsampler(n):
    """Half-pixel linear interpolation matrix evaluated entry by entry."""
    op = np.zeros((2 * n, n))
    for p in range(2 * n):
        s = (p + 0.5) / 2.0 - 0.5
        s = 0.0 if s < 0 else (n - 1.0 if s > n - 1 else s)
        lo = int(np.floor(s))
        frac = s - lo
        op[p, lo] += 1.0 - frac
        if frac > 0:
            op[p, lo + 1] += frac
    return op


def loop_forward(spec, params, z0, eps=1e-5):
    """Straight-loop decoder forward pass in float64.

    Mirrors the documented layer recipe with nothing shared with the library:
    channel products via explicit sums, upsampling via loop_upsampler, batch
    statistics via flattened slices.
    """
    z = np.asarray(z0, dtype=np.float64)
    n_layers = spec.inner_count + spec.preoutput_count + 1
    for l in range(n_layers):
        w = np.asarray(params.kernels[l], dtype=np.float64)
        k_out = w.shape[1]
        u = np.zeros(z.shape[:-1] + (k_out,))
        for idx in np.ndindex(*z.shape[:-1]):
            for j in range(k_out):
                u[idx + (j,)] = sum(z[idx + (p,)] * w[p, j] for p in range(w.shape[0]))
        if l < spec.inner_count:
            for ax, on in enumerate(spec.upsample_flags[l]):
                if on:
                    u = loop_mode_product(u, loop_upsampler(u.shape[ax]), ax)
        if l == n_layers - 1:
            z = np.tanh(u)
        else:
            r = np.maximum(u, 0.0)
            y = np.empty_like(r)
            for j in range(k_out):
                col = r[..., j].ravel()
                mu = col.mean()
                var = col.var()
                y[..., j] = (r[..., j] - mu) / np.sqrt(var + eps) * params.gammas[l][j] + params.betas[l][j]
            z = y
    return z


def loop_mse(a, b):
    acc = 0.0
    fa, fb = np.asarray(a).ravel(), np.asarray(b).ravel()
    for x, y in zip(fa, fb):
        acc += (x - y) ** 2
    return acc / fa.size


def splitmix64_reference(seed, count):
    """Pure-Python SplitMix64 with explicit 64-bit masking."""
    mask = (1 << 64) - 1
    out = []
    state = seed & mask
    for _ in range(count):
        state = (state + 0x9E3779B97F4A7C15) & mask
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & mask
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & mask
        z = z ^ (z >> 31)
        out.append(z)
    return out


def two_path_channel(scene, ue_id):
    """Closed-form two-path (or any-path) channel evaluated with explicit
    loops, following the documented synthesis formula."""
    c_light = 299_792_458.0
    ue = scene.ue(ue_id)
    bs = np.asarray(scene.bs_position, dtype=float)
    start = np.asarray(ue.start, dtype=float)
    vel = np.asarray(ue.velocity, dtype=float)
    lam = c_light / scene.carrier_hz
    df = scene.bandwidth_hz / scene.n_sub

    paths = []
    if ue.los:
        u = (start - bs) / np.linalg.norm(start - bs)
        paths.append((1.0 + 0.0j, None, u))
    for sc in scene.scatterers:
        s = np.asarray(sc.position, dtype=float)
        u = (s - bs) / np.linalg.norm(s - bs)
        paths.append((complex(sc.gain), s, u))

    h = np.zeros((scene.n_sub, scene.n_sp, scene.ura_rows * scene.ura_cols), dtype=complex)
    for f in range(scene.n_sub):
        for t in range(scene.n_sp):
            pos = start + vel * t * scene.snapshot_dt_s
            for gain, s, u in paths:
                if s is None:
                    dist_t = np.linalg.norm(pos - bs)
                    dist_0 = np.linalg.norm(start - bs)
                    radial = np.dot((start - bs) / dist_0, vel)
                else:
                    dist_t = np.linalg.norm(s - bs) + np.linalg.norm(pos - s)
                    dist_0 = np.linalg.norm(s - bs) + np.linalg.norm(start - s)
                    radial = np.dot((start - s) / np.linalg.norm(start - s), vel)
                tau_t = dist_t / c_light
                tau_0 = dist_0 / c_light
                nu = -radial / lam
                g = gain / (4 * np.pi * dist_0) * np.exp(-2j * np.pi * scene.carrier_hz * tau_0)
                a = 0
                for r in range(scene.ura_rows):
                    for c in range(scene.ura_cols):
                        steer = np.exp(
                            2j * np.pi * scene.element_spacing_wl * (c * u[1] + r * u[2])
                        )
                        h[f, t, a] += (
                            g
                            * np.exp(-2j * np.pi * f * df * tau_t)
                            * np.exp(2j * np.pi * nu * t * scene.snapshot_dt_s)
                            * steer
                        )
                        a += 1
    return h
