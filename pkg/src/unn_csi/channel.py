"""Geometric multipath channel synthesis, measurement noise, preprocessing.

The ground-truth channel of a moving single-antenna user is the sum of a
line-of-sight path and single-bounce scatterer paths:

    H[f, t, a] = sum_p g_p * exp(-j 2 pi f_sub(f) tau_p(t))
                       * exp(+j 2 pi nu_p t dt) * steer_a(u_p)

with f_sub(f) = f * bandwidth / n_sub, tau_p(t) the instantaneous path delay
along the constant-velocity track, nu_p the Doppler shift from the initial
geometry, and steer the plane-wave phase response of the base-station URA in
the departure direction u_p. The complex path gain g_p carries the free-space
amplitude loss 1/(4 pi d_p) together with the carrier phase at the first
snapshot and, for scatterer paths, the reflection gain. Everything is a pure
function of the scene, so identical scenes give identical tensors.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Scatterer",
    "UserTrack",
    "Scene",
    "ChannelTensor",
    "PreprocessedTarget",
    "synthesize",
    "add_noise",
    "preprocess",
    "postprocess",
    "noise_variance",
    "load_scene",
    "save_scene",
    "save_tensor",
    "load_tensor",
]

SPEED_OF_LIGHT = 299_792_458.0
TENSOR_MAGIC = b"CSIT"
TENSOR_VERSION = 1

GROUND_TRUTH = "ground-truth"
MEASURED = "measured"
ESTIMATED = "estimated"


@dataclass(frozen=True)
class Scatterer:
    position: tuple  # meters
    gain: complex  # reflection coefficient


@dataclass(frozen=True)
class UserTrack:
    ue_id: int
    start: tuple  # meters
    velocity: tuple  # m/s
    los: bool = True  # unobstructed direct path


@dataclass(frozen=True)
class Scene:
    bs_position: tuple
    ura_rows: int
    ura_cols: int
    element_spacing_wl: float  # in wavelengths
    scatterers: tuple
    ues: tuple
    carrier_hz: float
    bandwidth_hz: float
    n_sub: int
    n_sp: int
    snapshot_dt_s: float

    def __post_init__(self):
        if self.ura_rows < 1 or self.ura_cols < 1:
            raise ValueError("URA needs at least one element")
        if self.n_sub < 1 or self.n_sp < 1:
            raise ValueError("n_sub and n_sp must be positive")
        for ue in self.ues:
            if not ue.los and not self.scatterers:
                raise ValueError(f"UE {ue.ue_id} has no propagation path")

    @property
    def n_ant(self) -> int:
        return self.ura_rows * self.ura_cols

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_hz

    @property
    def ue_ids(self) -> list:
        return [ue.ue_id for ue in self.ues]

    def ue(self, ue_id: int) -> UserTrack:
        for ue in self.ues:
            if ue.ue_id == ue_id:
                return ue
        raise KeyError(f"scene has no UE with id {ue_id}")


@dataclass
class ChannelTensor:
    """A complex channel tensor with its provenance role."""

    data: np.ndarray
    role: str = GROUND_TRUTH
    snr_db: float | None = None

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if not np.iscomplexobj(self.data):
            raise ValueError("channel tensors are complex")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("channel tensor has non-finite entries")
        if self.role not in (GROUND_TRUTH, MEASURED, ESTIMATED):
            raise ValueError(f"unknown role {self.role!r}")
        if self.role == MEASURED and self.snr_db is None:
            raise ValueError("measured tensors must record their SNR")


@dataclass
class PreprocessedTarget:
    """Real training target plus the metadata that inverts the preprocessing."""

    data: np.ndarray  # (n_sub, n_sp, 2*n_ant)
    snapshot_norms: np.ndarray  # (n_sp,)
    scale: float


def _unit(vec):
    n = np.linalg.norm(vec)
    if n < 1e-9:
        raise ValueError("degenerate geometry: zero-length direction")
    return vec / n


def _steering(scene: Scene, direction) -> np.ndarray:
    """Plane-wave URA response for a departure direction (unit vector).

    Elements sit in the x=0 plane of the array frame, columns along y and rows
    along z, indexed row-major (a = r * cols + c). Spacing is given in
    wavelengths, so the phase is 2 pi spacing (c u_y + r u_z).
    """
    rows = np.arange(scene.ura_rows)
    cols = np.arange(scene.ura_cols)
    phase = 2.0 * np.pi * scene.element_spacing_wl * (
        cols[None, :] * direction[1] + rows[:, None] * direction[2]
    )
    return np.exp(1j * phase).reshape(-1)


def synthesize(scene: Scene, ue_id: int) -> ChannelTensor:
    """Ground-truth channel (n_sub, n_sp, n_ant) for one UE of the scene."""
    ue = scene.ue(ue_id)
    bs = np.asarray(scene.bs_position, dtype=float)
    start = np.asarray(ue.start, dtype=float)
    vel = np.asarray(ue.velocity, dtype=float)
    t_idx = np.arange(scene.n_sp)
    positions = start[None, :] + vel[None, :] * (t_idx * scene.snapshot_dt_s)[:, None]
    f_sub = np.arange(scene.n_sub) * (scene.bandwidth_hz / scene.n_sub)
    lam = scene.wavelength

    paths = []
    if ue.los:
        d = np.linalg.norm(positions - bs[None, :], axis=1)
        if d.min() < 1e-3:
            raise ValueError("degenerate geometry: UE coincides with the BS")
        radial = float(np.dot(_unit(start - bs), vel))
        paths.append((1.0 + 0.0j, d, -radial / lam, _unit(start - bs)))
    for sc in scene.scatterers:
        s = np.asarray(sc.position, dtype=float)
        d_ue = np.linalg.norm(positions - s[None, :], axis=1)
        if d_ue.min() < 1e-3:
            raise ValueError("degenerate geometry: UE coincides with a scatterer")
        d_bs = float(np.linalg.norm(s - bs))
        if d_bs < 1e-3:
            raise ValueError("degenerate geometry: scatterer coincides with the BS")
        radial = float(np.dot(_unit(start - s), vel))
        paths.append((complex(sc.gain), d_bs + d_ue, -radial / lam, _unit(s - bs)))
    if not paths:
        raise ValueError(f"UE {ue_id} has no propagation path")

    h = np.zeros((scene.n_sub, scene.n_sp, scene.n_ant), dtype=np.complex128)
    dt = scene.snapshot_dt_s
    for gain, dist, doppler, direction in paths:
        tau = dist / SPEED_OF_LIGHT
        g = gain / (4.0 * np.pi * dist[0]) * np.exp(-2j * np.pi * scene.carrier_hz * tau[0])
        delay_phase = np.exp(-2j * np.pi * f_sub[:, None] * tau[None, :])
        doppler_phase = np.exp(2j * np.pi * doppler * t_idx * dt)
        steer = _steering(scene, direction)
        h += g * (delay_phase * doppler_phase[None, :])[:, :, None] * steer[None, None, :]
    return ChannelTensor(h, role=GROUND_TRUTH)


def noise_variance(signal_norm_sq: float, n_entries: int, snr_db: float) -> float:
    """Per-entry complex noise variance that realizes the requested tensor SNR
    10 log10(||H||_F^2 / E||N||_F^2)."""
    return signal_norm_sq / (n_entries * 10.0 ** (snr_db / 10.0))


def add_noise(h: ChannelTensor, snr_db: float, seed: int) -> ChannelTensor:
    """Measured channel: ground truth plus circularly symmetric complex
    Gaussian noise calibrated against the whole-tensor Frobenius norm."""
    if h.role != GROUND_TRUTH:
        raise ValueError("noise is added to ground-truth tensors only")
    if np.isinf(snr_db):
        return ChannelTensor(h.data.copy(), role=MEASURED, snr_db=snr_db)
    var = noise_variance(float(np.sum(np.abs(h.data) ** 2)), h.data.size, snr_db)
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(h.data.shape) + 1j * rng.standard_normal(h.data.shape)
    noise *= np.sqrt(var / 2.0)
    return ChannelTensor(h.data + noise, role=MEASURED, snr_db=snr_db)


def preprocess(h: ChannelTensor, scale: float | None = None) -> PreprocessedTarget:
    """Real training target for the decoder.

    Each time-snapshot slice is divided by its Frobenius norm and multiplied
    by `scale`; real and imaginary parts are then concatenated along the
    antenna mode. scale=None picks 0.9 / max|entry| of the normalized tensor
    so every target entry stays inside the open TanH range.
    """
    if h.role not in (GROUND_TRUTH, MEASURED):
        raise ValueError("preprocess expects a ground-truth or measured tensor")
    data = h.data
    if data.ndim != 3:
        raise ValueError("single-user preprocessing expects (n_sub, n_sp, n_ant)")
    norms = np.sqrt(np.sum(np.abs(data) ** 2, axis=(0, 2)))
    if np.any(norms == 0.0):
        raise ValueError("zero-norm snapshot cannot be normalized")
    normalized = data / norms[None, :, None]
    if scale is None:
        peak = max(np.abs(normalized.real).max(), np.abs(normalized.imag).max())
        scale = 0.9 / peak
    normalized = normalized * scale
    target = np.concatenate([normalized.real, normalized.imag], axis=2)
    return PreprocessedTarget(data=target, snapshot_norms=norms, scale=float(scale))


def postprocess(data, snapshot_norms, scale: float) -> ChannelTensor:
    """Invert :func:`preprocess` on a target or decoder output of shape
    (n_sub, n_sp, 2*n_ant): split the real/imaginary halves, recombine, and
    restore each snapshot's norm."""
    arr = np.asarray(getattr(data, "data", data))
    if arr.shape[-1] % 2 != 0:
        raise ValueError("last extent must be even (stacked real/imaginary parts)")
    n_ant = arr.shape[-1] // 2
    cplx = arr[..., :n_ant] + 1j * arr[..., n_ant:]
    norms = np.asarray(snapshot_norms, dtype=float)
    cplx = cplx * (norms[None, :, None] / scale)
    return ChannelTensor(cplx, role=ESTIMATED)


# ---------------------------------------------------------------------------
# scene files


def scene_to_dict(scene: Scene) -> dict:
    return {
        "carrier_hz": scene.carrier_hz,
        "bandwidth_hz": scene.bandwidth_hz,
        "n_sub": scene.n_sub,
        "n_sp": scene.n_sp,
        "snapshot_dt_s": scene.snapshot_dt_s,
        "bs": {
            "position_m": list(scene.bs_position),
            "ura_rows": scene.ura_rows,
            "ura_cols": scene.ura_cols,
            "element_spacing_wl": scene.element_spacing_wl,
        },
        "scatterers": [
            {"position_m": list(s.position), "gain_re": s.gain.real, "gain_im": s.gain.imag}
            for s in scene.scatterers
        ],
        "ues": [
            {
                "id": u.ue_id,
                "start_m": list(u.start),
                "velocity_mps": list(u.velocity),
                "los": u.los,
            }
            for u in scene.ues
        ],
    }


def scene_from_dict(doc: dict) -> Scene:
    bs = doc["bs"]
    return Scene(
        bs_position=tuple(bs["position_m"]),
        ura_rows=int(bs["ura_rows"]),
        ura_cols=int(bs["ura_cols"]),
        element_spacing_wl=float(bs["element_spacing_wl"]),
        scatterers=tuple(
            Scatterer(tuple(s["position_m"]), complex(s["gain_re"], s["gain_im"]))
            for s in doc["scatterers"]
        ),
        ues=tuple(
            UserTrack(
                ue_id=int(u["id"]),
                start=tuple(u["start_m"]),
                velocity=tuple(u["velocity_mps"]),
                los=bool(u.get("los", True)),
            )
            for u in doc["ues"]
        ),
        carrier_hz=float(doc["carrier_hz"]),
        bandwidth_hz=float(doc["bandwidth_hz"]),
        n_sub=int(doc["n_sub"]),
        n_sp=int(doc["n_sp"]),
        snapshot_dt_s=float(doc["snapshot_dt_s"]),
    )


def load_scene(path) -> Scene:
    with open(path, "r", encoding="utf-8") as fh:
        return scene_from_dict(json.load(fh))


def save_scene(scene: Scene, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(scene_to_dict(scene), fh, indent=2)
        fh.write("\n")


# ---------------------------------------------------------------------------
# binary tensor files: magic "CSIT", version, dims, scalar kind, then
# little-endian float32 payload (re/im interleaved for complex), row-major


def save_tensor(path, array) -> None:
    arr = np.asarray(getattr(array, "data", array))
    is_complex = np.iscomplexobj(arr)
    header = struct.pack(
        "<4sHBB", TENSOR_MAGIC, TENSOR_VERSION, 1 if is_complex else 0, arr.ndim
    ) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    if is_complex:
        flat = np.empty(arr.size * 2, dtype="<f4")
        flat[0::2] = arr.real.ravel()
        flat[1::2] = arr.imag.ravel()
    else:
        flat = np.ascontiguousarray(arr, dtype="<f4").ravel()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(flat.tobytes())


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    magic, version, kind, ndim = struct.unpack_from("<4sHBB", blob, 0)
    if magic != TENSOR_MAGIC:
        raise ValueError("not a channel tensor file (bad magic)")
    if version != TENSOR_VERSION:
        raise ValueError(f"unsupported tensor file version {version}")
    dims = struct.unpack_from(f"<{ndim}I", blob, 8)
    payload = np.frombuffer(blob, dtype="<f4", offset=8 + 4 * ndim)
    if kind == 1:
        arr = (payload[0::2] + 1j * payload[1::2]).astype(np.complex64)
    else:
        arr = payload.astype(np.float32)
    return arr.reshape(dims)
