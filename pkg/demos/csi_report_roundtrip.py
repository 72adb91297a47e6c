"""Serialize a fitted decoder into a CSI report and rebuild the channel.

The user side fits the decoder to its measurement and transmits only the
report: spec JSON (with the seed rule), per-snapshot norms, scale, and the
float32 weights. The base-station side decodes, regenerates the seed tensor,
reruns the forward pass, and lands on the *bit-identical* channel estimate.
The report is a fraction of the raw CSI size; the demo prints the accounting.

Run:  python demos/csi_report_roundtrip.py
"""

from importlib import resources

import numpy as np

from unn_csi.baselines import nmse
from unn_csi.channel import add_noise, load_scene, postprocess, preprocess, synthesize
from unn_csi.codec import decode, encode, payload_bytes, weight_delta_stats
from unn_csi.decoder import forward, load_spec, param_count
from unn_csi.fitting import FitConfig, fit


def main():
    scene = load_scene(str(resources.files("unn_csi") / "scenes/street_canyon_desk.json"))
    spec = load_spec(str(resources.files("unn_csi") / "specs/single_ue_desk.json"))
    config = FitConfig(iterations=3000, learning_rate=2e-3, trace_every=1000, init_seed=1)

    truth = synthesize(scene, 3)
    meas = add_noise(truth, 20.0, seed=0)
    target = preprocess(meas)

    # user side
    report = fit(spec, None, target, config)
    tx_out = forward(spec, report.params)
    tx_est = postprocess(tx_out, target.snapshot_norms, target.scale)
    blob = encode(spec, report.params, target.snapshot_norms, target.scale)

    # base-station side: nothing but the bytes
    spec_rx, params_rx, norms_rx, scale_rx = decode(blob)
    rx_out = forward(spec_rx, params_rx)
    rx_est = postprocess(rx_out, norms_rx, scale_rx)

    raw_bytes = 8 * truth.data.size  # complex64 coefficients
    print(f"payload: {payload_bytes(spec)} bytes ({param_count(spec)} float32 weights)")
    print(f"full report: {len(blob)} bytes, raw CSI: {raw_bytes} bytes "
          f"-> payload/raw = {payload_bytes(spec) / raw_bytes:.4f}")
    print(f"receiver output bit-identical: {np.array_equal(rx_out, tx_out)}")
    print(f"NMSE at user: {nmse(tx_est, truth):.2f} dB, at base station: {nmse(rx_est, truth):.2f} dB")

    # a warm-started neighbor report differs less, which a differential
    # compression stage could exploit
    truth4 = synthesize(scene, 4)
    target4 = preprocess(add_noise(truth4, 20.0, seed=1))
    tl_report = fit(spec, None, target4, config, init=report.params)
    blob_tl = encode(spec, tl_report.params, target4.snapshot_norms, target4.scale)
    stats = weight_delta_stats(blob, blob_tl)
    print(f"\nneighbor report fitted from these weights:")
    print(f"  mean |weight delta| {stats.mean_abs_delta:.4f}, "
          f"delta payload entropy {stats.entropy_bits_per_byte:.2f} bits/byte")


if __name__ == "__main__":
    main()
