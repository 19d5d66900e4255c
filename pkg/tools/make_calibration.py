"""Regenerate the calibration data files shipped in ``src/stereohb/data``.

The default stereo response is a smooth sum-of-Gaussians model of two
slightly different consumer RGB sensors behind an IR-cut filter.  It is a
stand-in for a measured calibration; replace it with real curves via
``--response``.

Run from the repository root::

    python tools/make_calibration.py
"""

from pathlib import Path

import numpy as np

DATA = Path(__file__).resolve().parents[1] / "src" / "stereohb" / "data"

# (centre nm, width nm, weight) lobes per channel
LEFT = {
    "L-R": [(605.0, 30.0, 0.95), (455.0, 22.0, 0.05)],
    "L-G": [(535.0, 33.0, 1.00), (455.0, 22.0, 0.10)],
    "L-B": [(455.0, 26.0, 0.90), (585.0, 35.0, 0.04)],
}
RIGHT = {
    "R-R": [(620.0, 36.0, 0.90), (470.0, 25.0, 0.06)],
    "R-G": [(555.0, 38.0, 0.95), (470.0, 25.0, 0.12)],
    "R-B": [(475.0, 30.0, 0.85), (560.0, 35.0, 0.05)],
}


def channel_curve(wl, lobes, ir_cut=675.0):
    out = np.zeros_like(wl)
    for centre, width, weight in lobes:
        out += weight * np.exp(-0.5 * ((wl - centre) / width) ** 2)
    return out / (1.0 + np.exp((wl - ir_cut) / 10.0))


def write_response(path, wl):
    channels = {**LEFT, **RIGHT}
    cols = [channel_curve(wl, lobes) for lobes in channels.values()]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# Default stereo RGB spectral response (model curves, unit peak scale).\n")
        fh.write("wavelength_nm," + ",".join(channels) + "\n")
        for i, w in enumerate(wl):
            fh.write(f"{w:g}," + ",".join(f"{c[i]:.6g}" for c in cols) + "\n")


def write_lut(path):
    from matplotlib import colormaps

    rgb = (colormaps["viridis"](np.linspace(0.0, 1.0, 256))[:, :3] * 255.0).round()
    with open(path, "w", encoding="utf-8") as fh:
        for r, g, b in rgb.astype(int):
            fh.write(f"{r},{g},{b}\n")


if __name__ == "__main__":
    write_response(DATA / "response_stereo_460_690.csv", np.arange(460.0, 691.0, 10.0))
    write_response(DATA / "response_stereo_400_900.csv", np.arange(400.0, 901.0, 10.0))
    write_lut(DATA / "viridis.lut")
