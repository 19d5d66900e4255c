"""THb and SatO2 heatmaps
========================

Render estimated maps to PNG with the shipped colour table, painting
rejected pixels magenta, and store the numbers losslessly as SPECRAW1.
"""

# %%
import sys
from pathlib import Path

import numpy as np

from stereohb import imgio, inversion, spectra
from stereohb.cli import map_to_raw
from stereohb.forward import NoiseSpec, make_phantom, simulate
from stereohb.metrics import cod_mask
from stereohb.pipeline import outlier_mask, process_frame, stack_stereo

out = Path(sys.argv[1] if len(sys.argv) > 1 else "heatmaps")
out.mkdir(parents=True, exist_ok=True)

bundle = spectra.default_bundle()
op = inversion.build_tikhonov_operator(bundle.response.white_balanced(bundle.illuminant))
ds = simulate(make_phantom(), bundle, NoiseSpec(0.01, seed=1))
est = outlier_mask(process_frame(stack_stereo(ds.left, ds.right), bundle, op))

# %% [markdown]
# Pixels are hidden when invalid, above the THb cap, or when the model fits
# the reconstructed absorbance poorly.

# %%
hide = ~est.valid | ~cod_mask(est.cod, 0.5)
print(f"hidden pixels: {hide.mean():.1%}")
thb = imgio.render_heatmap(est.thb(), (0.0, 200.0), invalid=hide)
sat = imgio.render_heatmap(est.sato2(), (0.0, 100.0), invalid=hide)
imgio.write_heatmap_png(thb, out / "thb.png")
imgio.write_heatmap_png(sat, out / "sato2.png")
imgio.write_raw(map_to_raw(est), out / "concentration.raw")

# %%
back = imgio.read_raw(out / "concentration.raw")
print("raw channels:", back.channels, "size:", back.width, "x", back.height)
print("THb range in kept pixels:", np.nanmin(est.thb()[~hide]), np.nanmax(est.thb()[~hide]))
print("written to", out.resolve())
