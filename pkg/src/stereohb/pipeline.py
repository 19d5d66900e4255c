"""Full-frame processing: frames in, concentration maps out.

Pixels are processed in fixed-size blocks.  Block boundaries do not depend
on the number of worker threads, so results are bit-identical for any
thread count.
"""

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ModeError, ShapeError, ValidationError
from .unmix import UnmixPolicy, absorbance, fit_absorbance, reference_spectrum

BLOCK_PIXELS = 1 << 15

VALID = 0
SATURATED = 1
NONCONVERGENT = 2
MASKED = 3
REASONS = {VALID: "valid", SATURATED: "saturated", NONCONVERGENT: "nonconvergent", MASKED: "masked"}

DEFAULT_THB_MAX = 200.0


@dataclass(frozen=True, eq=False)
class Frame:
    """Planar image, ``data`` of shape (channels, height, width) in [0, 1]."""

    data: np.ndarray
    saturated: np.ndarray = None

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float64)
        if d.ndim != 3 or d.shape[0] not in (3, 6):
            raise ShapeError(f"frame data must be (3|6, H, W), got {d.shape}")
        if not np.all(np.isfinite(d)):
            raise ValidationError("frame contains non-finite values")
        sat = self.saturated
        sat = np.zeros(d.shape[1:], dtype=bool) if sat is None else np.asarray(sat, dtype=bool)
        if sat.shape != d.shape[1:]:
            raise ShapeError("saturation mask must match the frame's spatial shape")
        d = d.copy()
        d.setflags(write=False)
        sat = sat.copy()
        sat.setflags(write=False)
        object.__setattr__(self, "data", d)
        object.__setattr__(self, "saturated", sat)

    @property
    def channels(self):
        return self.data.shape[0]

    @property
    def height(self):
        return self.data.shape[1]

    @property
    def width(self):
        return self.data.shape[2]


@dataclass(frozen=True, eq=False)
class ConcentrationMap:
    """Per-pixel (HbO2, Hb) in g/L with reason codes and fit quality.

    ``reason`` is 0 for valid pixels, otherwise one of SATURATED,
    NONCONVERGENT, MASKED.  ``cod`` is NaN where undefined.
    """

    hbo2: np.ndarray
    hb: np.ndarray
    reason: np.ndarray = None
    cod: np.ndarray = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        hbo2 = np.asarray(self.hbo2, dtype=np.float64)
        hb = np.asarray(self.hb, dtype=np.float64)
        if hbo2.ndim != 2 or hbo2.shape != hb.shape:
            raise ShapeError("hbo2 and hb must be 2-D arrays of equal shape")
        reason = np.zeros(hbo2.shape, np.uint8) if self.reason is None else np.asarray(self.reason, np.uint8)
        cod = np.full(hbo2.shape, np.nan) if self.cod is None else np.asarray(self.cod, np.float64)
        if reason.shape != hbo2.shape or cod.shape != hbo2.shape:
            raise ShapeError("reason and cod must match the map shape")
        for name, arr in (("hbo2", hbo2), ("hb", hb), ("reason", reason), ("cod", cod)):
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "provenance", dict(self.provenance))

    @property
    def shape(self):
        return self.hbo2.shape

    @property
    def valid(self):
        return self.reason == VALID

    def thb(self):
        return self.hbo2 + self.hb

    def sato2(self):
        """Percent saturation; NaN where invalid or THb is not positive."""
        total = self.thb()
        with np.errstate(invalid="ignore", divide="ignore"):
            s = 100.0 * (self.hbo2 / total)
        return np.where(self.valid & (total > 0), s, np.nan)

    def with_reason(self, mask, code):
        reason = np.where(mask & self.valid, np.uint8(code), self.reason)
        return replace(self, reason=reason)


def stack_stereo(left, right):
    """Stack two registered 3-channel frames into one 6-channel frame
    ordered (L-R, L-G, L-B, R-R, R-G, R-B)."""
    if left.channels != 3 or right.channels != 3:
        raise ShapeError("stack_stereo expects two 3-channel frames")
    if left.data.shape != right.data.shape:
        raise ShapeError(
            f"stereo frames differ in size: {left.width}x{left.height} vs {right.width}x{right.height}"
        )
    return Frame(np.concatenate([left.data, right.data]), left.saturated | right.saturated)


def _unmix_block(rgb, pre_saturated, M, xi, i0, policy):
    n = rgb.shape[1]
    sat = pre_saturated | policy.saturated(rgb)
    ab = absorbance(M @ rgb, i0, policy.floor)
    alpha, conv = fit_absorbance(ab.values, ab.valid, xi, policy.tol_scale)
    cod = _cod_columns(ab.values, ab.valid, xi @ alpha.T)
    alpha[~conv] = np.nan
    reason = np.full(n, VALID, np.uint8)
    reason[~conv] = NONCONVERGENT
    reason[sat] = SATURATED
    alpha[sat] = np.nan
    cod[sat] = np.nan
    return alpha, reason, cod


def _cod_columns(a, valid, fit):
    """R^2 of ``fit`` against ``a`` column by column over valid bands."""
    if valid.all():
        nv = np.full(a.shape[1], float(a.shape[0]))
        mean = a.mean(axis=0)
        dev = a - mean
        res = a - fit
    else:
        w = valid.astype(np.float64)
        nv = w.sum(axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            mean = (a * w).sum(axis=0) / nv
        dev = (a - mean) * w
        res = (a - fit) * w
    ss_tot = np.einsum("bn,bn->n", dev, dev)
    ss_res = np.einsum("bn,bn->n", res, res)
    with np.errstate(invalid="ignore", divide="ignore"):
        cod = 1.0 - ss_res / ss_tot
    return np.where((nv >= 2) & (ss_tot > 0), cod, np.nan)


def process_frame(frame, bundle, op, policy=UnmixPolicy(), threads=1, provenance=None):
    """Unmix every pixel of ``frame``.

    ``threads=None`` uses all available cores.  The output does not depend
    on ``threads``.
    """
    if frame.channels != op.n_channels:
        raise ModeError(
            f"frame has {frame.channels} channels but the operator expects {op.n_channels}"
        )
    if op.response.grid != bundle.grid:
        raise ModeError("operator and spectral bundle use different wavelength grids")
    h, w = frame.height, frame.width
    rgb = frame.data.reshape(frame.channels, -1)
    pre = frame.saturated.reshape(-1)
    xi = bundle.basis.matrix
    i0 = reference_spectrum(op, bundle.illuminant)

    npx = h * w
    alpha = np.empty((npx, 2))
    reason = np.empty(npx, np.uint8)
    cod = np.empty(npx)

    def run(start):
        stop = min(start + BLOCK_PIXELS, npx)
        a, r, c = _unmix_block(
            rgb[:, start:stop], pre[start:stop], op.matrix, xi, i0, policy
        )
        alpha[start:stop] = a
        reason[start:stop] = r
        cod[start:stop] = c

    starts = range(0, npx, BLOCK_PIXELS)
    n_workers = resolve_threads(threads)
    if n_workers == 1:
        for s in starts:
            run(s)
    else:
        with ThreadPoolExecutor(n_workers) as pool:
            list(pool.map(run, starts))

    prov = {
        "mode": "stereo" if op.n_channels == 6 else "mono",
        "gamma": repr(op.gamma),
        "grid": bundle.grid.describe(),
        "channels": ",".join(op.response.channel_names),
        "floor": repr(policy.floor),
        "under": repr(policy.under),
        "over": repr(policy.over),
    }
    prov.update(provenance or {})
    return ConcentrationMap(
        alpha[:, 0].reshape(h, w),
        alpha[:, 1].reshape(h, w),
        reason.reshape(h, w),
        cod.reshape(h, w),
        prov,
    )


def resolve_threads(threads):
    if threads is None or threads == 0:
        return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count() or 1
    if threads < 0:
        raise ValidationError("thread count must be >= 0")
    return int(threads)


def outlier_mask(cmap, thb_max=DEFAULT_THB_MAX):
    """Mark valid pixels with THb above ``thb_max`` as MASKED."""
    if not thb_max > 0:
        raise ValidationError("thb_max must be > 0")
    return cmap.with_reason(cmap.thb() > thb_max, MASKED)


def unmix_frames(left, right, bundle, op, policy=UnmixPolicy(), threads=1):
    """Convenience wrapper choosing mono or stereo from the operator."""
    if op.n_channels == 6:
        if right is None:
            raise ModeError("stereo mode needs a right frame")
        frame = stack_stereo(left, right)
    else:
        frame = left
    return process_frame(frame, bundle, op, policy, threads)


def reason_counts(cmap):
    return {REASONS[k]: int(np.count_nonzero(cmap.reason == k)) for k in REASONS}

