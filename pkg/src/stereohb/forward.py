"""Per-pixel Beer-Lambert forward model, camera projection, noise and the
three-vessel phantom used for synthetic studies.

Random numbers come from numpy's PCG64 seeded with ``NoiseSpec.seed``.
Draws are taken in row-major pixel order with the band index varying
fastest within a pixel.  Stereo simulations spawn independent child streams
(left camera, right camera, multispectral) from the seed so each camera's
noise is reproducible on its own.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, PlacementError, ShapeError, ValidationError
from .pipeline import ConcentrationMap, Frame, _cod_columns
from .unmix import ConcentrationPixel, absorbance, fit_absorbance

BAND_SPACE = "band"
CHANNEL_SPACE = "channel"

SIGMA_SWEEP = (0.01, 0.03, 0.05, 0.07)


def sigma_to_8bit(sigma):
    """Noise sigma on a [0, 1] scale expressed in 8-bit code values."""
    return 256.0 * sigma


@dataclass(frozen=True)
class Vessel:
    centre_x: float  # mm
    width_mm: float
    oxygenation: float  # 0..1
    blood_thb: float = 145.0  # g/L


@dataclass(frozen=True)
class PhantomSpec:
    width: int = 256
    height: int = 256
    pixel_pitch: float = 0.05  # mm / pixel
    vessels: tuple = (
        Vessel(3.0, 2.0, 1.0),
        Vessel(6.5, 1.0, 0.0),
        Vessel(10.0, 0.5, 1.0),
    )
    background_thb: float = 5.0
    background_oxygenation: float = 0.7

    def __post_init__(self):
        if self.width < 1 or self.height < 1 or not self.pixel_pitch > 0:
            raise ValidationError("phantom size and pixel pitch must be positive")
        if self.background_thb < 0 or not 0 <= self.background_oxygenation <= 1:
            raise ValidationError("background THb must be >= 0 and oxygenation in [0, 1]")
        object.__setattr__(self, "vessels", tuple(self.vessels))
        for v in self.vessels:
            if not v.width_mm > 0:
                raise ValidationError("vessel widths must be > 0")
            if not 0 <= v.oxygenation <= 1:
                raise ValidationError("vessel oxygenation must be in [0, 1]")
            if v.blood_thb < 0:
                raise ValidationError("vessel THb must be >= 0")

    @property
    def extent_mm(self):
        return self.width * self.pixel_pitch


@dataclass(frozen=True)
class NoiseSpec:
    sigma: float = 0.0
    seed: int = 0
    target: str = CHANNEL_SPACE

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ValidationError("noise sigma must be >= 0")
        if self.target not in (BAND_SPACE, CHANNEL_SPACE):
            raise ValidationError(f"noise target must be {BAND_SPACE!r} or {CHANNEL_SPACE!r}")


def _alpha_array(alpha):
    if isinstance(alpha, ConcentrationPixel):
        if not alpha.valid:
            raise ValidationError("cannot simulate an invalid pixel")
        alpha = (alpha.c_hbo2, alpha.c_hb)
    alpha = np.asarray(alpha, dtype=float)
    if alpha.shape[0] != 2:
        raise ShapeError("concentrations must have (HbO2, Hb) along axis 0")
    if np.any(~np.isfinite(alpha)) or np.any(alpha < 0):
        raise ValidationError("concentrations must be finite and >= 0")
    return alpha


def beer_lambert_forward(alpha, basis, illum):
    """``I = I0 * exp(-xi @ alpha)``; ``alpha`` has (HbO2, Hb) on axis 0 and
    the result has bands on axis 0."""
    a = _alpha_array(alpha)
    flat = a.reshape(2, -1)
    i0 = np.asarray(illum.values)[:, None]
    out = i0 * np.exp(-(basis.matrix @ flat))
    return out.reshape((basis.matrix.shape[0],) + a.shape[1:])


def project_to_rgb(response, intensity, illum=None):
    """Camera channels for band intensities, white-normalised so that
    ``intensity == I0`` maps to 1 in every channel."""
    intensity = np.asarray(intensity, dtype=float)
    if intensity.shape[0] != response.n_bands:
        raise ShapeError(
            f"{intensity.shape[0]} bands supplied to a {response.n_bands}-band response"
        )
    i0 = np.ones(response.n_bands) if illum is None else np.asarray(illum.values)
    white = response.matrix @ i0
    flat = intensity.reshape(response.n_bands, -1)
    rgb = (response.matrix @ flat) / white[:, None]
    return rgb.reshape((response.n_channels,) + intensity.shape[1:])


def normalized_response(response):
    m = response.matrix
    return m / m.sum(axis=1, keepdims=True)


def add_noise(values, spec, response=None, rng=None):
    """Add zero-mean Gaussian noise.

    Band space: independent ``sigma * g`` per band.  Channel space: band noise
    ``sigma * g`` pushed through the response with rows normalised to unit sum,
    which correlates the channels the way overlapping filters would.
    """
    values = np.asarray(values, dtype=float)
    if spec.target == CHANNEL_SPACE and response is None:
        raise ConfigError("channel-space noise needs a camera response")
    if spec.sigma == 0:
        return values.copy()
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    if spec.target == BAND_SPACE:
        g = rng.standard_normal(values.shape[1:] + values.shape[:1])
        return values + spec.sigma * np.moveaxis(g, -1, 0)
    if values.shape[0] != response.n_channels:
        raise ShapeError(f"{values.shape[0]} channels vs {response.n_channels} response rows")
    g = rng.standard_normal(values.shape[1:] + (response.n_bands,))
    g = np.moveaxis(g, -1, 0).reshape(response.n_bands, -1)
    noise = (normalized_response(response) @ (spec.sigma * g)).reshape(values.shape)
    return values + noise


def phantom_labels(spec):
    """Integer label image: 0 background, k for the k-th vessel (1-based).
    Later vessels overwrite earlier ones."""
    x = (np.arange(spec.width) + 0.5) * spec.pixel_pitch
    row = np.zeros(spec.width, dtype=np.int32)
    for k, v in enumerate(spec.vessels, start=1):
        lo, hi = v.centre_x - v.width_mm / 2, v.centre_x + v.width_mm / 2
        if lo < 0 or hi > spec.extent_mm:
            raise PlacementError(
                f"vessel {k} spans {lo:g}-{hi:g} mm, outside the 0-{spec.extent_mm:g} mm image"
            )
        inside = np.abs(x - v.centre_x) <= v.width_mm / 2
        if not inside.any():
            raise PlacementError(f"vessel {k} is narrower than one pixel and covers none")
        row[inside] = k
    return np.tile(row, (spec.height, 1))


def make_phantom(spec=None):
    """Ground-truth map of vertical vessel stripes on a uniform background."""
    spec = PhantomSpec() if spec is None else spec
    labels = phantom_labels(spec)
    thb = np.full(len(spec.vessels) + 1, spec.background_thb, dtype=float)
    ox = np.full(len(spec.vessels) + 1, spec.background_oxygenation, dtype=float)
    for k, v in enumerate(spec.vessels, start=1):
        thb[k] = v.blood_thb
        ox[k] = v.oxygenation
    hbo2 = (thb * ox)[labels]
    hb = (thb * (1.0 - ox))[labels]
    return ConcentrationMap(hbo2, hb, provenance={"source": "phantom"})


@dataclass(frozen=True, eq=False)
class SyntheticDataset:
    truth: ConcentrationMap
    multispectral: np.ndarray  # (bands, H, W), noiseless
    left: Frame
    right: Frame = None
    noise: NoiseSpec = field(default_factory=NoiseSpec)


def _frame_from_rgb(rgb):
    clipped = np.clip(rgb, 0.0, 1.0)
    return Frame(clipped, saturated=np.any(rgb != clipped, axis=0))


def simulate(truth, bundle, noise=NoiseSpec(), policy=None):
    """Render a ground-truth map to camera frames.

    The response in ``bundle`` may be mono or stereo.  Channel noise is drawn
    per camera; frames are clipped to [0, 1] and clipped pixels flagged.  The
    truth map's ``cod`` is filled with the fit quality of a band-space noisy
    multispectral measurement, i.e. the confidence a multispectral camera
    would have in the ground truth at this noise level.
    """
    ss = np.random.SeedSequence(noise.seed)
    left_ss, right_ss, msi_ss = ss.spawn(3)
    alpha = np.stack([truth.hbo2, truth.hb])
    spectra = beer_lambert_forward(alpha, bundle.basis, bundle.illuminant)
    resp = bundle.response
    cams = [resp.camera("left")] + ([resp.camera("right")] if resp.n_channels == 6 else [])
    frames = []
    for cam, cs in zip(cams, (left_ss, right_ss)):
        rgb = project_to_rgb(cam, spectra, bundle.illuminant)
        spec = NoiseSpec(noise.sigma, noise.seed, CHANNEL_SPACE)
        rgb = add_noise(rgb, spec, cam, rng=np.random.default_rng(cs))
        frames.append(_frame_from_rgb(rgb))

    msi_spec = NoiseSpec(noise.sigma, noise.seed, BAND_SPACE)
    noisy = add_noise(spectra, msi_spec, rng=np.random.default_rng(msi_ss))
    cod = multispectral_cod(noisy, bundle)
    truth = ConcentrationMap(
        truth.hbo2, truth.hb, truth.reason, cod,
        {**truth.provenance, "sigma": repr(noise.sigma), "seed": str(noise.seed),
         "cod_source": "multispectral"},
    )
    return SyntheticDataset(
        truth, spectra, frames[0], frames[1] if len(frames) > 1 else None, noise
    )


def multispectral_cod(spectra, bundle, floor=1e-6):
    """Coefficient of determination of the non-negative Beer-Lambert fit to
    band-space data of shape (bands, H, W)."""
    xi = bundle.basis.matrix
    flat = spectra.reshape(spectra.shape[0], -1)
    ab = absorbance(flat, bundle.illuminant, floor)
    alpha, _ = fit_absorbance(ab.values, ab.valid, xi)
    return _cod_columns(ab.values, ab.valid, xi @ alpha.T).reshape(spectra.shape[1:])
