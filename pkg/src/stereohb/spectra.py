"""Spectral data model: wavelength grids, camera responses, chromophore
attenuation tables and illuminants, plus CSV ingestion and resampling.

All containers are frozen dataclasses whose arrays are marked read-only, so
they can be shared freely between threads.
"""

import csv
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import AlignmentError, ModeError, ParseError, RangeError, ValidationError

GRID_TOL_NM = 1e-9

# Molecular weight of haemoglobin used to turn molar extinction into per-g/L.
HB_GRAM_MOLECULAR_WEIGHT = 66500.0

# Effective optical pathlength (cm) folded into the default attenuation basis.
# One "unit" of pathlength in this package is this many centimetres; the
# absolute concentration scale is a linear function of this choice.
EFFECTIVE_PATHLENGTH_CM = 0.005

STEREO_CHANNELS = ("L-R", "L-G", "L-B", "R-R", "R-G", "R-B")
CHROMOPHORES = ("hbo2", "hb")


def _frozen(a, dtype=np.float64):
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class WavelengthGrid:
    """Ordered, uniformly spaced band centres in nm."""

    centres: np.ndarray

    def __post_init__(self):
        c = _frozen(self.centres)
        if c.ndim != 1 or c.size < 2:
            raise ValidationError("a wavelength grid needs at least 2 band centres")
        if not np.all(np.isfinite(c)):
            raise ValidationError("wavelength grid contains non-finite centres")
        d = np.diff(c)
        if np.any(d == 0):
            dup = c[1:][d == 0][0]
            raise ValidationError(f"duplicate wavelength {dup:g} nm")
        if np.any(d < 0):
            raise ValidationError("wavelengths must be strictly increasing")
        if np.max(np.abs(d - d[0])) > GRID_TOL_NM:
            bad = int(np.argmax(np.abs(d - d[0])))
            raise ValidationError(
                f"non-uniform spacing: {c[bad]:g} -> {c[bad + 1]:g} nm "
                f"(expected step {d[0]:g} nm)"
            )
        object.__setattr__(self, "centres", c)

    @classmethod
    def from_range(cls, start, stop, step):
        n = int(round((stop - start) / step)) + 1
        return cls(start + step * np.arange(n))

    @property
    def spacing(self):
        return float(self.centres[1] - self.centres[0])

    def __len__(self):
        return self.centres.size

    def __eq__(self, other):
        if not isinstance(other, WavelengthGrid):
            return NotImplemented
        return len(self) == len(other) and bool(
            np.all(np.abs(self.centres - other.centres) <= GRID_TOL_NM)
        )

    def __hash__(self):
        return hash((len(self), round(float(self.centres[0]), 6), round(self.spacing, 6)))

    def describe(self):
        return f"{self.centres[0]:g}-{self.centres[-1]:g}nm/{self.spacing:g}nm ({len(self)} bands)"


@dataclass(frozen=True, eq=False)
class CameraResponse:
    """Channels x bands sensitivity matrix ``C``."""

    matrix: np.ndarray
    channel_names: tuple
    grid: WavelengthGrid

    def __post_init__(self):
        m = _frozen(self.matrix)
        names = tuple(self.channel_names)
        if m.ndim != 2:
            raise ValidationError("camera response must be a 2-D channels x bands matrix")
        if m.shape[0] not in (3, 6):
            raise ValidationError(
                f"camera response must have 3 (mono) or 6 (stereo) channels, got {m.shape[0]}"
            )
        if m.shape[1] != len(self.grid):
            raise ValidationError(
                f"camera response has {m.shape[1]} bands but the grid has {len(self.grid)}"
            )
        if len(names) != m.shape[0]:
            raise ValidationError("one channel name per response row is required")
        if not np.all(np.isfinite(m)) or np.any(m < 0):
            raise ValidationError("camera response entries must be finite and non-negative")
        dead = [names[i] for i in range(m.shape[0]) if not np.any(m[i] > 0)]
        if dead:
            raise ValidationError(f"all-zero response row(s): {', '.join(dead)}")
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "channel_names", names)

    @property
    def n_channels(self):
        return self.matrix.shape[0]

    @property
    def n_bands(self):
        return self.matrix.shape[1]

    @property
    def mode(self):
        return "stereo" if self.n_channels == 6 else "mono"

    def white_balanced(self, illum):
        """Rows scaled so that the illuminant itself reads 1 in every channel,
        matching the normalisation applied to simulated and captured frames."""
        white = self.matrix @ np.asarray(illum.values)
        return CameraResponse(self.matrix / white[:, None], self.channel_names, self.grid)

    def camera(self, side="left"):
        """The 3-channel response of one camera of a stereo pair."""
        if self.n_channels == 3:
            return self
        rows = slice(0, 3) if side == "left" else slice(3, 6)
        return CameraResponse(self.matrix[rows], self.channel_names[rows], self.grid)


@dataclass(frozen=True, eq=False)
class ChromophoreBasis:
    """Bands x 2 attenuation matrix, columns (HbO2, Hb), in L/g per unit pathlength."""

    matrix: np.ndarray
    grid: WavelengthGrid

    def __post_init__(self):
        m = _frozen(self.matrix)
        if m.ndim != 2 or m.shape[1] != 2:
            raise ValidationError("chromophore basis must be bands x 2 (HbO2, Hb)")
        if m.shape[0] != len(self.grid):
            raise ValidationError(
                f"chromophore basis has {m.shape[0]} rows but the grid has {len(self.grid)}"
            )
        if not np.all(np.isfinite(m)) or np.any(m < 0):
            raise ValidationError("attenuation coefficients must be finite and non-negative")
        if np.linalg.matrix_rank(m) < 2:
            raise ValidationError("HbO2 and Hb columns are linearly dependent")
        object.__setattr__(self, "matrix", m)

    @property
    def gram(self):
        return self.matrix.T @ self.matrix

    def scaled(self, s):
        return ChromophoreBasis(self.matrix * np.asarray(s, dtype=float), self.grid)


@dataclass(frozen=True, eq=False)
class IlluminantSpectrum:
    """Incident intensity per band, normalised so the maximum is 1."""

    values: np.ndarray
    grid: WavelengthGrid

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 1 or v.size != len(self.grid):
            raise ValidationError(
                f"illuminant has {v.size} values but the grid has {len(self.grid)}"
            )
        if not np.all(np.isfinite(v)) or np.any(v <= 0):
            raise ValidationError("illuminant must be strictly positive on every band")
        object.__setattr__(self, "values", _frozen(v / v.max()))

    @classmethod
    def flat(cls, grid):
        return cls(np.ones(len(grid)), grid)


@dataclass(frozen=True)
class SpectralBundle:
    """Response, basis and illuminant checked to share one grid."""

    response: CameraResponse
    basis: ChromophoreBasis
    illuminant: IlluminantSpectrum

    @property
    def grid(self):
        return self.response.grid


def load_spectral_csv(path, expected_columns=None):
    """Read a spectral CSV.

    The first column must be ``wavelength_nm``; lines starting with ``#`` are
    ignored.  Returns ``(grid, columns)`` where ``columns`` maps each header
    name to a float array over the grid.
    """
    path = Path(path)
    header = None
    wl = []
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, rec in enumerate(csv.reader(fh), start=1):
            if not rec or not "".join(rec).strip():
                continue
            if rec[0].lstrip().startswith("#"):
                continue
            rec = [x.strip() for x in rec]
            if header is None:
                if rec[0] != "wavelength_nm":
                    raise ParseError(
                        f"first column header must be 'wavelength_nm', got {rec[0]!r}", path, lineno
                    )
                header = rec
                if expected_columns is not None and len(header) - 1 != expected_columns:
                    raise ParseError(
                        f"expected {expected_columns} value columns, found {len(header) - 1}",
                        path,
                        lineno,
                    )
                continue
            if len(rec) != len(header):
                raise ParseError(
                    f"expected {len(header)} fields, found {len(rec)}", path, lineno
                )
            try:
                vals = [float(x) for x in rec]
            except ValueError as exc:
                raise ParseError(f"malformed number ({exc})", path, lineno) from None
            if not all(math.isfinite(v) for v in vals):
                raise ParseError("non-finite value", path, lineno)
            if wl and vals[0] < wl[-1]:
                raise ParseError("rows must be sorted by ascending wavelength", path, lineno)
            wl.append(vals[0])
            rows.append(vals[1:])
    if header is None:
        raise ParseError("no header row", path)
    grid = WavelengthGrid(np.array(wl))
    data = np.array(rows, dtype=float).reshape(len(wl), len(header) - 1)
    return grid, {name: data[:, j].copy() for j, name in enumerate(header[1:])}


def write_spectral_csv(path, grid, columns, comment=None):
    """Inverse of :func:`load_spectral_csv`; values are written with ``repr``
    so a load/write cycle is bit-exact."""
    names = list(columns)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if comment:
            for line in comment.splitlines():
                fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["wavelength_nm", *names])
        for i, lam in enumerate(grid.centres):
            w.writerow([repr(float(lam)), *(repr(float(columns[n][i])) for n in names)])


def resample_to_grid(values, source, target):
    """Linearly interpolate ``values`` (bands along axis 0) from ``source`` onto
    ``target``.  Exact wherever centres coincide."""
    values = np.asarray(values, dtype=float)
    if values.shape[0] != len(source):
        raise ValidationError(
            f"{values.shape[0]} values supplied for a {len(source)}-band source grid"
        )
    lo, hi = source.centres[0], source.centres[-1]
    if target.centres[0] < lo - GRID_TOL_NM or target.centres[-1] > hi + GRID_TOL_NM:
        raise RangeError(
            f"target grid {target.describe()} is outside source range {lo:g}-{hi:g} nm"
        )
    x = np.clip(target.centres, lo, hi)
    if values.ndim == 1:
        return np.interp(x, source.centres, values)
    flat = values.reshape(values.shape[0], -1)
    out = np.column_stack([np.interp(x, source.centres, flat[:, j]) for j in range(flat.shape[1])])
    return out.reshape((len(target),) + values.shape[1:])


def validate_alignment(response, basis, illum):
    """Check the three calibration inputs share a grid and bundle them."""
    ref = response.grid
    for name, obj in (("chromophore basis", basis), ("illuminant", illum)):
        if obj.grid != ref:
            raise AlignmentError(
                f"{name} grid {obj.grid.describe()} does not match "
                f"camera response grid {ref.describe()}"
            )
    return SpectralBundle(response, basis, illum)


# ---------------------------------------------------------------- defaults


def _data_path(name):
    return resources.files("stereohb") / "data" / name


def default_grid():
    """The 24-band 460-690 nm working grid."""
    return WavelengthGrid.from_range(460.0, 690.0, 10.0)


def synthetic_grid():
    """The 51-band 400-900 nm grid used for synthetic studies."""
    return WavelengthGrid.from_range(400.0, 900.0, 10.0)


def load_response(path, mode=None):
    """Load a camera response CSV.

    ``mode='mono'`` on a stereo file keeps the left camera; ``mode='stereo'``
    on a mono file is a :class:`~stereohb.errors.ModeError`.
    """
    grid, cols = load_spectral_csv(path)
    names = tuple(cols)
    resp = CameraResponse(np.array([cols[n] for n in names]), names, grid)
    if mode == "mono":
        return resp.camera("left")
    if mode == "stereo" and resp.n_channels != 6:
        raise ModeError(f"{path}: stereo mode needs 6 response channels, file has {resp.n_channels}")
    return resp


def default_response(grid=None, mode="stereo"):
    """The shipped model stereo response, optionally resampled onto ``grid``."""
    name = "response_stereo_460_690.csv" if grid is None else "response_stereo_400_900.csv"
    with resources.as_file(_data_path(name)) as p:
        resp = load_response(p)
    if grid is not None and grid != resp.grid:
        m = resample_to_grid(resp.matrix.T, resp.grid, grid).T
        resp = CameraResponse(m, resp.channel_names, grid)
    return resp.camera("left") if mode == "mono" else resp


def haemoglobin_extinction():
    """Tabulated molar extinction (cm^-1 per mol/L, base 10) as ``(grid, table)``
    with ``table`` of shape (bands, 2) ordered (HbO2, Hb)."""
    with resources.as_file(_data_path("hb_extinction_prahl.csv")) as p:
        grid, cols = load_spectral_csv(p)
    return grid, np.column_stack([cols["hbo2"], cols["hb"]])


def extinction_to_attenuation(eps, pathlength_cm=EFFECTIVE_PATHLENGTH_CM):
    """Molar extinction (base 10) to natural-log absorbance per g/L over one
    unit of effective pathlength."""
    return math.log(10.0) * np.asarray(eps, dtype=float) * pathlength_cm / HB_GRAM_MOLECULAR_WEIGHT


def default_basis(grid=None, pathlength_cm=EFFECTIVE_PATHLENGTH_CM):
    grid = default_grid() if grid is None else grid
    src, eps = haemoglobin_extinction()
    return ChromophoreBasis(
        extinction_to_attenuation(resample_to_grid(eps, src, grid), pathlength_cm), grid
    )


def load_basis(path):
    """Load an attenuation basis CSV with columns ``hbo2`` and ``hb`` (L/g)."""
    grid, cols = load_spectral_csv(path)
    missing = [c for c in CHROMOPHORES if c not in cols]
    if missing:
        raise ParseError(f"missing chromophore column(s): {', '.join(missing)}", path)
    return ChromophoreBasis(np.column_stack([cols["hbo2"], cols["hb"]]), grid)


def load_illuminant(path):
    grid, cols = load_spectral_csv(path, expected_columns=1)
    return IlluminantSpectrum(next(iter(cols.values())), grid)


def default_bundle(grid=None, mode="stereo"):
    resp = default_response(grid, mode=mode)
    return validate_alignment(resp, default_basis(resp.grid), IlluminantSpectrum.flat(resp.grid))
