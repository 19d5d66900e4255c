"""Error metrics against ground truth, fit quality and inclusion masks."""

from dataclasses import asdict, dataclass

import numpy as np

from .errors import EmptyComparisonError, ShapeError, ValidationError
from .pipeline import DEFAULT_THB_MAX, MASKED, outlier_mask

DEFAULT_COD_THRESHOLD = 0.5
QUANTITIES = ("thb", "hbo2", "hb", "sato2")


def _quantity(cmap, quantity):
    if quantity == "thb":
        return cmap.thb()
    if quantity == "hbo2":
        return cmap.hbo2
    if quantity == "hb":
        return cmap.hb
    if quantity == "sato2":
        return cmap.sato2()
    raise ValidationError(f"unknown quantity {quantity!r}; expected one of {QUANTITIES}")


def _joint(est, truth, quantity, include=None):
    if est.shape != truth.shape:
        raise ShapeError(f"maps differ in size: {est.shape} vs {truth.shape}")
    m = est.valid & truth.valid
    if include is not None:
        m &= include
    if quantity == "sato2":
        m &= (truth.thb() > 0) & (est.thb() > 0)
    return m


def abs_errors(est, truth, quantity, include=None):
    m = _joint(est, truth, quantity, include)
    return np.abs(_quantity(est, quantity)[m] - _quantity(truth, quantity)[m])


def mean_abs_error(est, truth, quantity="thb", include=None):
    """Mean and standard deviation of ``|est - truth|`` over pixels valid in
    both maps (and in ``include`` if given).  SatO2 additionally needs
    positive THb on both sides."""
    err = abs_errors(est, truth, quantity, include)
    if err.size == 0:
        raise EmptyComparisonError(f"no pixels valid in both maps for {quantity}")
    return float(err.mean()), float(err.std())


def pooled_concentration_error(est, truth, include=None):
    """HbO2 and Hb absolute errors pooled into one sample: (mean, std)."""
    err = np.concatenate(
        [abs_errors(est, truth, "hbo2", include), abs_errors(est, truth, "hb", include)]
    )
    if err.size == 0:
        raise EmptyComparisonError("no pixels valid in both maps")
    return float(err.mean()), float(err.std())


def coefficient_of_determination(a, alpha, basis):
    """R^2 of ``basis @ alpha`` against absorbance ``a`` over its valid bands.

    ``a`` is an :class:`~stereohb.unmix.AbsorbanceSpectrum`; ``alpha`` a
    :class:`~stereohb.unmix.ConcentrationPixel` or (HbO2, Hb) pair.  Returns
    NaN when fewer than two bands are valid or ``a`` is constant.
    """
    if hasattr(alpha, "c_hbo2"):
        alpha = (alpha.c_hbo2, alpha.c_hb)
    values = np.asarray(a.values, dtype=float)
    valid = np.asarray(a.valid, dtype=bool)
    fit = basis.matrix @ np.asarray(alpha, dtype=float)
    if valid.sum() < 2:
        return float("nan")
    y = values[valid]
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0:
        return float("nan")
    ss_res = float(np.sum((y - fit[valid]) ** 2))
    return 1.0 - ss_res / ss_tot


def cod_mask(cod, threshold=DEFAULT_COD_THRESHOLD):
    """Inclusion mask: strictly greater than ``threshold``; NaN is excluded."""
    if not np.isfinite(threshold):
        raise ValidationError("CoD threshold must be finite")
    cod = np.asarray(cod, dtype=float)
    with np.errstate(invalid="ignore"):
        return cod > threshold


@dataclass
class ErrorReport:
    mode: str
    mae_thb: float
    std_thb: float
    mae_hbo2: float
    mae_hb: float
    mae_pooled: float
    std_abs_err: float
    mae_sato2: float
    std_sato2: float
    n_valid: int
    n_masked: int
    n_outliers: int
    cod_source: str = "none"
    dataset: str = ""

    FIELDS = (
        "dataset", "mode", "mae_thb", "std_thb", "mae_hbo2", "mae_hb", "mae_pooled",
        "std_abs_err", "mae_sato2", "std_sato2", "n_valid", "n_masked", "n_outliers",
        "cod_source",
    )

    @property
    def n_total(self):
        return self.n_valid + self.n_masked + self.n_outliers

    def to_keyvalue(self):
        d = asdict(self)
        return "".join(f"{k} = {_fmt(d[k])}\n" for k in self.FIELDS)

    def to_row(self):
        d = asdict(self)
        return ",".join(_fmt(d[k]) for k in self.FIELDS)

    @classmethod
    def header(cls):
        return ",".join(cls.FIELDS)


def _fmt(v):
    if isinstance(v, float):
        return "nan" if np.isnan(v) else f"{v:.6g}"
    return str(v)


def evaluate(est, truth, cod_threshold=DEFAULT_COD_THRESHOLD, thb_max=DEFAULT_THB_MAX,
             mode=None, dataset=""):
    """Compare an estimate with ground truth.

    Pixel accounting, applied in order:

    * masked: invalid in either map, or failing the CoD mask;
    * outliers: estimated THb above ``thb_max``;
    * valid: everything else, which is what the error statistics cover.

    The CoD mask uses the truth map's CoD where it has one (the confidence in
    the ground truth), otherwise the estimate's own fit CoD.  Pass
    ``cod_threshold=None`` to disable it.
    """
    if est.shape != truth.shape:
        raise ShapeError(f"maps differ in size: {est.shape} vs {truth.shape}")
    base = est.valid & truth.valid
    if cod_threshold is None:
        include = np.ones(est.shape, bool)
        source = "none"
    elif np.any(np.isfinite(truth.cod)):
        include = cod_mask(truth.cod, cod_threshold)
        source = "truth:" + truth.provenance.get("cod_source", "unspecified")
    else:
        include = cod_mask(est.cod, cod_threshold)
        source = "estimate:reconstructed"
    kept = base & include
    screened = outlier_mask(est.with_reason(~kept, MASKED), thb_max)
    outliers = kept & ~screened.valid
    n_masked = int(np.count_nonzero(~kept))
    n_outliers = int(np.count_nonzero(outliers))
    good = screened.valid
    n_valid = int(np.count_nonzero(good))
    if n_valid == 0:
        raise EmptyComparisonError("no pixels survive masking")

    mae_thb, std_thb = mean_abs_error(screened, truth, "thb")
    pooled, pooled_std = pooled_concentration_error(screened, truth)
    try:
        mae_sat, std_sat = mean_abs_error(screened, truth, "sato2")
    except EmptyComparisonError:
        mae_sat, std_sat = float("nan"), float("nan")
    return ErrorReport(
        mode=mode or est.provenance.get("mode", "unknown"),
        mae_thb=mae_thb,
        std_thb=std_thb,
        mae_hbo2=mean_abs_error(screened, truth, "hbo2")[0],
        mae_hb=mean_abs_error(screened, truth, "hb")[0],
        mae_pooled=pooled,
        std_abs_err=pooled_std,
        mae_sato2=mae_sat,
        std_sato2=std_sat,
        n_valid=n_valid,
        n_masked=n_masked,
        n_outliers=n_outliers,
        cod_source=source,
        dataset=dataset,
    )
