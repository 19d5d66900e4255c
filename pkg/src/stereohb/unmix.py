"""Non-negative Beer-Lambert unmixing of reconstructed spectra.

Absorbance ``a = -ln(I / I0)`` is modelled as ``xi @ alpha`` with ``alpha``
the (HbO2, Hb) concentrations in g/L.  The constrained fit uses the FNNLS
active-set method of Bro & de Jong (J. Chemometrics 11, 1997), which works on
the cross-product matrices ``xi^T xi`` and ``xi^T a`` only.  Because every pixel
shares ``xi``, the Gram matrix is formed once and :func:`fnnls_batch` runs the
same active-set iterations over many pixels at a time.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import IlluminantError, NumericError, ShapeError, ValidationError
from .inversion import reconstruct_spectrum

INTENSITY_FLOOR = 1e-6
UNDER_SATURATED = 1.0 / 255.0
OVER_SATURATED = 254.0 / 255.0
TOL_SCALE = 1e-10


class UndefinedRatioError(NumericError):
    """Oxygen saturation requested for a pixel with zero total haemoglobin."""


@dataclass(frozen=True)
class UnmixPolicy:
    under: float = UNDER_SATURATED
    over: float = OVER_SATURATED
    floor: float = INTENSITY_FLOOR
    tol_scale: float = TOL_SCALE

    def __post_init__(self):
        if not self.floor > 0:
            raise ValidationError("intensity floor must be > 0")
        if not self.under < self.over:
            raise ValidationError("under-saturation threshold must be below over-saturation")

    def saturated(self, rgb):
        """Per-pixel saturation flag; channels along axis 0."""
        rgb = np.asarray(rgb)
        return np.any((rgb <= self.under) | (rgb >= self.over), axis=0)


@dataclass(frozen=True)
class AbsorbanceSpectrum:
    values: np.ndarray
    valid: np.ndarray  # False where the intensity was clamped to the floor


@dataclass(frozen=True)
class ConcentrationPixel:
    c_hbo2: float
    c_hb: float
    valid: bool = True
    reason: str = None


def thb(p):
    return p.c_hbo2 + p.c_hb


def sato2(p):
    """Oxygen saturation in percent."""
    total = thb(p)
    if not total > 0:
        raise UndefinedRatioError("SatO2 is undefined when total haemoglobin is zero")
    return 100.0 * (p.c_hbo2 / total)


def absorbance(intensity, illum, floor=INTENSITY_FLOOR):
    """``-ln(max(I, floor) / I0)`` with bands on axis 0.

    ``illum`` is an :class:`~stereohb.spectra.IlluminantSpectrum` or an array.
    Bands at or below ``floor`` are computed with the floor and marked invalid.
    """
    i0 = np.asarray(getattr(illum, "values", illum), dtype=float)
    intensity = np.asarray(intensity, dtype=float)
    if np.any(~np.isfinite(i0)) or np.any(i0 <= 0):
        raise IlluminantError("illuminant must be strictly positive on every band")
    if not floor > 0:
        raise ValidationError("intensity floor must be > 0")
    if intensity.shape[0] != i0.shape[0]:
        raise ShapeError(f"{intensity.shape[0]} bands of intensity vs {i0.shape[0]} illuminant bands")
    i0 = i0.reshape((-1,) + (1,) * (intensity.ndim - 1))
    valid = intensity > floor
    a = -np.log(np.maximum(intensity, floor) / i0)
    return AbsorbanceSpectrum(a, valid)


def default_tol(gram):
    return TOL_SCALE * float(np.trace(gram))


def fnnls(gram, cross, tol=None, max_iter=None):
    """Solve ``min ||X alpha - y||^2, alpha >= 0`` given ``gram = X^T X`` and
    ``cross = X^T y``.

    Returns ``(alpha, w)`` where ``w = cross - gram @ alpha`` is the dual
    vector: ``w <= tol`` on the zero set, ``|w| <= tol`` on the positive set.
    """
    gram = np.asarray(gram, dtype=float)
    cross = np.asarray(cross, dtype=float)
    if not (np.all(np.isfinite(gram)) and np.all(np.isfinite(cross))):
        raise NumericError("fnnls inputs must be finite")
    n = cross.shape[0]
    if tol is None:
        tol = default_tol(gram)
    if max_iter is None:
        max_iter = 30 * n

    passive = np.zeros(n, dtype=bool)
    x = np.zeros(n)
    w = cross - gram @ x
    it = 0
    while not passive.all() and np.max(np.where(passive, -np.inf, w)) > tol:
        j = int(np.argmax(np.where(passive, -np.inf, w)))
        passive[j] = True
        s = _solve_passive(gram, cross, passive)
        while np.any(s[passive] <= tol) and it < max_iter:
            it += 1
            q = passive & (s <= tol)
            with np.errstate(invalid="ignore", divide="ignore"):
                ratio = x[q] / (x[q] - s[q])
            alpha = np.nanmin(np.append(ratio, 1.0))
            x = x + alpha * (s - x)
            passive &= ~(np.abs(x) < tol)
            x[~passive] = 0.0
            s = _solve_passive(gram, cross, passive)
        x = s
        w = cross - gram @ x
        if it >= max_iter:
            raise NumericError("fnnls did not converge")
    return x, w


def _solve_passive(gram, cross, passive):
    s = np.zeros_like(cross)
    if passive.any():
        idx = np.flatnonzero(passive)
        s[idx] = np.linalg.solve(gram[np.ix_(idx, idx)], cross[idx])
    return s


def fnnls_batch(gram, cross, tol=None, max_iter=None):
    """Vectorised :func:`fnnls` over many right-hand sides.

    ``cross`` has shape (N, n).  ``gram`` is either one shared (n, n) matrix
    or a stack of per-row matrices of shape (N, n, n).  ``tol`` may be a
    scalar or one value per row.  Returns ``(alpha, converged)``; rows that
    exhaust ``max_iter`` inner iterations are reported as not converged.
    """
    gram = np.asarray(gram, dtype=float)
    cross = np.asarray(cross, dtype=float)
    if not (np.all(np.isfinite(gram)) and np.all(np.isfinite(cross))):
        raise NumericError("fnnls inputs must be finite")
    N, n = cross.shape
    shared = gram.ndim == 2
    if tol is None:
        tol = TOL_SCALE * np.trace(gram, axis1=-2, axis2=-1)
    tol = np.broadcast_to(np.asarray(tol, dtype=float), (N,))
    if max_iter is None:
        max_iter = 30 * n

    def rows_gram(r):
        return gram if shared else gram[r]

    x = np.zeros((N, n))
    passive = np.zeros((N, n), dtype=bool)
    iters = np.zeros(N, dtype=np.int64)
    w = cross.copy()
    if shared and N > 1:
        # A strictly positive unconstrained solution has zero gradient and
        # so already is the optimum; only the rest need the active set.
        s = cross @ np.linalg.inv(gram).T
        inside = np.all(s > tol[:, None], axis=1)
        x[inside] = s[inside]
        passive[inside] = True
        w[inside] = 0.0
    todo = np.flatnonzero(np.any(~passive & (w > tol[:, None]), axis=1))
    for _ in range(n + max_iter):
        if todo.size == 0:
            break
        t = tol[todo][:, None]
        P = passive[todo]
        j = np.argmax(np.where(P, -np.inf, w[todo]), axis=1)
        P[np.arange(todo.size), j] = True
        xs = x[todo]
        s = _solve_passive_batch(rows_gram(todo), cross[todo], P)
        it = iters[todo]
        inner = np.any(P & (s <= t), axis=1) & (it < max_iter)
        while inner.any():
            k = np.flatnonzero(inner)
            it[k] += 1
            q = P[k] & (s[k] <= t[k])
            with np.errstate(invalid="ignore", divide="ignore"):
                ratio = np.where(q, xs[k] / (xs[k] - s[k]), np.inf)
            alpha = np.minimum(np.nan_to_num(ratio, nan=0.0).min(axis=1), 1.0)
            xk = xs[k] + alpha[:, None] * (s[k] - xs[k])
            Pk = P[k] & ~(np.abs(xk) < t[k])
            xk[~Pk] = 0.0
            xs[k] = xk
            P[k] = Pk
            s[k] = _solve_passive_batch(rows_gram(todo[k]), cross[todo[k]], Pk)
            inner = np.any(P & (s <= t), axis=1) & (it < max_iter)
        x[todo] = s
        passive[todo] = P
        iters[todo] = it
        if shared:
            w[todo] = cross[todo] - s @ gram
        else:
            w[todo] = cross[todo] - np.einsum("kij,kj->ki", gram[todo], s)
        todo = todo[np.any(~P & (w[todo] > t), axis=1) & (it < max_iter)]
    iters[todo] = max_iter
    converged = iters < max_iter
    return x, converged


def _solve_passive_batch(gram, cross, passive):
    """Solve each row's passive-set subsystem, grouping rows by pattern."""
    n = cross.shape[1]
    s = np.zeros_like(cross)
    codes = passive @ (1 << np.arange(n))
    for code in np.unique(codes):
        if code == 0:
            continue
        rows = np.flatnonzero(codes == code)
        idx = np.flatnonzero((int(code) >> np.arange(n)) & 1)
        if gram.ndim == 2:
            sub = np.linalg.inv(gram[np.ix_(idx, idx)])
            s[np.ix_(rows, idx)] = cross[np.ix_(rows, idx)] @ sub.T
        else:
            sub = gram[rows][:, idx][:, :, idx]
            rhs = cross[np.ix_(rows, idx)][..., None]
            s[np.ix_(rows, idx)] = np.linalg.solve(sub, rhs)[..., 0]
    return s


def fit_absorbance(values, valid, xi, tol_scale=TOL_SCALE):
    """Non-negative fit of many absorbance columns, ignoring invalid bands.

    ``values`` and ``valid`` are (bands, N).  Columns with every band valid
    share one Gram matrix; the rest get their own, built from their valid
    bands only.  Returns ``(alpha (N, 2), converged (N,))``.  Columns with
    fewer valid bands than chromophores cannot be fitted and come back as
    zeros with ``converged`` False.
    """
    values = np.asarray(values, dtype=float)
    valid = np.asarray(valid, dtype=bool)
    xi = np.asarray(xi, dtype=float)
    n = values.shape[1]
    k = xi.shape[1]
    alpha = np.zeros((n, k))
    converged = np.zeros(n, dtype=bool)
    full = valid.all(axis=0)
    gram = xi.T @ xi
    if full.any():
        alpha[full], converged[full] = fnnls_batch(
            gram, values[:, full].T @ xi, tol_scale * float(np.trace(gram))
        )
    part = np.flatnonzero(~full & (valid.sum(axis=0) >= k))
    if part.size:
        # Per-column Gram as a sum of band outer products over valid bands.
        outer = (xi[:, :, None] * xi[:, None, :]).reshape(len(xi), k * k)
        g = (valid[:, part].T.astype(float) @ outer).reshape(-1, k, k)
        cross = np.where(valid[:, part], values[:, part], 0.0).T @ xi
        tol = tol_scale * np.trace(g, axis1=1, axis2=2)
        alpha[part], converged[part] = fnnls_batch(g, cross, tol)
    return alpha, converged


def reference_spectrum(op, illum):
    """The illuminant as it comes out of the reconstruction: ``M @ C @ I0``.

    Absorbance is taken against this rather than against ``I0`` itself so
    that an unattenuated pixel has exactly zero absorbance; any systematic
    shape the prior imposes on reconstructions cancels in the ratio.
    """
    i0 = np.asarray(getattr(illum, "values", illum), dtype=float)
    ref = op.matrix @ (op.response.matrix @ i0)
    if np.any(ref <= 0):
        bad = op.response.grid.centres[ref <= 0]
        raise IlluminantError(
            "reconstructed illuminant is not positive at "
            + ", ".join(f"{w:g}" for w in bad) + " nm; check the response calibration"
        )
    return ref


def unmix_pixel(op, basis, illum, rgb, policy=UnmixPolicy()):
    """Reconstruct, take absorbance and fit one pixel.

    ``op`` must be built from the white-balanced response (see
    :meth:`~stereohb.spectra.CameraResponse.white_balanced`) so that its
    channel scale matches frames normalised to the illuminant.
    """
    rgb = np.asarray(rgb, dtype=float)
    if rgb.shape != (op.n_channels,):
        raise ShapeError(f"expected {op.n_channels} channels, got shape {rgb.shape}")
    if policy.saturated(rgb):
        return ConcentrationPixel(math.nan, math.nan, valid=False, reason="saturated")
    spectrum = reconstruct_spectrum(op, rgb)
    a = absorbance(spectrum, reference_spectrum(op, illum), policy.floor)
    alpha, ok = fit_absorbance(a.values[:, None], a.valid[:, None], basis.matrix, policy.tol_scale)
    if not ok[0]:
        return ConcentrationPixel(math.nan, math.nan, valid=False, reason="nonconvergent")
    return ConcentrationPixel(float(alpha[0, 0]), float(alpha[0, 1]))
