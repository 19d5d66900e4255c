"""Regularised reconstruction of band intensities from RGB measurements.

The camera maps a spectrum ``I`` (bands) to channel values ``C @ I``.  With
far fewer channels than bands the inverse is underdetermined; we pick the
spectrum minimising

    ||C I - rgb||^2 + ||gamma * Gamma I||^2

with ``Gamma`` a discrete Laplacian, which has the closed form
``I = (C^T C + gamma^2 Gamma^T Gamma)^-1 C^T rgb``.  The bands x channels
matrix in front of ``rgb`` is precomputed once per calibration.
"""

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import ShapeError, SingularityError, ValidationError
from .spectra import CameraResponse

DEFAULT_GAMMA = 0.01


@dataclass(frozen=True, eq=False)
class LaplacianPrior:
    matrix: np.ndarray

    @property
    def n_bands(self):
        return self.matrix.shape[0]


def build_laplacian(n_bands):
    """Tridiagonal smoothness prior: 1 on the diagonal, -0.5 on the first
    off-diagonals, no wrap-around at the ends."""
    if n_bands < 2:
        raise ValidationError(f"Laplacian prior needs at least 2 bands, got {n_bands}")
    m = np.eye(n_bands)
    i = np.arange(n_bands - 1)
    m[i, i + 1] = -0.5
    m[i + 1, i] = -0.5
    m.setflags(write=False)
    return LaplacianPrior(m)


@dataclass(frozen=True, eq=False)
class TikhonovOperator:
    """Precomputed bands x channels reconstruction matrix."""

    matrix: np.ndarray
    gamma: float
    response: CameraResponse

    @property
    def n_channels(self):
        return self.matrix.shape[1]

    @property
    def n_bands(self):
        return self.matrix.shape[0]


def normal_matrix(response, prior, gamma):
    C = response.matrix
    G = prior.matrix
    return C.T @ C + (gamma * gamma) * (G.T @ G)


def build_tikhonov_operator(response, prior=None, gamma=DEFAULT_GAMMA):
    """Build ``(C^T C + gamma^2 Gamma^T Gamma)^-1 C^T`` via a Cholesky solve.

    Raises :class:`SingularityError` when the normal matrix is not numerically
    positive definite (e.g. ``gamma=0`` with fewer channels than bands).
    """
    if prior is None:
        prior = build_laplacian(response.n_bands)
    if prior.n_bands != response.n_bands:
        raise ShapeError(
            f"prior is {prior.n_bands} bands but the response has {response.n_bands}"
        )
    gamma = float(gamma)
    if not np.isfinite(gamma) or gamma < 0:
        raise ValidationError(f"gamma must be a finite value >= 0, got {gamma}")
    A = normal_matrix(response, prior, gamma)
    ev = np.linalg.eigvalsh(A)
    if ev[0] <= ev[-1] * A.shape[0] * np.finfo(float).eps:
        raise SingularityError(
            f"normal matrix is singular (gamma={gamma:g}, "
            f"{response.n_channels} channels x {response.n_bands} bands)"
        )
    M = linalg.cho_solve(linalg.cho_factor(A, lower=True), response.matrix.T)
    M.setflags(write=False)
    return TikhonovOperator(M, gamma, response)


def _check_channels(rgb, n):
    rgb = np.asarray(rgb, dtype=float)
    if rgb.ndim == 0 or rgb.shape[0] != n:
        raise ShapeError(f"expected {n} channel values along axis 0, got shape {rgb.shape}")
    return rgb


def reconstruct_spectrum(op, rgb):
    """Band intensities for ``rgb`` (channels along axis 0; extra axes are
    treated as independent pixels).  May dip slightly negative."""
    rgb = _check_channels(rgb, op.n_channels)
    if not np.all(np.isfinite(rgb)):
        raise ValidationError("channel values must be finite")
    if rgb.ndim == 1:
        return op.matrix @ rgb
    out = op.matrix @ rgb.reshape(rgb.shape[0], -1)
    return out.reshape((op.n_bands,) + rgb.shape[1:])


def naive_reconstruct(response, rgb):
    """Minimum-norm least-squares inverse of the camera, for comparison."""
    rgb = _check_channels(rgb, response.n_channels)
    return np.linalg.pinv(response.matrix) @ rgb


def tikhonov_objective(response, prior, gamma, spectrum, rgb):
    r = response.matrix @ spectrum - rgb
    p = gamma * (prior.matrix @ spectrum)
    return float(r @ r + p @ p)
