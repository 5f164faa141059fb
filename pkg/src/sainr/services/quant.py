"""
SA-INR — DTI Quantification

Log-linear least-squares tensor fitting, a closed-form symmetric 3x3
eigensolver and the scalar maps (MD, FA, AD, RD, EV1, EV1xFA) compared
between reconstructions.

All functions are vectorized over leading pixel axes: signals (..., n)
give tensors (..., 3, 3) and maps (...).
"""
import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..models import DirectionSet

logger = logging.getLogger(__name__)

MIN_DIRECTIONS = 6
CLAMP_FRACTION = 1e-6
# below this eigenvalue gap (relative to the spectrum's magnitude) use LAPACK
DEGENERACY_GAP = 1e-2
MAP_NAMES = ("md", "fa", "ad", "rd", "ev1", "ev1_fa")


class QuantError(ValueError):
    """Invalid input to a DTI operation."""
    pass


@dataclass(eq=False)
class TensorFit:
    """Per-pixel fitted tensors (..., 3, 3) with log S0, residual and validity flags."""
    tensor: np.ndarray
    log_s0: np.ndarray
    residual: np.ndarray
    valid: np.ndarray
    clamped: np.ndarray
    reason: Optional[str] = None


@dataclass(eq=False)
class TensorMapSet:
    """Scalar and vector maps of a fit; zero outside `mask`."""
    md: np.ndarray
    fa: np.ndarray
    ad: np.ndarray
    rd: np.ndarray
    ev1: np.ndarray
    ev1_fa: np.ndarray
    eigenvalues: np.ndarray
    mask: np.ndarray

    def get(self, name: str) -> np.ndarray:
        if name not in MAP_NAMES:
            raise QuantError(f"unknown map '{name}'")
        return getattr(self, name)


def design_matrix(dirs: DirectionSet) -> np.ndarray:
    """Rows (-b [gx^2, gy^2, gz^2, 2gxgy, 2gxgz, 2gygz], 1), preceded by the b=0 row."""
    g = dirs.vectors
    b = dirs.b_value
    gx, gy, gz = g[:, 0], g[:, 1], g[:, 2]
    rows = -b * np.stack([gx * gx, gy * gy, gz * gz, 2 * gx * gy, 2 * gx * gz, 2 * gy * gz], axis=1)
    rows = np.concatenate([rows, np.ones((len(g), 1))], axis=1)
    b0_row = np.zeros((1, 7))
    b0_row[0, 6] = 1.0
    return np.concatenate([b0_row, rows], axis=0)


def _unpack(coef: np.ndarray) -> np.ndarray:
    dxx, dyy, dzz, dxy, dxz, dyz = (coef[..., k] for k in range(6))
    return np.stack([
        np.stack([dxx, dxy, dxz], axis=-1),
        np.stack([dxy, dyy, dyz], axis=-1),
        np.stack([dxz, dyz, dzz], axis=-1),
    ], axis=-2)


def _invalid(shape: tuple[int, ...], reason: str) -> TensorFit:
    logger.warning(f"DTI fit rejected: {reason}")
    return TensorFit(
        tensor=np.zeros(shape + (3, 3)), log_s0=np.zeros(shape), residual=np.zeros(shape),
        valid=np.zeros(shape, dtype=bool), clamped=np.zeros(shape, dtype=bool), reason=reason,
    )


def fit_dti(signals, s0, dirs: DirectionSet, clamp_nonpositive: bool = False) -> TensorFit:
    """
    Ordinary least squares on log-signals with S0 as the b=0 measurement.

    Pixels with s0 <= 0 are invalid. Nonpositive DWI signals make a pixel
    invalid, or with `clamp_nonpositive` are raised to 1e-6 s0 and flagged.

    Args:
        signals: DWI signals, shape (..., n_dirs), in direction-set order
        s0: b=0 signal, broadcast to the leading shape of `signals`
        dirs: Directions and b-value the signals were measured with
        clamp_nonpositive: Clamp nonpositive signals instead of rejecting the pixel

    Returns:
        TensorFit with tensors of shape (..., 3, 3). When the whole fit is
        impossible (fewer than 6 directions, rank-deficient design) every
        pixel is invalid and `reason` says why.
    """
    signals = np.asarray(signals, dtype=np.float64)
    s0 = np.broadcast_to(np.asarray(s0, dtype=np.float64), signals.shape[:-1])
    if signals.shape[-1] != len(dirs):
        raise QuantError(f"{signals.shape[-1]} signals for {len(dirs)} directions")
    shape = signals.shape[:-1]
    if len(dirs) < MIN_DIRECTIONS:
        return _invalid(shape, f"{len(dirs)} directions, need at least {MIN_DIRECTIONS}")
    X = design_matrix(dirs)
    if np.linalg.matrix_rank(X) < 7:
        return _invalid(shape, "rank-deficient design matrix")

    positive_s0 = s0 > 0.0
    nonpositive = (signals <= 0.0).any(axis=-1)
    floor = CLAMP_FRACTION * np.where(positive_s0, s0, 1.0)
    safe = np.where(signals > 0.0, signals, floor[..., None])
    clamped = nonpositive & positive_s0
    valid = positive_s0 if clamp_nonpositive else positive_s0 & ~nonpositive
    if clamped.any():
        action = "clamped" if clamp_nonpositive else "rejected"
        logger.warning(f"{int(clamped.sum())} pixels with nonpositive signal {action}")

    y = np.concatenate([np.log(np.where(positive_s0, s0, 1.0))[..., None], np.log(safe)], axis=-1)
    flat = y.reshape(-1, y.shape[-1])
    coef, *_ = np.linalg.lstsq(X, flat.T, rcond=None)
    coef = coef.T
    resid = ((flat - coef @ X.T) ** 2).sum(axis=-1)

    coef = coef.reshape(shape + (7,))
    tensor = np.where(valid[..., None, None], _unpack(coef), 0.0)
    return TensorFit(
        tensor=tensor,
        log_s0=np.where(valid, coef[..., 6], 0.0),
        residual=np.where(valid, resid.reshape(shape), 0.0),
        valid=valid,
        clamped=clamped if clamp_nonpositive else np.zeros(shape, dtype=bool),
    )


def _cardano_eigenvalues(A: np.ndarray) -> np.ndarray:
    """Descending eigenvalues (..., 3) by the trigonometric solution of the characteristic cubic."""
    q = np.trace(A, axis1=-2, axis2=-1) / 3.0
    p1 = A[..., 0, 1] ** 2 + A[..., 0, 2] ** 2 + A[..., 1, 2] ** 2
    diag = np.diagonal(A, axis1=-2, axis2=-1)
    p2 = ((diag - q[..., None]) ** 2).sum(axis=-1) + 2.0 * p1
    p = np.sqrt(p2 / 6.0)
    safe_p = np.where(p > 0.0, p, 1.0)
    B = (A - q[..., None, None] * np.eye(3)) / safe_p[..., None, None]
    r = np.clip(np.linalg.det(B) / 2.0, -1.0, 1.0)
    phi = np.arccos(r) / 3.0
    l1 = q + 2.0 * p * np.cos(phi)
    l3 = q + 2.0 * p * np.cos(phi + 2.0 * math.pi / 3.0)
    l2 = 3.0 * q - l1 - l3
    return np.stack([l1, l2, l3], axis=-1)


def _null_vector(A: np.ndarray, lam: np.ndarray) -> np.ndarray:
    """Unit vector orthogonal to the rows of A - lam I: the largest of the three row cross products."""
    M = A - lam[..., None, None] * np.eye(3)
    crosses = np.stack([
        np.cross(M[..., 0, :], M[..., 1, :]),
        np.cross(M[..., 0, :], M[..., 2, :]),
        np.cross(M[..., 1, :], M[..., 2, :]),
    ], axis=-2)
    norms = np.linalg.norm(crosses, axis=-1)
    best = np.take_along_axis(crosses, norms.argmax(axis=-1)[..., None, None], axis=-2)[..., 0, :]
    return best / np.linalg.norm(best, axis=-1, keepdims=True)


def eigensystem_sym3(D) -> tuple[np.ndarray, np.ndarray]:
    """
    Eigenvalues (..., 3), descending, and eigenvectors as columns (..., 3, 3).

    Closed form for well-separated spectra; near-degenerate ones go through
    LAPACK's Householder-based `eigh`.
    """
    A = np.asarray(D, dtype=np.float64)
    if A.shape[-2:] != (3, 3):
        raise QuantError(f"expected (..., 3, 3) matrices, got {A.shape}")
    if not np.isfinite(A).all():
        raise QuantError("matrix has non-finite entries")
    if np.abs(A - np.swapaxes(A, -1, -2)).max(initial=0.0) > 1e-12:
        raise QuantError("matrix is not symmetric within 1e-12")
    A = 0.5 * (A + np.swapaxes(A, -1, -2))

    lam = _cardano_eigenvalues(A)
    scale = np.maximum(np.abs(lam).max(axis=-1), np.finfo(np.float64).tiny)
    gap = np.minimum(lam[..., 0] - lam[..., 1], lam[..., 1] - lam[..., 2]) / scale
    degenerate = gap < DEGENERACY_GAP

    vecs = np.zeros(A.shape)
    closed = ~degenerate
    if closed.any():
        Ac, lc = A[closed], lam[closed]
        v1 = _null_vector(Ac, lc[:, 0])
        v3 = _null_vector(Ac, lc[:, 2])
        v3 = v3 - (v1 * v3).sum(axis=-1, keepdims=True) * v1
        v3 /= np.linalg.norm(v3, axis=-1, keepdims=True)
        v2 = np.cross(v3, v1)
        V = np.stack([v1, v2, v3], axis=-1)
        vecs[closed] = V
        lam[closed] = np.einsum("nij,nik,nkj->nj", V, Ac, V)
    if degenerate.any():
        w, V = np.linalg.eigh(A[degenerate])
        lam[degenerate] = w[:, ::-1]
        vecs[degenerate] = V[:, :, ::-1]
    return lam, vecs


def fractional_anisotropy(eigenvalues: np.ndarray) -> np.ndarray:
    md = eigenvalues.mean(axis=-1, keepdims=True)
    num = np.sqrt(((eigenvalues - md) ** 2).sum(axis=-1))
    den_sq = (eigenvalues ** 2).sum(axis=-1)
    fa = np.sqrt(1.5) * num / np.sqrt(np.where(den_sq < 1e-20, 1.0, den_sq))
    return np.where(den_sq < 1e-20, 0.0, np.clip(fa, 0.0, 1.0))


def _fix_sign(v: np.ndarray) -> np.ndarray:
    """Flip so the largest-magnitude component is nonnegative."""
    lead = np.take_along_axis(v, np.abs(v).argmax(axis=-1)[..., None], axis=-1)
    return np.where(lead < 0.0, -v, v)


def scalar_maps(fit: TensorFit) -> TensorMapSet:
    mask = fit.valid
    lam, vecs = eigensystem_sym3(fit.tensor)
    ad = lam[..., 0]
    rd = 0.5 * (lam[..., 1] + lam[..., 2])
    md = (ad + 2.0 * rd) / 3.0
    fa = fractional_anisotropy(lam)
    ev1 = _fix_sign(vecs[..., :, 0])
    ev1 = np.where(mask[..., None], ev1, 0.0)
    fa = np.where(mask, fa, 0.0)
    return TensorMapSet(
        md=np.where(mask, md, 0.0),
        fa=fa,
        ad=np.where(mask, ad, 0.0),
        rd=np.where(mask, rd, 0.0),
        ev1=ev1,
        ev1_fa=fa[..., None] * ev1,
        eigenvalues=np.where(mask[..., None], lam, 0.0),
        mask=mask.copy(),
    )


def map_nmse(estimate, reference, mask) -> float:
    """Sum over the mask of (est - ref)^2 over sum of ref^2; vector maps are stacked by component."""
    est = np.asarray(estimate, dtype=np.float64)
    ref = np.asarray(reference, dtype=np.float64)
    if est.shape != ref.shape:
        raise QuantError(f"shape mismatch {est.shape} vs {ref.shape}")
    mask = np.asarray(mask, dtype=bool)
    sel_est, sel_ref = est[mask], ref[mask]
    energy = float((sel_ref ** 2).sum())
    if energy == 0.0:
        raise QuantError("reference map is all zero within the mask")
    return float(((sel_est - sel_ref) ** 2).sum()) / energy


def fit_images(dwis: np.ndarray, b0: np.ndarray, dirs: DirectionSet,
               clamp_nonpositive: bool = True) -> tuple[TensorFit, TensorMapSet]:
    """Fit (N, H, W) DWI stacks pixelwise and derive the maps."""
    fit = fit_dti(np.moveaxis(np.asarray(dwis, dtype=np.float64), 0, -1), b0, dirs,
                  clamp_nonpositive=clamp_nonpositive)
    if fit.reason is not None:
        raise QuantError(fit.reason)
    return fit, scalar_maps(fit)


def compare_maps(estimate: TensorMapSet, reference: TensorMapSet, mask) -> dict[str, float]:
    return {name: map_nmse(estimate.get(name), reference.get(name), mask) for name in MAP_NAMES}


def color_fa(maps: TensorMapSet) -> np.ndarray:
    """|EV1| x FA per pixel as RGB in [0, 1]."""
    return np.clip(np.abs(maps.ev1_fa), 0.0, 1.0)


def maps_from_tensors(tensors: np.ndarray, mask: np.ndarray) -> TensorMapSet:
    """Maps of known tensors, e.g. the phantom's analytic ground truth."""
    mask = np.asarray(mask, dtype=bool)
    tensors = np.where(mask[..., None, None], np.asarray(tensors, dtype=np.float64), 0.0)
    shape = mask.shape
    fit = TensorFit(tensor=tensors, log_s0=np.zeros(shape), residual=np.zeros(shape), valid=mask,
                    clamped=np.zeros(shape, dtype=bool))
    return scalar_maps(fit)
