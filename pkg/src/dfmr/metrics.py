"""Reconstruction quality measures."""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .phantom import GM, LABEL_NAMES


def scale_fit(recon, truth):
    """Global complex ``alpha`` minimising ``||alpha * recon - truth||``."""
    recon = np.asarray(recon)
    den = np.vdot(recon, recon).real
    return np.vdot(recon, truth) / den if den > 0 else 0.0


def nrmse(recon, truth):
    """``||alpha* recon - truth|| / ||truth||`` after the optimal global complex scale."""
    recon = np.asarray(recon)
    truth = np.asarray(truth)
    if recon.shape != truth.shape:
        raise ValueError(f"shape mismatch {recon.shape} vs {truth.shape}")
    tn = np.linalg.norm(truth)
    if tn == 0:
        raise ValueError("truth has zero norm")
    return float(np.linalg.norm(scale_fit(recon, truth) * recon - truth) / tn)


def per_image_nrmse(series, truth):
    """NRMSE of each image after one scale fit shared by the whole series."""
    alpha = scale_fit(series, truth)
    return np.array([np.linalg.norm(alpha * s - t) / np.linalg.norm(t)
                     for s, t in zip(series, truth)])


@dataclass
class RecoveryCurve:
    voxel: tuple
    label: int
    delays: np.ndarray
    values: np.ndarray

    @property
    def label_name(self):
        return LABEL_NAMES.get(self.label, str(self.label))


def extract_curves(series, delays, tissue, voxels):
    """Signed real recovery curves at ``voxels``.

    Each voxel is rotated by the conjugate of its phase at the longest delay,
    where inversion recovery signals are positive.
    """
    series = np.asarray(series)
    h, w = series.shape[1:]
    order = np.argsort(delays)
    out = []
    for v in voxels:
        i, j = v
        if not (0 <= i < h and 0 <= j < w):
            raise IndexError(f"voxel {v} outside {h}x{w} image")
        trace = series[order, i, j]
        last = trace[-1]
        ref = last / abs(last) if abs(last) > 0 else 1.0
        out.append(RecoveryCurve((int(i), int(j)), int(tissue.labels[i, j]),
                                 np.asarray(delays)[order], np.real(trace * np.conj(ref))))
    return out


def interior_mask(tissue, label, erode=1):
    """Voxels of ``label`` at least ``erode`` pixels away from other classes.

    Falls back to the whole class when erosion would leave nothing (tiny grids).
    """
    m = tissue.labels == label
    if not erode:
        return m
    inner = ndimage.binary_erosion(m, iterations=erode)
    return inner if inner.any() else m


def gm_null_magnitude(series, tissue, m0_gm):
    """Minimum over delays of the mean GM magnitude, in units of ``m0_gm``.

    Expects a scale-fitted series. Returns (value, index of the minimising delay).
    """
    mask = interior_mask(tissue, GM)
    means = np.array([np.abs(img[mask]).mean() for img in series])
    k = int(np.argmin(means))
    return float(means[k] / m0_gm), k


def gm_null_error(series, truth, delays, tissue):
    """Mean GM recovery-curve deviation at the delay closest to the GM null.

    ``series`` must already be scale-fitted to ``truth``. The sign is
    restored per voxel as in :func:`extract_curves`; the result is in
    units of the GM equilibrium magnetisation.
    """
    mask = interior_mask(tissue, GM)
    t_null = tissue.t1[GM] * np.log(2.0)
    k = int(np.argmin(np.abs(np.asarray(delays) - t_null)))
    ref = series[-1][mask]
    ref = np.where(np.abs(ref) > 0, ref / np.abs(ref), 1.0)
    vals = np.real(series[k][mask] * np.conj(ref))
    return float(np.abs(vals - np.real(truth[k][mask])).mean() / tissue.m0[GM])


def curve_max_deviation(series, truth, tissue, label):
    """Largest deviation of the mean signed curve of ``label`` from the truth curve."""
    mask = interior_mask(tissue, label)
    ref = series[-1][mask]
    ref = np.where(np.abs(ref) > 0, ref / np.abs(ref), 1.0)
    rec = np.real(series[:, mask] * np.conj(ref)[None]).mean(axis=1)
    tru = np.real(truth[:, mask]).mean(axis=1)
    return float(np.abs(rec - tru).max() / tissue.m0[label])
