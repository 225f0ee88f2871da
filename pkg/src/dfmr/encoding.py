"""Multicoil non-uniform Fourier encoding with rigid motion.

Conventions (also the on-disk contract):

* k-space coordinates are radians per pixel, last axis = (k0, k1), matching
  image axes 0 and 1;
* image coordinates ``r`` live on the centered integer grid
  ``-N//2 .. N - N//2 - 1`` along each axis;
* rotations act counter-clockwise on (k0, k1);
* a segment with motion ``(nu, delta)`` is encoded as
  ``phase * F(R(nu) k)`` with ``phase = exp(-i R(nu) k . delta)``, which is
  the transform of the moved object ``rho(R(nu) r - delta)``.

The transform is an exact NUDFT. Training without motion goes through
:class:`NormalOperator`, which applies ``A^H A`` exactly via a Toeplitz
embedding on a doubled FFT grid.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .autodiff import DimensionError, Tensor, as_tensor, complex_to_pair
from .phantom import CoilSet


@dataclass
class KSpaceDataset:
    schedule: object            # SpokeSchedule
    samples: np.ndarray         # complex [n_spokes, n_coils, n_readout]
    noise_sigma: float = 0.0

    def __post_init__(self):
        if self.samples.ndim != 3:
            raise DimensionError(f"samples must be [spokes, coils, readout], got {self.samples.shape}")
        if self.samples.shape[0] != len(self.schedule):
            raise DimensionError(
                f"{self.samples.shape[0]} spokes of data for a {len(self.schedule)}-spoke schedule")

    @property
    def n_coils(self):
        return self.samples.shape[1]

    @property
    def n_readout(self):
        return self.samples.shape[2]


@dataclass
class MotionTrack:
    """Per-segment rigid motion: rotation (rad) and translation (pixels)."""

    rotation: np.ndarray
    translation: np.ndarray

    @classmethod
    def zeros(cls, n_segments):
        return cls(np.zeros(n_segments), np.zeros((n_segments, 2)))

    @classmethod
    def step(cls, n_segments, start, rotation_deg, shift):
        """Piecewise-constant motion switched on from segment ``start``."""
        tr = cls.zeros(n_segments)
        tr.rotation[start:] = math.radians(rotation_deg)
        tr.translation[start:] = shift
        return tr

    def __len__(self):
        return self.rotation.size

    def relative(self):
        """Motion of each segment relative to segment 0.

        Compose with the inverse of segment 0 so the result does not depend
        on the global rigid gauge.
        """
        nu = self.rotation - self.rotation[0]
        rot = rotation_matrix(-self.rotation[0])
        d = (self.translation - self.translation[0]) @ rot.T
        return MotionTrack(nu, d)


@dataclass
class GriddedInit:
    images: np.ndarray      # complex [n_bins, H, W], each unit max magnitude
    centers_ms: np.ndarray
    peaks: np.ndarray = None  # magnitude each bin was divided by

    def unnormalized(self):
        """Bin images on their common (coil-combined adjoint) scale."""
        return self.images * (1.0 if self.peaks is None else self.peaks[:, None, None])

    @property
    def n_bins(self):
        return self.images.shape[0]

    def as_channels(self):
        """Real input stack ``[2 * n_bins, H, W]``: (real, imag) per bin, bin-major."""
        out = np.empty((2 * self.n_bins,) + self.images.shape[1:])
        out[0::2] = self.images.real
        out[1::2] = self.images.imag
        return out


def rotation_matrix(nu):
    c, s = math.cos(nu), math.sin(nu)
    return np.array([[c, -s], [s, c]])


def apply_motion(coords, nu, delta):
    """Rotate coordinates and return the translation phase of every sample.

    ``nu`` and ``delta`` are scalars/2-vectors, or per-sample arrays of shape
    ``[...]`` and ``[..., 2]`` broadcasting against ``coords[..., 0]``.
    """
    coords = np.asarray(coords, dtype=np.float64)
    nu = np.asarray(nu, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    c, s = np.cos(nu), np.sin(nu)
    k0, k1 = coords[..., 0], coords[..., 1]
    out = np.stack([c * k0 - s * k1, s * k0 + c * k1], axis=-1)
    phase = np.exp(-1j * (out[..., 0] * delta[..., 0] + out[..., 1] * delta[..., 1]))
    return out, phase


def _flat(coords):
    coords = np.asarray(coords, dtype=np.float64)
    if coords.shape[-1] != 2:
        raise DimensionError(f"coordinates need a trailing axis of 2, got {coords.shape}")
    return coords.reshape(-1, 2)


def _check(image, coils):
    if image.ndim != 2 or coils.maps.shape[1:] != image.shape:
        raise DimensionError(f"image {image.shape} vs coil maps {coils.maps.shape}")


def nudft_forward(image, coils, coords):
    """Samples ``y[c, j] = sum_r s_c(r) rho(r) exp(-i k_j . r)``, shape ``[C, M]``."""
    image = np.asarray(image)
    _check(image, coils)
    return kernels.nudft_forward(coils.maps * image, _flat(coords))


def nudft_adjoint(samples, coils, coords, dcf=None):
    """``x(r) = sum_c conj(s_c(r)) sum_j dcf_j y[c, j] exp(+i k_j . r)``."""
    samples = np.asarray(samples, dtype=np.complex128)
    k = _flat(coords)
    if samples.ndim != 2 or samples.shape != (coils.n_coils, k.shape[0]):
        raise DimensionError(
            f"samples {samples.shape} vs {coils.n_coils} coils x {k.shape[0]} coordinates")
    if dcf is not None:
        samples = samples * np.asarray(dcf, dtype=np.float64).reshape(1, -1)
    per_coil = kernels.nudft_adjoint(samples, k, coils.maps.shape[1:])
    return np.sum(coils.maps.conj() * per_coil, axis=0)


def coord_gradient(image, coils, coords, upstream):
    """Gradient of a real loss with respect to the sample coordinates.

    ``upstream`` is the complex cotangent of the samples, ``[C, M]``, in the
    convention ``dL = Re sum conj(upstream) dy``. Returns ``[M, 2]``.
    """
    image = np.asarray(image)
    _check(image, coils)
    _, d0, d1 = kernels.nudft_jacobian(coils.maps * image, _flat(coords))
    g = np.asarray(upstream).conj()
    return np.stack([np.real(np.sum(g * d0, axis=0)), np.real(np.sum(g * d1, axis=0))], axis=-1)


def ramp_dcf(coords, n):
    """Radial density compensation ``max(|k|, pi / n)``."""
    k = _flat(coords)
    return np.maximum(np.hypot(k[:, 0], k[:, 1]), math.pi / n)


@dataclass
class EncodingOperator:
    """``A_t`` for every spoke of an acquisition, optionally with motion.

    Parameters
    ----------
    coords : ndarray
        ``[n_spokes, n_readout, 2]`` trajectory.
    coils : CoilSet
    segment : ndarray
        Inversion segment of every spoke; indexes ``motion``.
    motion : MotionTrack, optional
    """

    coords: np.ndarray
    coils: CoilSet
    segment: np.ndarray
    motion: MotionTrack = None
    _normals: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.coords.ndim != 3 or self.coords.shape[-1] != 2:
            raise DimensionError(f"coords must be [spokes, readout, 2], got {self.coords.shape}")
        if self.segment.shape != (self.coords.shape[0],):
            raise DimensionError("one segment index per spoke required")
        k = np.abs(self.coords)
        if np.any(k > math.pi * (1 + 1e-12)):
            raise ValueError("k-space coordinates must lie within [-pi, pi]")

    @property
    def image_shape(self):
        return self.coils.maps.shape[1:]

    def spoke_coords(self, spokes=None):
        """Coordinates and translation phase of ``spokes`` after motion."""
        spokes = np.arange(self.coords.shape[0]) if spokes is None else np.asarray(spokes)
        k = self.coords[spokes]
        if self.motion is None:
            return k, None
        seg = self.segment[spokes]
        return apply_motion(k, self.motion.rotation[seg][:, None],
                            self.motion.translation[seg][:, None, :])

    def forward(self, image, spokes=None):
        """Samples for ``spokes`` as ``[n_spokes, n_coils, n_readout]``."""
        k, phase = self.spoke_coords(spokes)
        y = nudft_forward(image, self.coils, k)
        if phase is not None:
            y = y * phase.reshape(1, -1)
        n, r = k.shape[:2]
        return y.reshape(-1, n, r).transpose(1, 0, 2)

    def adjoint(self, samples, spokes=None, dcf=None):
        k, phase = self.spoke_coords(spokes)
        y = np.asarray(samples).transpose(1, 0, 2).reshape(self.coils.n_coils, -1)
        if phase is not None:
            y = y * phase.conj().reshape(1, -1)
        return nudft_adjoint(y, self.coils, k, dcf)

    def normal(self, spokes):
        """Cached Toeplitz ``A^H A`` restricted to ``spokes`` (no motion)."""
        key = tuple(np.asarray(spokes).tolist())
        if key not in self._normals:
            self._normals[key] = NormalOperator(self.coords[np.asarray(spokes)].reshape(-1, 2),
                                                self.coils)
        return self._normals[key]


class NormalOperator:
    """Exact ``A^H A`` for fixed coordinates via circulant embedding.

    The point-spread kernel ``t(d) = sum_j exp(i k_j . d)`` is evaluated for all
    lags on a doubled grid with the adjoint NUDFT kernel, then applied with
    FFTs of size ``2H x 2W`` per coil.
    """

    def __init__(self, coords, coils):
        self.coils = coils
        h, w = coils.maps.shape[1:]
        self.shape = (h, w)
        k = _flat(coords)
        t = kernels.nudft_adjoint(np.ones((1, k.shape[0]), dtype=np.complex128), k, (2 * h, 2 * w))[0]
        # t is indexed by lag + (H, W); move lag 0 to index 0 for the circulant
        self.kernel_ft = np.fft.fft2(np.fft.ifftshift(t))

    def __call__(self, image):
        h, w = self.shape
        pad = np.zeros((self.coils.n_coils, 2 * h, 2 * w), dtype=np.complex128)
        pad[:, :h, :w] = self.coils.maps * image
        conv = np.fft.ifft2(np.fft.fft2(pad) * self.kernel_ft)[:, :h, :w]
        return np.sum(self.coils.maps.conj() * conv, axis=0)


def _image_of(pair):
    return pair.data[0] + 1j * pair.data[1]


def data_fit_normal(image, normal, rhs, energy):
    """``||A x - y||^2`` from ``A^H A``, ``rhs = A^H y`` and ``energy = ||y||^2``.

    ``image`` is a real-pair tensor ``[2, H, W]``.
    """
    image = as_tensor(image)
    x = _image_of(image)
    nx = normal(x)
    val = np.vdot(x, nx).real - 2.0 * np.vdot(x, rhs).real + energy
    grad = complex_to_pair(2.0 * (nx - rhs))
    return Tensor(val, (image,), lambda g: (g * grad,))


def data_fit_motion(image, op, spokes, measured, rotation, translation, fixed=()):
    """``sum_s ||y_s - A_{s, nu_s, delta_s} x||^2`` over the given ``spokes``.

    ``rotation`` (``[S]``) and ``translation`` (``[S, 2]``) are tensors of
    per-segment motion; segments in ``fixed`` receive no gradient.
    """
    image, rotation, translation = as_tensor(image), as_tensor(rotation), as_tensor(translation)
    spokes = np.asarray(spokes)
    k = op.coords[spokes]
    seg = op.segment[spokes]
    n, r = k.shape[:2]
    nu = np.repeat(rotation.data[seg], r)
    dl = np.repeat(translation.data[seg], r, axis=0)
    kr, phase = apply_motion(k.reshape(-1, 2), nu, dl)
    x = _image_of(image)
    coils = op.coils
    need_k = rotation.requires_grad or translation.requires_grad
    if need_k:
        f, d0, d1 = kernels.nudft_jacobian(coils.maps * x, kr)
    else:
        f = kernels.nudft_forward(coils.maps * x, kr)
    pred = f * phase
    y = np.asarray(measured).transpose(1, 0, 2).reshape(coils.n_coils, -1)
    res = pred - y
    val = np.vdot(res, res).real

    def vjp(g):
        gz = 2.0 * g * res
        gimg = complex_to_pair(nudft_adjoint(gz * phase.conj(), coils, kr))
        if not need_k:
            return gimg, None, None
        cg = gz.conj() * phase
        # d pred / d k'_d = phase * (dF/dk'_d - i delta_d F)
        gk0 = np.real(np.sum(cg * (d0 - 1j * dl[:, 0] * f), axis=0))
        gk1 = np.real(np.sum(cg * (d1 - 1j * dl[:, 1] * f), axis=0))
        gnu_s = gk0 * (-kr[:, 1]) + gk1 * kr[:, 0]
        gpred = np.sum(gz.conj() * pred, axis=0)
        gd0 = np.real(gpred * (-1j * kr[:, 0]))
        gd1 = np.real(gpred * (-1j * kr[:, 1]))
        seg_s = np.repeat(seg, r)
        n_seg = rotation.shape[0]
        gnu = np.bincount(seg_s, weights=gnu_s, minlength=n_seg)
        gdl = np.stack([np.bincount(seg_s, weights=gd0, minlength=n_seg),
                        np.bincount(seg_s, weights=gd1, minlength=n_seg)], axis=-1)
        for s in fixed:
            gnu[s] = 0.0
            gdl[s] = 0.0
        return gimg, gnu, gdl

    return Tensor(val, (image, rotation, translation), vjp)


def gridded_init(data, bins, op, dcf="ramp"):
    """Density-compensated, coil-combined adjoint per delay bin.

    Each bin image is divided by the coil sum-of-squares and scaled to unit
    maximum magnitude. ``dcf='none'`` uses unit weights (Cartesian data).
    """
    h, w = op.image_shape
    sos2 = np.sum(np.abs(op.coils.maps) ** 2, axis=0)
    sos2 = np.maximum(sos2, 1e-12 * sos2.max())
    images = np.zeros((bins.n_bins, h, w), dtype=np.complex128)
    peaks = np.ones(bins.n_bins)
    for b in range(bins.n_bins):
        spokes = bins.spokes(b)
        if spokes.size == 0:
            raise ValueError(f"delay bin {b} has no spokes")
        weights = None
        if dcf == "ramp":
            weights = ramp_dcf(op.spoke_coords(spokes)[0], h)
        elif dcf not in (None, "none"):
            raise ValueError(f"unknown dcf {dcf!r}")
        img = op.adjoint(data.samples[spokes], spokes, weights) / sos2
        peak = np.abs(img).max()
        if peak > 0:
            images[b] = img / peak
            peaks[b] = peak
    return GriddedInit(images, bins.centers_ms.copy(), peaks)


def coil_compress(data, coils, n_virtual):
    """PCA coil compression of data and sensitivities to ``n_virtual`` channels."""
    n = data.n_coils
    if not 1 <= n_virtual <= n:
        raise ValueError(f"n_virtual must be in [1, {n}], got {n_virtual}")
    mat = data.samples.transpose(1, 0, 2).reshape(n, -1)
    u, _, _ = np.linalg.svd(mat, full_matrices=False)
    mix = u[:, :n_virtual].conj().T            # [n_virtual, n]
    samples = np.einsum("vc,scr->svr", mix, data.samples)
    maps = np.einsum("vc,chw->vhw", mix, coils.maps)
    return KSpaceDataset(data.schedule, samples, data.noise_sigma), CoilSet(maps)


def retained_energy(data, n_virtual):
    """Fraction of data energy kept by the top ``n_virtual`` virtual coils."""
    mat = data.samples.transpose(1, 0, 2).reshape(data.n_coils, -1)
    s = np.linalg.svd(mat, compute_uv=False)
    return float(np.sum(s[:n_virtual] ** 2) / np.sum(s ** 2))
