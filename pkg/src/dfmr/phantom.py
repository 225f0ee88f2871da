"""Digital brain-like phantom, inversion-recovery contrast, coils and noise."""

import math
from dataclasses import dataclass, field, replace

import numpy as np

BACKGROUND, WM, GM, CSF = 0, 1, 2, 3
LABEL_NAMES = {BACKGROUND: "background", WM: "wm", GM: "gm", CSF: "csf"}

# 3T-like defaults; M0 in arbitrary units, T1 in ms
DEFAULT_M0 = {WM: 0.7, GM: 0.8, CSF: 1.0}
DEFAULT_T1 = {WM: 850.0, GM: 1400.0, CSF: 4000.0}


@dataclass(frozen=True)
class Ellipse:
    """Region painted with ``label``; geometry in units of the half field of view.

    ``center`` and ``axes`` are (axis-0, axis-1) pairs, ``angle`` rotates the
    ellipse counter-clockwise in degrees.
    """

    label: int
    center: tuple = (0.0, 0.0)
    axes: tuple = (0.5, 0.5)
    angle: float = 0.0


# painted in order: GM cortex, WM inside it, CSF core in the middle
DEFAULT_SPEC = (
    Ellipse(GM, (0.0, 0.0), (0.80, 0.66)),
    Ellipse(WM, (0.0, 0.0), (0.60, 0.47)),
    Ellipse(CSF, (0.0, 0.0), (0.22, 0.15)),
)


@dataclass
class TissueMap:
    labels: np.ndarray
    m0: dict = field(default_factory=lambda: dict(DEFAULT_M0))
    t1: dict = field(default_factory=lambda: dict(DEFAULT_T1))

    @property
    def shape(self):
        return self.labels.shape

    def mask(self, label):
        return self.labels == label

    def m0_map(self):
        out = np.zeros(self.shape)
        for c, v in self.m0.items():
            out[self.labels == c] = v
        return out


@dataclass
class GroundTruthSeries:
    delays: np.ndarray  # ms, strictly increasing
    images: np.ndarray  # complex [n_tau, H, W]

    def __len__(self):
        return len(self.delays)


@dataclass
class CoilSet:
    maps: np.ndarray  # complex [n_coils, H, W]

    @property
    def n_coils(self):
        return self.maps.shape[0]

    def sos(self):
        return np.sqrt(np.sum(np.abs(self.maps) ** 2, axis=0))


def _normalized_grid(size):
    h, w = size
    u0 = (np.arange(h) - h // 2) / (h / 2)
    u1 = (np.arange(w) - w // 2) / (w / 2)
    return np.meshgrid(u0, u1, indexing="ij")


def make_phantom(size=(64, 64), spec=DEFAULT_SPEC, m0=None, t1=None):
    """Rasterise ``spec`` (nested ellipses) into a label map.

    Raises
    ------
    ValueError
        If the grid is smaller than 16 pixels or any ellipse covers no voxel.
    """
    size = (size, size) if np.isscalar(size) else tuple(size)
    if min(size) < 16:
        raise ValueError(f"phantom size must be >= 16, got {size}")
    u0, u1 = _normalized_grid(size)
    labels = np.zeros(size, dtype=np.int64)
    for e in spec:
        a0, a1 = e.axes
        if a0 <= 0 or a1 <= 0:
            raise ValueError(f"degenerate ellipse {e}")
        th = math.radians(e.angle)
        d0 = u0 - e.center[0]
        d1 = u1 - e.center[1]
        p = math.cos(th) * d0 + math.sin(th) * d1
        q = -math.sin(th) * d0 + math.cos(th) * d1
        inside = (p / a0) ** 2 + (q / a1) ** 2 <= 1.0
        if not inside.any():
            raise ValueError(f"ellipse {e} covers no voxel at size {size}")
        labels[inside] = e.label
    tm = TissueMap(labels,
                   dict(DEFAULT_M0 if m0 is None else m0),
                   dict(DEFAULT_T1 if t1 is None else t1))
    for c in np.unique(labels):
        if c != BACKGROUND and (c not in tm.m0 or c not in tm.t1):
            raise ValueError(f"no tissue parameters for label {c}")
    return tm


def ir_signal(m0, t1, tau):
    """Ideal inversion recovery ``m0 * (1 - 2 exp(-tau / t1))``."""
    t1 = np.asarray(t1, dtype=np.float64)
    if np.any(t1 <= 0):
        raise ValueError("T1 must be positive")
    return m0 * (1.0 - 2.0 * np.exp(-np.asarray(tau, dtype=np.float64) / t1))


def render_series(tissue, delays):
    delays = np.asarray(delays, dtype=np.float64)
    if delays.size == 0 or np.any(np.diff(delays) <= 0):
        raise ValueError("delays must be non-empty and strictly increasing")
    images = np.zeros((delays.size,) + tissue.shape, dtype=np.complex128)
    for c in np.unique(tissue.labels):
        if c == BACKGROUND:
            continue
        m = tissue.labels == c
        s = ir_signal(tissue.m0[c], tissue.t1[c], delays)
        images[:, m] = s[:, None]
    return GroundTruthSeries(delays, images)


def render_at(tissue, tau):
    """Single real image at delay ``tau`` (ms), not wrapped in a series."""
    out = np.zeros(tissue.shape)
    for c in np.unique(tissue.labels):
        if c != BACKGROUND:
            out[tissue.labels == c] = ir_signal(tissue.m0[c], tissue.t1[c], tau)
    return out


def simulate_coils(n, size=(64, 64), seed=0, uniform=False):
    """Smooth complex receive maps: positive quadratic magnitude times a phase ramp.

    Coil ``c`` is brightest towards azimuth ``2 pi c / n``. The magnitude
    polynomial keeps a constant term large enough to stay positive on the
    whole field of view.
    """
    if n < 1:
        raise ValueError("need at least one coil")
    size = (size, size) if np.isscalar(size) else tuple(size)
    if uniform:
        return CoilSet(np.ones((n,) + size, dtype=np.complex128))
    rng = np.random.default_rng(seed)
    u0, u1 = _normalized_grid(size)
    maps = np.empty((n,) + size, dtype=np.complex128)
    for c in range(n):
        az = 2 * np.pi * c / n + rng.uniform(-0.2, 0.2)
        quad = rng.uniform(-1.0, 1.0, size=3)
        mag = (1.2 + 0.5 * (np.cos(az) * u0 + np.sin(az) * u1)
               + 0.1 * (quad[0] * u0 ** 2 + quad[1] * u1 ** 2 + quad[2] * u0 * u1))
        ph0, g0, g1 = rng.uniform(-np.pi, np.pi), *rng.uniform(-np.pi / 4, np.pi / 4, size=2)
        maps[c] = mag * np.exp(1j * (ph0 + g0 * u0 + g1 * u1))
    return CoilSet(maps)


def add_noise(data, sigma, seed=0):
    """Add circular complex Gaussian noise with per-sample std ``sigma``.

    ``sigma == 0`` returns the input object unchanged.
    """
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return data
    rng = np.random.default_rng(seed)
    shape = data.samples.shape
    noise = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * (sigma / math.sqrt(2))
    return replace(data, samples=data.samples + noise, noise_sigma=float(sigma))
