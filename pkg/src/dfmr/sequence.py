"""Segmented inversion-recovery radial acquisition: timing, view order, binning.

Times are held internally as integer microseconds so that schedule
arithmetic (e.g. ``800 * 4.4 ms + 500 ms``) is exact.
"""

import math
from dataclasses import dataclass

import numpy as np

GOLDEN_RATIO = (1.0 + math.sqrt(5.0)) / 2.0


def _us(ms):
    us = round(ms * 1000)
    if abs(us - ms * 1000) > 1e-6 * max(1.0, abs(ms * 1000)):
        raise ValueError(f"{ms} ms is not representable at 1 us resolution")
    return int(us)


@dataclass(frozen=True)
class SequenceTiming:
    tr_ms: float = 4.4
    spokes_per_segment: int = 800
    recovery_delay_ms: float = 500.0
    n_segments: int = 1

    def __post_init__(self):
        if self.tr_ms <= 0 or self.spokes_per_segment < 1 or self.n_segments < 1:
            raise ValueError(f"invalid timing {self}")
        if self.recovery_delay_ms < 0:
            raise ValueError("recovery delay must be non-negative")

    @property
    def tr_us(self):
        return _us(self.tr_ms)

    @property
    def readout_us(self):
        return self.spokes_per_segment * self.tr_us

    @property
    def period_us(self):
        return self.readout_us + _us(self.recovery_delay_ms)

    @property
    def readout_ms(self):
        """Duration of one segment's readout train, ms."""
        return self.readout_us / 1000

    @property
    def period_ms(self):
        """Inversion-to-inversion period, ms."""
        return self.period_us / 1000

    @property
    def total_spokes(self):
        return self.spokes_per_segment * self.n_segments


@dataclass
class SpokeSchedule:
    timing: SequenceTiming
    index: np.ndarray    # global spoke index
    local: np.ndarray    # index within its segment
    segment: np.ndarray
    t_ms: np.ndarray     # spoke start, ms from scan start
    tau_ms: np.ndarray   # readout centre, ms since the segment's inversion
    angle: np.ndarray    # rad, in [0, pi)

    def __len__(self):
        return self.index.size


@dataclass
class BinAssignment:
    n_bins: int
    bin_index: np.ndarray   # per spoke
    centers_ms: np.ndarray  # representative delay per bin
    edges_ms: np.ndarray    # n_bins + 1 boundaries
    window_ms: float        # readout duration the bins tile

    def spokes(self, b):
        return np.flatnonzero(self.bin_index == b)

    def normalized_centers(self):
        """Bin centres mapped affinely from [0, window] to [0, 1]."""
        return self.centers_ms / self.window_ms


def parse_angle_mode(mode):
    """Normalise ``'golden'``, ``'tiny:N'`` or ``('tiny', N)`` to a tiny index."""
    if isinstance(mode, tuple):
        kind, n = mode
    elif isinstance(mode, str) and ":" in mode:
        kind, n = mode.split(":", 1)
        n = int(n)
    else:
        kind, n = mode, 1
    kind = str(kind).strip().lower()
    if kind == "golden":
        return 1
    if kind == "tiny":
        if int(n) < 1:
            raise ValueError("tiny golden angle index must be >= 1")
        return int(n)
    raise ValueError(f"unknown angle mode {mode!r}")


def angle_increment(mode="golden"):
    n = parse_angle_mode(mode)
    return math.pi / (GOLDEN_RATIO + n - 1)


def golden_angles(n, mode="golden"):
    """View angles ``j * psi mod pi`` for ``j = 0 .. n-1``."""
    if n < 1:
        raise ValueError("need at least one angle")
    psi = angle_increment(mode)
    return np.mod(np.arange(n) * psi, math.pi)


def generate_schedule(timing, angle_mode="golden"):
    s = np.repeat(np.arange(timing.n_segments), timing.spokes_per_segment)
    j = np.tile(np.arange(timing.spokes_per_segment), timing.n_segments)
    t_us = s * timing.period_us + j * timing.tr_us
    # readout centre of spoke j sits at (j + 1/2) TR after the inversion
    tau_us2 = (2 * j + 1) * timing.tr_us
    return SpokeSchedule(
        timing=timing,
        index=np.arange(timing.total_spokes),
        local=j,
        segment=s,
        t_ms=t_us / 1000,
        tau_ms=tau_us2 / 2000,
        angle=golden_angles(timing.total_spokes, angle_mode),
    )


def bin_by_delay(schedule, n_bins):
    """Split each segment's readout window into ``n_bins`` equal delay intervals."""
    timing = schedule.timing
    if not 1 <= n_bins <= timing.spokes_per_segment:
        raise ValueError(
            f"n_bins must be in [1, {timing.spokes_per_segment}], got {n_bins}")
    window = timing.readout_ms
    edges = np.linspace(0.0, window, n_bins + 1)
    idx = np.floor(schedule.tau_ms / window * n_bins).astype(np.int64)
    idx = np.clip(idx, 0, n_bins - 1)
    centers = 0.5 * (edges[:-1] + edges[1:])
    return BinAssignment(n_bins, idx, centers, edges, window)


def _radii(n_readout, k_max, center_out):
    if n_readout < 2:
        raise ValueError("a spoke needs at least two samples")
    if center_out:
        return k_max * np.arange(n_readout) / (n_readout - 1)
    # symmetric integer offsets keep the middle sample at exactly k = 0
    half = (n_readout - 1) / 2
    return np.clip(k_max * (np.arange(n_readout) - half) / half, -k_max, k_max)


def spoke_coords(angle, n_readout, k_max=math.pi, center_out=False):
    """k-space samples along one spoke as an ``[n_readout, 2]`` array (rad/pixel)."""
    radii = _radii(n_readout, k_max, center_out)
    return np.stack([radii * math.cos(angle), radii * math.sin(angle)], axis=-1)


def radial_trajectory(schedule, n_readout, k_max=math.pi, center_out=False):
    """Coordinates for every spoke, ``[n_spokes, n_readout, 2]``."""
    radii = _radii(n_readout, k_max, center_out)
    direction = np.stack([np.cos(schedule.angle), np.sin(schedule.angle)], axis=-1)
    return radii[None, :, None] * direction[:, None, :]


def cartesian_trajectory(schedule, shape):
    """Line ``index mod H`` of a fully sampled Cartesian grid, one line per spoke.

    Used for exact-recovery checks; ``n_readout`` equals the image width.
    """
    h, w = shape
    lines = schedule.index % h
    k0 = 2 * math.pi * (lines - h // 2) / h
    k1 = 2 * math.pi * (np.arange(w) - w // 2) / w
    out = np.empty((len(schedule), w, 2))
    out[..., 0] = k0[:, None]
    out[..., 1] = k1[None, :]
    return out
