"""Quick numerical self-checks behind ``dfmr selftest``.

Each check returns a :class:`Check` with the worst observed error and the
tolerance it was held to. The reference transforms here are plain loops,
deliberately independent of the vectorised kernels.
"""

import cmath
import math
from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .dfm import Architecture, build_network, objective_motion, objective_static
from .encoding import EncodingOperator, KSpaceDataset, MotionTrack, data_fit_normal, nudft_forward
from .lowrank import bin_problems
from .phantom import CoilSet
from .sequence import SequenceTiming, bin_by_delay, generate_schedule, radial_trajectory


@dataclass
class Check:
    name: str
    error: float
    tol: float

    @property
    def ok(self):
        return bool(self.error < self.tol)

    def line(self):
        return f"{'PASS' if self.ok else 'FAIL'} {self.name}: {self.error:.3e} (tol {self.tol:.0e})"


def loop_dft(image, coords):
    """``y_m = sum_{i,j} x_ij exp(-i (k0 r_i + k1 r_j))`` by explicit loops."""
    h, w = image.shape
    out = []
    for k0, k1 in coords:
        acc = 0j
        for i in range(h):
            for j in range(w):
                acc += image[i, j] * cmath.exp(-1j * (k0 * (i - h // 2) + k1 * (j - w // 2)))
        out.append(acc)
    return np.array(out)


def _random_case(rng, max_size=16, max_coils=3, n_samples=24):
    h, w = rng.integers(2, max_size + 1, size=2)
    c = int(rng.integers(1, max_coils + 1))
    img = rng.standard_normal((h, w)) + 1j * rng.standard_normal((h, w))
    maps = rng.standard_normal((c, h, w)) + 1j * rng.standard_normal((c, h, w))
    coords = rng.uniform(-math.pi, math.pi, size=(n_samples, 2))
    return img, CoilSet(maps), coords


def check_oracle(n=20, seed=0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        img, coils, coords = _random_case(rng)
        got = nudft_forward(img, coils, coords)
        ref = np.stack([loop_dft(m * img, coords) for m in coils.maps])
        worst = max(worst, np.linalg.norm(got - ref) / np.linalg.norm(ref))
    return Check("nudft vs loop DFT", worst, 1e-12)


def _random_operator(rng, motion):
    h, w = rng.integers(4, 17, size=2)
    c = int(rng.integers(1, 4))
    n_seg, per = 3, 4
    maps = rng.standard_normal((c, h, w)) + 1j * rng.standard_normal((c, h, w))
    coords = rng.uniform(-math.pi / math.sqrt(2), math.pi / math.sqrt(2), size=(n_seg * per, 6, 2))
    track = None
    if motion:
        track = MotionTrack(rng.uniform(-0.3, 0.3, n_seg), rng.uniform(-2, 2, (n_seg, 2)))
    return EncodingOperator(coords, CoilSet(maps), np.repeat(np.arange(n_seg), per), track)


def check_adjoint(n=20, seed=1):
    rng = np.random.default_rng(seed)
    worst = {False: 0.0, True: 0.0}
    for motion in (False, True):
        for _ in range(n):
            op = _random_operator(rng, motion)
            h, w = op.image_shape
            x = rng.standard_normal((h, w)) + 1j * rng.standard_normal((h, w))
            ax = op.forward(x)
            y = rng.standard_normal(ax.shape) + 1j * rng.standard_normal(ax.shape)
            lhs = np.vdot(y, ax)
            rhs = np.vdot(op.adjoint(y), x)
            err = abs(lhs - rhs) / (np.linalg.norm(ax) * np.linalg.norm(y))
            worst[motion] = max(worst[motion], err)
    return [Check("adjoint identity (static)", worst[False], 1e-12),
            Check("adjoint identity (motion)", worst[True], 1e-12)]


def small_problem(seed=0, size=8, n_coils=2, n_bins=2, motion=True):
    """An 8x8 radial acquisition with random data, for gradient checks."""
    rng = np.random.default_rng(seed)
    timing = SequenceTiming(tr_ms=10.0, spokes_per_segment=4, recovery_delay_ms=20.0, n_segments=3)
    schedule = generate_schedule(timing)
    bins = bin_by_delay(schedule, n_bins)
    coords = radial_trajectory(schedule, size) * (1 - 1e-9)
    maps = (rng.standard_normal((n_coils, size, size))
            + 1j * rng.standard_normal((n_coils, size, size))) / 2 + 1.0
    track = MotionTrack(rng.uniform(-0.1, 0.1, 3), rng.uniform(-1, 1, (3, 2))) if motion else None
    op = EncodingOperator(coords, CoilSet(maps), schedule.segment, track)
    shape = (len(schedule), n_coils, size)
    samples = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    return KSpaceDataset(schedule, samples, 1.0), op, bins


def directional_check(name, f, params, rng, h=1e-5):
    """Compare ``<grad f, d>`` with a central difference along a random ``d`` per parameter."""
    for p in params:
        p.zero_grad()
    ad.backward(f())
    grads = [p.grad.copy() for p in params]
    worst = 0.0
    for p, g in zip(params, grads):
        d = rng.standard_normal(p.data.shape)
        base = p.data.copy()
        p.data[...] = base + h * d
        fp = f().item()
        p.data[...] = base - h * d
        fm = f().item()
        p.data[...] = base
        fd = (fp - fm) / (2 * h)
        an = float(np.sum(g * d))
        worst = max(worst, abs(fd - an) / max(abs(fd), abs(an), 1e-300))
    return Check(name, worst, 1e-4)


def check_gradients(seed=2):
    rng = np.random.default_rng(seed)
    data, op, bins = small_problem(seed)
    static_op = replace(op, motion=None, _normals={})
    gamma = ad.Tensor(rng.standard_normal((2 * bins.n_bins,) + op.image_shape))
    taus = bins.normalized_centers()
    problems = bin_problems(data, static_op, bins)
    net = build_network(Architecture(in_channels=2 * bins.n_bins, hidden=8), seed)
    conv = list(net.conv_w) + list(net.conv_b)
    dense = list(net.dense_w) + list(net.dense_b)
    out = [
        directional_check("dfm objective: conv weights", lambda: objective_static(
            net, gamma, taus, problems, 1e-3), conv, rng),
        directional_check("dfm objective: temporal weights", lambda: objective_static(
            net, gamma, taus, problems, 1e-3), dense, rng),
    ]
    rank = 3
    U = ad.Parameter(rng.standard_normal((2, op.image_shape[0] * op.image_shape[1], rank)))
    V = ad.Parameter(rng.standard_normal((2, rank, bins.n_bins)))

    def lowrank_objective():
        total = None
        for b, p in enumerate(problems):
            img = ad.reshape(ad.complex_matmul(U, V[:, :, b:b + 1]), (2,) + op.image_shape)
            term = data_fit_normal(img, p.normal, p.rhs, p.energy)
            total = term if total is None else ad.add(total, term)
        return ad.scale(total, 1e-3)

    out.append(directional_check("low-rank objective: U, V", lowrank_objective, [U, V], rng))
    rot = ad.Parameter(op.motion.rotation.copy())
    trans = ad.Parameter(op.motion.translation.copy())
    f = lambda: objective_motion(net, gamma, taus, data, op, bins, rot, trans, 0.01, 0.01, 1e-3)
    out.append(directional_check("dfm-mc objective: network", f, conv + dense, rng))
    out.append(directional_check("dfm-mc objective: rotation, translation", f, [rot, trans], rng))
    return out


def run_all():
    checks = [check_oracle(), *check_adjoint(), *check_gradients()]
    return checks
