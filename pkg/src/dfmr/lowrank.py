"""Low-rank factor baseline ``rho(r, tau) = U(r) V(tau)`` fitted by joint Adam."""

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .encoding import data_fit_normal
from .optim import Adam, NonFiniteError


@dataclass
class LowRankFactors:
    U: np.ndarray        # complex [H*W, r]
    V: np.ndarray        # complex [r, n_tau]
    delays: np.ndarray   # ms, one per column of V
    shape: tuple
    loss_history: list = field(default_factory=list)

    @property
    def rank(self):
        return self.U.shape[1]


def synthesize(factors, b):
    """Image for column ``b`` of the temporal factors."""
    n = factors.V.shape[1]
    if not 0 <= b < n:
        raise IndexError(f"bin {b} out of range for {n} temporal factors")
    return (factors.U @ factors.V[:, b]).reshape(factors.shape)


def synthesize_at(factors, delays_ms):
    """Images at arbitrary delays, interpolating ``V`` linearly between bins.

    Delays outside the fitted range take the nearest end column.
    """
    V = factors.V
    re = np.stack([np.interp(delays_ms, factors.delays, V[i].real) for i in range(factors.rank)])
    im = np.stack([np.interp(delays_ms, factors.delays, V[i].imag) for i in range(factors.rank)])
    return ((factors.U @ (re + 1j * im)).T).reshape((len(delays_ms),) + tuple(factors.shape))


@dataclass
class BinProblem:
    """Per-bin pieces of the data term evaluated through ``A^H A``."""

    normal: object
    rhs: np.ndarray
    energy: float


def bin_problems(data, op, bins):
    out = []
    for b in range(bins.n_bins):
        spokes = bins.spokes(b)
        y = data.samples[spokes]
        out.append(BinProblem(op.normal(spokes), op.adjoint(y, spokes), float(np.vdot(y, y).real)))
    return out


def fit_lowrank(data, op, bins, rank, train):
    """Minimise ``sum_t ||y_t - A_t U V(tau_bin(t))||^2`` over ``U`` and ``V``.

    One delay bin per Adam step, cycling through the bins. ``train`` is a
    :class:`~dfmr.dfm.TrainConfig`; the data term is divided by the total
    measured energy so learning-rate and plateau settings are scale free.
    """
    if rank < 1:
        raise ValueError("rank must be >= 1")
    if op.motion is not None:
        raise ValueError("low-rank fit assumes a motion-free operator")
    h, w = op.image_shape
    n_tau = bins.n_bins
    rng = np.random.default_rng(train.seed)
    U = ad.Parameter(rng.standard_normal((2, h * w, rank)) / math.sqrt(2 * rank), name="U")
    V = ad.Parameter(rng.standard_normal((2, rank, n_tau)) / math.sqrt(2 * n_tau), name="V")
    problems = bin_problems(data, op, bins)
    total = sum(p.energy for p in problems)
    opt = Adam([U, V], lr=train.lr)
    history = []
    for step in range(train.epochs * n_tau):
        b = step % n_tau
        opt.scale_lr(train.lr_factor(step, train.epochs * n_tau))
        opt.zero_grad()
        img = ad.reshape(ad.complex_matmul(U, V[:, :, b:b + 1]), (2, h, w))
        loss = ad.scale(data_fit_normal(img, problems[b].normal, problems[b].rhs,
                                        problems[b].energy), n_tau / total)
        if not np.isfinite(loss.data):
            raise NonFiniteError(f"low-rank loss diverged at step {step} (seed {train.seed})")
        ad.backward(loss)
        opt.step()
        history.append(loss.item())
        if (b == n_tau - 1) and train.plateau(history, n_tau):
            break
    factors = LowRankFactors(ad.pair_to_complex(U.data), ad.pair_to_complex(V.data),
                             bins.centers_ms.copy(), (h, w), history)
    return factors


def lowrank_data_fit(factors, problems):
    """Full data term ``sum_b ||y_b - A_b rho_b||^2`` of fitted factors."""
    total = 0.0
    for b, p in enumerate(problems):
        x = synthesize(factors, b)
        total += np.vdot(x, p.normal(x)).real - 2 * np.vdot(x, p.rhs).real + p.energy
    return total
