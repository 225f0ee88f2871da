"""Deep factor model: a delay-conditioned CNN fitted directly to k-t data.

The spatial network is a stack of conv blocks. After each convolution the
feature maps are scaled channel-wise by a slice of the temporal factor
vector ``v(tau)`` produced by a small dense network, then activated. The
final block emits two channels, read as the real and imaginary parts of
the image at delay ``tau``.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .encoding import (MotionTrack, NormalOperator, data_fit_motion, data_fit_normal,
                       gridded_init)
from .lowrank import BinProblem, bin_problems, fit_lowrank, lowrank_data_fit, synthesize
from .metrics import nrmse
from .optim import Adam, NonFiniteError

ACTIVATION_CODES = {"none": 0, "tanh": 1, "leaky_relu": 2}
DESCRIPTOR_VERSION = 1


@dataclass(frozen=True)
class Architecture:
    in_channels: int = 16
    channels: tuple = (16, 16, 2)
    activations: tuple = ("tanh", "leaky_relu", "none")
    kernels: tuple = (3, 3, 3)
    modulate: tuple = (True, True, True)
    hidden: int = 32
    temporal_activation: str = "tanh"
    leaky_slope: float = 0.01

    def __post_init__(self):
        n = len(self.channels)
        if n == 0 or self.channels[-1] != 2:
            raise ValueError("channel list must be non-empty and end in 2 (real, imag)")
        if not (len(self.activations) == len(self.kernels) == len(self.modulate) == n):
            raise ValueError("activations, kernels and modulate need one entry per block")
        if any(k % 2 == 0 or k < 1 for k in self.kernels):
            raise ValueError("kernel sizes must be odd")
        for a in self.activations + (self.temporal_activation,):
            if a not in ACTIVATION_CODES:
                raise ValueError(f"unknown activation {a!r}")
        if self.in_channels < 1 or self.hidden < 1:
            raise ValueError("in_channels and hidden must be positive")

    @classmethod
    def single_linear(cls, width, in_channels=16, kernel=3, hidden=32):
        """One modulated linear hidden layer followed by a linear 1x1 output head."""
        return cls(in_channels, (width, 2), ("none", "none"), (kernel, 1), (True, False),
                   hidden, "tanh")

    @property
    def n_factors(self):
        return sum(c for c, m in zip(self.channels, self.modulate) if m)

    def parameter_count(self):
        n, cin = 0, self.in_channels
        for c, k in zip(self.channels, self.kernels):
            n += c * cin * k * k + c
            cin = c
        return n + 2 * self.hidden + self.n_factors * self.hidden + self.n_factors

    def encode(self):
        """Flat float descriptor stored alongside trained weights."""
        n = len(self.channels)
        return np.array([DESCRIPTOR_VERSION, self.in_channels, n, *self.channels, *self.kernels,
                         *(ACTIVATION_CODES[a] for a in self.activations),
                         *(float(m) for m in self.modulate), self.hidden,
                         ACTIVATION_CODES[self.temporal_activation], self.leaky_slope],
                        dtype=np.float64)

    @classmethod
    def decode(cls, arr):
        arr = list(np.asarray(arr, dtype=np.float64))
        if int(arr[0]) != DESCRIPTOR_VERSION:
            raise ValueError(f"unsupported architecture descriptor version {arr[0]}")
        names = {v: k for k, v in ACTIVATION_CODES.items()}
        cin, n = int(arr[1]), int(arr[2])
        i = 3
        chans = tuple(int(v) for v in arr[i:i + n]); i += n
        ks = tuple(int(v) for v in arr[i:i + n]); i += n
        acts = tuple(names[int(v)] for v in arr[i:i + n]); i += n
        mods = tuple(bool(v) for v in arr[i:i + n]); i += n
        return cls(cin, chans, acts, ks, mods, int(arr[i]), names[int(arr[i + 1])], float(arr[i + 2]))


@dataclass
class DFMNetwork:
    arch: Architecture
    conv_w: list
    conv_b: list
    dense_w: list
    dense_b: list
    loss_history: list = field(default_factory=list)

    def parameters(self):
        return [*self.conv_w, *self.conv_b, *self.dense_w, *self.dense_b]

    def spatial_parameters(self):
        return [*self.conv_w, *self.conv_b]

    def temporal_parameters(self):
        return [*self.dense_w, *self.dense_b]

    def state(self):
        """Named arrays sufficient to rebuild the network bit-identically."""
        out = {"arch": self.arch.encode()}
        for i, (w, b) in enumerate(zip(self.conv_w, self.conv_b)):
            out[f"conv{i}.w"] = w.data.copy()
            out[f"conv{i}.b"] = b.data.copy()
        for i, (w, b) in enumerate(zip(self.dense_w, self.dense_b)):
            out[f"dense{i}.w"] = w.data.copy()
            out[f"dense{i}.b"] = b.data.copy()
        return out

    @classmethod
    def from_state(cls, state):
        arch = Architecture.decode(state["arch"])
        n = len(arch.channels)
        p = ad.Parameter
        return cls(arch,
                   [p(state[f"conv{i}.w"], name=f"conv{i}.w") for i in range(n)],
                   [p(state[f"conv{i}.b"], name=f"conv{i}.b") for i in range(n)],
                   [p(state[f"dense{i}.w"], name=f"dense{i}.w") for i in range(2)],
                   [p(state[f"dense{i}.b"], name=f"dense{i}.b") for i in range(2)])


def build_network(arch=Architecture(), seed=0):
    """Randomly initialised network; identical seeds give identical weights."""
    rng = np.random.default_rng(seed)
    conv_w, conv_b = [], []
    cin = arch.in_channels
    for i, (c, k, act) in enumerate(zip(arch.channels, arch.kernels, arch.activations)):
        gain = 2.0 if act == "leaky_relu" else 1.0
        std = math.sqrt(gain / (cin * k * k))
        conv_w.append(ad.Parameter(rng.standard_normal((c, cin, k, k)) * std, name=f"conv{i}.w"))
        conv_b.append(ad.Parameter(np.zeros(c), name=f"conv{i}.b"))
        cin = c
    h, nf = arch.hidden, arch.n_factors
    # the delay input spans [0, 1]; wide first-layer weights spread the tanh knees over it
    dense_w = [ad.Parameter(rng.standard_normal((h, 1)) * 3.0, name="dense0.w"),
               ad.Parameter(rng.standard_normal((nf, h)) * (0.5 / math.sqrt(h)), name="dense1.w")]
    dense_b = [ad.Parameter(rng.uniform(-3.0, 3.0, size=h), name="dense0.b"),
               ad.Parameter(np.ones(nf), name="dense1.b")]
    return DFMNetwork(arch, conv_w, conv_b, dense_w, dense_b)


def temporal_factors(net, tau):
    """Factor vector ``v(tau)`` for a normalised delay ``tau`` (a Tensor)."""
    x = ad.Tensor(np.array([float(tau)]))
    hid = ad.activation(ad.dense(x, net.dense_w[0], net.dense_b[0]), net.arch.temporal_activation)
    return ad.dense(hid, net.dense_w[1], net.dense_b[1])


def forward_dfm(net, gamma, tau):
    """Image at normalised delay ``tau`` as a real-pair tensor ``[2, H, W]``.

    ``gamma`` is a :class:`~dfmr.encoding.GriddedInit` or its real channel
    stack (array or Tensor).
    """
    if hasattr(gamma, "as_channels"):
        gamma = gamma.as_channels()
    x = ad.as_tensor(gamma)
    arch = net.arch
    if x.shape[0] != arch.in_channels:
        raise ad.DimensionError(
            f"network expects {arch.in_channels} input channels, got {x.shape[0]}")
    v = temporal_factors(net, tau)
    off = 0
    for w, b, c, act, mod in zip(net.conv_w, net.conv_b, arch.channels,
                                 arch.activations, arch.modulate):
        x = ad.conv2d(x, w, b)
        if mod:
            x = ad.channel_modulate(x, v[off:off + c])
            off += c
        x = ad.activation(x, act, arch.leaky_slope)
    return x


def dfm_image(net, gamma, tau):
    return ad.pair_to_complex(forward_dfm(net, gamma, tau).data)


def dfm_series(net, gamma, taus):
    return np.stack([dfm_image(net, gamma, t) for t in taus])


@dataclass
class TrainConfig:
    """Optimisation settings shared by the DFM, DFM-MC and low-rank fits.

    ``lambda_rot``/``lambda_trans`` weight the motion smoothness penalty;
    ``motion_lr`` is the Adam rate for the motion unknowns. Training takes
    one delay bin per step (``granularity='bin'``) and stops early once the
    per-epoch loss changes by less than ``plateau_tol`` (relative) over
    ``plateau_steps`` steps. ``mc_warmup_epochs`` epochs of DFM-MC run with
    the motion held at its zero initialisation before the joint phase.
    ``lr_final`` < 1 decays every rate exponentially to that fraction of
    its start value over the epoch budget.

    ``mc_schedule='joint'`` updates network and motion together on every
    step through the exact motion-augmented operator. ``'interleaved'``
    takes network steps through a Toeplitz normal operator built for the
    current motion estimate and, every ``motion_every`` epochs, an exact
    motion pass (``motion_steps`` sweeps of one Adam step on the motion per
    bin) after which the operators are rebuilt. Both minimise the same objective.
    """

    epochs: int = 2000
    lr: float = 1e-3
    seed: int = 0
    lambda_rot: float = 0.01
    lambda_trans: float = 0.01
    granularity: str = "bin"
    tau_window_ms: float = None
    plateau_tol: float = 1e-6
    plateau_steps: int = 100
    motion_lr: float = 1e-2
    mc_warmup_epochs: int = 0
    mc_epochs: int = None
    pin_first_segment: bool = False
    lr_final: float = 1.0
    mc_schedule: str = "joint"
    motion_every: int = 10
    motion_steps: int = 1

    def __post_init__(self):
        if self.lambda_rot < 0 or self.lambda_trans < 0:
            raise ValueError("smoothness weights must be non-negative")
        if self.granularity != "bin":
            raise ValueError("only per-bin steps are supported")
        if not 0 < self.lr_final <= 1:
            raise ValueError("lr_final must be in (0, 1]")
        if self.mc_schedule not in ("joint", "interleaved"):
            raise ValueError(f"mc_schedule must be joint or interleaved, got {self.mc_schedule!r}")
        if self.motion_every < 1 or self.motion_steps < 1:
            raise ValueError("motion_every and motion_steps must be >= 1")

    def lr_factor(self, step, total):
        """Learning-rate multiplier at ``step`` of ``total`` optimiser steps."""
        return self.lr_final ** (step / max(total - 1, 1)) if self.lr_final != 1 else 1.0

    def plateau(self, history, period):
        """True once epoch losses over the last ``plateau_steps`` steps stalled."""
        lag = max(1, math.ceil(self.plateau_steps / period))
        n_ep = len(history) // period
        if self.plateau_tol <= 0 or n_ep <= lag:
            return False
        now = sum(history[(n_ep - 1) * period:n_ep * period])
        then = sum(history[(n_ep - 1 - lag) * period:(n_ep - lag) * period])
        return abs(then - now) <= self.plateau_tol * abs(now)


def normalized_delays(bins, cfg):
    window = cfg.tau_window_ms or bins.window_ms
    return bins.centers_ms / window


def motion_regularizer_tensor(rotation, translation, lambda_rot, lambda_trans):
    rotation, translation = ad.as_tensor(rotation), ad.as_tensor(translation)
    if rotation.shape[0] < 2:
        return ad.scale(ad.sqnorm(rotation), 0.0)
    dnu = ad.sub(rotation[1:], rotation[:-1])
    ddl = ad.sub(translation[1:], translation[:-1])
    return ad.add(ad.scale(ad.sqnorm(dnu), lambda_rot), ad.scale(ad.sqnorm(ddl), lambda_trans))


def motion_regularizer(track, lambda_rot, lambda_trans):
    """``l1 * sum |nu_{s+1} - nu_s|^2 + l2 * sum ||delta_{s+1} - delta_s||^2``."""
    return motion_regularizer_tensor(track.rotation, track.translation,
                                     lambda_rot, lambda_trans).item()


def objective_static(net, gamma, taus, problems, weight=1.0):
    """Full motion-free data term over all bins, times ``weight``."""
    terms = [data_fit_normal(forward_dfm(net, gamma, t), p.normal, p.rhs, p.energy)
             for t, p in zip(taus, problems)]
    total = terms[0]
    for t in terms[1:]:
        total = ad.add(total, t)
    return ad.scale(total, weight)


def objective_motion(net, gamma, taus, data, op, bins, rotation, translation,
                     lambda_rot, lambda_trans, weight=1.0, fixed=()):
    """Data term with per-segment motion plus the smoothness penalty."""
    total = None
    for b, t in enumerate(taus):
        spokes = bins.spokes(b)
        term = data_fit_motion(forward_dfm(net, gamma, t), op, spokes, data.samples[spokes],
                               rotation, translation, fixed)
        total = term if total is None else ad.add(total, term)
    return ad.add(ad.scale(total, weight),
                  motion_regularizer_tensor(rotation, translation, lambda_rot, lambda_trans))


def _check_loss(loss, step, cfg):
    if not np.isfinite(loss.data):
        raise NonFiniteError(f"DFM loss became non-finite at step {step} (seed {cfg.seed})")


def train_dfm(net, data, op, bins, cfg, gamma=None):
    """Fit the network to motion-free data; returns ``net`` with ``loss_history``."""
    if op.motion is not None:
        raise ValueError("train_dfm needs a motion-free operator; use train_dfm_mc")
    gamma = gridded_init(data, bins, op) if gamma is None else gamma
    stack = ad.Tensor(gamma.as_channels())
    taus = normalized_delays(bins, cfg)
    problems = bin_problems(data, op, bins)
    scale = bins.n_bins / sum(p.energy for p in problems)
    opt = Adam(net.parameters(), lr=cfg.lr)
    _fit_static(net, stack, taus, problems, scale, opt, cfg, cfg.epochs)
    return net


def _fit_static(net, stack, taus, problems, scale, opt, cfg, epochs):
    n = len(problems)
    for step in range(epochs * n):
        b = step % n
        opt.scale_lr(cfg.lr_factor(step, epochs * n))
        opt.zero_grad()
        p = problems[b]
        loss = ad.scale(data_fit_normal(forward_dfm(net, stack, taus[b]), p.normal, p.rhs, p.energy),
                        scale)
        _check_loss(loss, step, cfg)
        ad.backward(loss)
        opt.step()
        net.loss_history.append(loss.item())
        if b == n - 1 and cfg.plateau(net.loss_history, n):
            break


def train_dfm_mc(net, data, op, bins, cfg, gamma=None):
    """Jointly fit the network and per-segment rigid motion.

    Returns ``(net, MotionTrack)``. The motion starts at zero. The data
    term is invariant to one rigid transform shared by all segments, so
    motion is only meaningful relative to segment 0 (``MotionTrack.relative``).
    ``pin_first_segment`` holds segment 0 at zero during the fit instead. That
    fixes the gauge but ties the image to the warm-up frame, which sits between
    the poses of moved scans and biases the relative estimates.

    The data term is measured in units of the mean sample power, so the
    smoothness weights ``lambda_rot`` and ``lambda_trans`` compare against a
    data misfit that grows with the number of samples, as for raw k-space
    data normalised to unit RMS.
    """
    n_seg = int(op.segment.max()) + 1
    static_op = replace(op, motion=None, _normals={})
    gamma = gridded_init(data, bins, static_op) if gamma is None else gamma
    stack = ad.Tensor(gamma.as_channels())
    taus = normalized_delays(bins, cfg)
    params = net.parameters()
    opt = Adam(params, lr=cfg.lr)
    if cfg.mc_warmup_epochs:
        problems = bin_problems(data, static_op, bins)
        scale = bins.n_bins / sum(p.energy for p in problems)
        _fit_static(net, stack, taus, problems, scale, opt, cfg, cfg.mc_warmup_epochs)
    rot = ad.Parameter(np.zeros(n_seg), name="rotation")
    trans = ad.Parameter(np.zeros((n_seg, 2)), name="translation")
    fixed = (0,) if cfg.pin_first_segment else ()
    motion_opt = Adam([rot, trans], lr=cfg.motion_lr)
    scale = data.samples.size / float(np.vdot(data.samples, data.samples).real)
    epochs = cfg.epochs if cfg.mc_epochs is None else cfg.mc_epochs
    args = (net, stack, taus, data, op, bins, rot, trans, fixed, scale, opt, motion_opt, cfg, epochs)
    if cfg.mc_schedule == "joint":
        _fit_joint(*args)
    else:
        _fit_interleaved(*args)
    return net, MotionTrack(rot.data.copy(), trans.data.copy())


def _pin(rot, trans, fixed):
    # the smoothness term couples segment 0 to its neighbour; pinned segments must not move
    for s in fixed:
        rot.grad[s] = 0.0
        trans.grad[s] = 0.0


def _regularizer(rot, trans, cfg):
    return motion_regularizer_tensor(rot, trans, cfg.lambda_rot, cfg.lambda_trans)


def _fit_joint(net, stack, taus, data, op, bins, rot, trans, fixed, scale, opt, motion_opt, cfg,
               epochs):
    n = bins.n_bins
    start = len(net.loss_history)
    for step in range(epochs * n):
        b = step % n
        opt.scale_lr(cfg.lr_factor(step, epochs * n))
        motion_opt.scale_lr(cfg.lr_factor(step, epochs * n))
        opt.zero_grad()
        motion_opt.zero_grad()
        spokes = bins.spokes(b)
        fit = data_fit_motion(forward_dfm(net, stack, taus[b]), op, spokes, data.samples[spokes],
                              rot, trans, fixed)
        loss = ad.add(ad.scale(fit, scale), _regularizer(rot, trans, cfg))
        _check_loss(loss, step, cfg)
        ad.backward(loss)
        _pin(rot, trans, fixed)
        opt.step()
        motion_opt.step()
        net.loss_history.append(loss.item())
        if b == n - 1 and cfg.plateau(net.loss_history[start:], n):
            break


def motion_bin_problems(data, op, bins, track):
    """Per-bin normal-equation pieces of the data term at a fixed motion estimate."""
    moving = replace(op, motion=track, _normals={})
    out = []
    for b in range(bins.n_bins):
        spokes = bins.spokes(b)
        y = data.samples[spokes]
        k, _ = moving.spoke_coords(spokes)
        out.append(BinProblem(NormalOperator(k.reshape(-1, 2), op.coils),
                              moving.adjoint(y, spokes), float(np.vdot(y, y).real)))
    return out


def _fit_interleaved(net, stack, taus, data, op, bins, rot, trans, fixed, scale, opt, motion_opt,
                     cfg, epochs):
    n = bins.n_bins
    start = len(net.loss_history)
    problems = None
    for epoch in range(epochs):
        factor = cfg.lr_factor(epoch * n, epochs * n)
        if problems is None or epoch % cfg.motion_every == 0:
            motion_opt.scale_lr(factor)
            images = [ad.Tensor(forward_dfm(net, stack, t).data) for t in taus]
            for _ in range(cfg.motion_steps):
                for b in range(n):
                    motion_opt.zero_grad()
                    spokes = bins.spokes(b)
                    fit = data_fit_motion(images[b], op, spokes, data.samples[spokes], rot, trans,
                                          fixed)
                    loss = ad.add(ad.scale(fit, scale), _regularizer(rot, trans, cfg))
                    _check_loss(loss, epoch * n + b, cfg)
                    ad.backward(loss)
                    _pin(rot, trans, fixed)
                    motion_opt.step()
            problems = motion_bin_problems(data, op, bins, MotionTrack(rot.data, trans.data))
        reg = _regularizer(rot, trans, cfg).item()
        for b in range(n):
            step = epoch * n + b
            opt.scale_lr(cfg.lr_factor(step, epochs * n))
            opt.zero_grad()
            p = problems[b]
            loss = ad.scale(data_fit_normal(forward_dfm(net, stack, taus[b]), p.normal, p.rhs,
                                            p.energy), scale)
            _check_loss(loss, step, cfg)
            ad.backward(loss)
            opt.step()
            net.loss_history.append(loss.item() + reg)
        if cfg.plateau(net.loss_history[start:], n):
            break


def dfm_data_fit(net, gamma, taus, problems):
    """Unweighted full data term of a trained network."""
    return objective_static(net, gamma.as_channels(), taus, problems).item()


def lowrank_reduction_check(seed, data, op, bins, rank, cfg, kernel=1, dcf="ramp", lowrank_cfg=None):
    """Train a single-linear-block DFM and a rank-``rank`` factor model on the same data.

    Returns a report with both final data-fit losses, their relative gap and
    the NRMSE between the two synthesised series at the bin delays.
    ``lowrank_cfg`` (default ``cfg``) trains the factor model.
    """
    cfg = replace(cfg, seed=seed)
    lowrank_cfg = cfg if lowrank_cfg is None else replace(lowrank_cfg, seed=seed)
    gamma = gridded_init(data, bins, op, dcf)
    net = build_network(Architecture.single_linear(rank, 2 * bins.n_bins, kernel), seed)
    train_dfm(net, data, op, bins, cfg, gamma)
    factors = fit_lowrank(data, op, bins, rank, lowrank_cfg)
    problems = bin_problems(data, op, bins)
    taus = normalized_delays(bins, cfg)
    loss_dfm = dfm_data_fit(net, gamma, taus, problems)
    loss_lr = lowrank_data_fit(factors, problems)
    img_dfm = dfm_series(net, gamma, taus)
    img_lr = np.stack([synthesize(factors, b) for b in range(bins.n_bins)])
    gap = abs(loss_dfm - loss_lr) / max(loss_dfm, loss_lr)
    return {
        "rank": rank,
        "loss_dfm": loss_dfm,
        "loss_lowrank": loss_lr,
        "relative_gap": gap,
        "cross_nrmse": nrmse(img_dfm, img_lr),
        "energy": sum(p.energy for p in problems),
        "net": net,
        "factors": factors,
    }
