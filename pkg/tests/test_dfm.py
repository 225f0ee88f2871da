import math
from dataclasses import replace

import numpy as np
import pytest

from dfmr import autodiff as ad
from dfmr import container
from dfmr.dfm import (Architecture, DFMNetwork, TrainConfig, build_network, dfm_image,
                      forward_dfm, lowrank_reduction_check, motion_regularizer,
                      motion_regularizer_tensor, temporal_factors, train_dfm, train_dfm_mc)
from dfmr.encoding import MotionTrack, gridded_init
from dfmr.experiment import ExperimentConfig, simulate
from dfmr.metrics import per_image_nrmse
from dfmr.optim import NonFiniteError
from helpers import cartesian_acquisition


def closed_form_count(cin, chans, ks, hidden, n_factors):
    total = 0
    for c, k in zip(chans, ks):
        total += c * cin * k * k + c
        cin = c
    return total + (hidden + hidden) + (n_factors * hidden + n_factors)


def test_default_parameter_count():
    arch = Architecture()
    n = sum(p.data.size for p in build_network(arch, 0).parameters())
    # conv 16->16, 16->16, 16->2 (3x3) plus V_theta 1 -> 32 -> 34
    assert n == closed_form_count(16, (16, 16, 2), (3, 3, 3), 32, 34) == 6116
    assert arch.parameter_count() == 6116
    assert arch.n_factors == 34


def test_architecture_validation():
    with pytest.raises(ValueError):
        Architecture(channels=(16, 3))
    with pytest.raises(ValueError):
        Architecture(kernels=(3, 2, 3))
    with pytest.raises(ValueError):
        Architecture(activations=("tanh", "relu6", "none"))
    lin = Architecture.single_linear(4)
    assert lin.channels == (4, 2) and lin.activations == ("none", "none")
    assert Architecture.decode(lin.encode()) == lin
    bad = Architecture().encode()
    bad[0] = 99
    with pytest.raises(ValueError, match="version"):
        Architecture.decode(bad)


def test_build_is_deterministic():
    a, b = build_network(seed=5), build_network(seed=5)
    for p, q in zip(a.parameters(), b.parameters()):
        np.testing.assert_array_equal(p.data, q.data)
    c = build_network(seed=6)
    assert not np.array_equal(a.conv_w[0].data, c.conv_w[0].data)


def test_zero_temporal_weights_give_bias():
    net = build_network(seed=0)
    for w in net.dense_w:
        w.data[...] = 0
    for tau in (0.0, 0.3, 1.0):
        np.testing.assert_array_equal(temporal_factors(net, tau).data, net.dense_b[1].data)


def test_temporal_factors_regression():
    v = temporal_factors(build_network(seed=0), 0.5).data
    np.testing.assert_allclose(v[:6], [1.1785265137967273, 0.7724498020119501, 1.3577852903271468,
                                       1.1659020415540624, 0.10920639519313924, 1.2755125670540537],
                               rtol=1e-13)
    assert float(v.sum()) == pytest.approx(34.68268844662249, rel=1e-13)


def test_temporal_factors_lipschitz():
    net = build_network(seed=1)
    # tanh is 1-Lipschitz, so |dv/dtau| <= ||W1|| ||W0||
    bound = np.linalg.norm(net.dense_w[1].data, 2) * np.linalg.norm(net.dense_w[0].data, 2)
    for tau in np.linspace(0, 1, 11):
        dv = temporal_factors(net, tau + 1e-6).data - temporal_factors(net, tau).data
        assert np.linalg.norm(dv) <= bound * 1e-6 * (1 + 1e-6)


def _gamma(rng, n_bins=8, size=12):
    return rng.standard_normal((2 * n_bins, size, size))


def test_output_depends_on_tau_only_through_v(rng):
    net = build_network(seed=2)
    g = _gamma(rng)
    # make v constant in tau: zero the input weight
    net.dense_w[0].data[...] = 0
    np.testing.assert_array_equal(forward_dfm(net, g, 0.1).data, forward_dfm(net, g, 0.9).data)


def test_zero_modulation_slice_kills_block(rng):
    net = build_network(seed=2)
    g = _gamma(rng)
    net.dense_w[1].data[16:32] = 0
    net.dense_b[1].data[16:32] = 0
    # block 2 (leaky_relu) now outputs 0, so the image is the final bias
    out = forward_dfm(net, g, 0.4).data
    v = temporal_factors(net, 0.4).data
    expect = np.broadcast_to(net.conv_b[2].data[:, None, None] * v[32:34, None, None], out.shape)
    np.testing.assert_allclose(out, expect)


def test_channel_mismatch(rng):
    net = build_network(seed=0)
    with pytest.raises(ad.DimensionError):
        forward_dfm(net, rng.standard_normal((6, 8, 8)), 0.5)


def test_forward_regression_on_default_gamma():
    acq = simulate(ExperimentConfig())
    g = gridded_init(acq.data, acq.bins, acq.op)
    img = dfm_image(build_network(seed=0), g, 0.5)
    assert float(np.abs(img).sum()) == pytest.approx(1016.7583140840343, rel=1e-10)


def test_state_round_trip_is_bit_identical(tmp_path, rng):
    net = build_network(seed=4)
    g = _gamma(rng)
    container.write(tmp_path / "net.dfmr", net.state())
    back = DFMNetwork.from_state(container.read(tmp_path / "net.dfmr"))
    assert back.arch == net.arch
    np.testing.assert_array_equal(forward_dfm(back, g, 0.3).data, forward_dfm(net, g, 0.3).data)


def test_motion_regularizer_values():
    assert motion_regularizer(MotionTrack(np.full(4, 0.2), np.ones((4, 2))), 0.01, 0.01) == 0.0
    two = MotionTrack(np.array([0.0, 0.1]), np.zeros((2, 2)))
    assert motion_regularizer(two, 1.0, 1.0) == pytest.approx(0.01)
    three = MotionTrack(np.zeros(3), np.array([[0, 0], [1, 0], [1, 2.0]]))
    assert motion_regularizer(three, 0.0, 0.5) == pytest.approx(0.5 * (1 + 4))


def test_motion_regularizer_gradient(rng):
    rot = ad.Parameter(rng.standard_normal(5))
    trans = ad.Parameter(rng.standard_normal((5, 2)))
    f = lambda: motion_regularizer_tensor(rot, trans, 0.3, 0.7)
    ad.backward(f())
    for p in (rot, trans):
        d = rng.standard_normal(p.shape)
        base = p.data.copy()
        p.data[...] = base + 1e-6 * d
        fp = f().item()
        p.data[...] = base - 1e-6 * d
        fm = f().item()
        p.data[...] = base
        assert (fp - fm) / 2e-6 == pytest.approx(np.sum(p.grad * d), rel=1e-6)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(lambda_rot=-1)
    with pytest.raises(ValueError):
        TrainConfig(granularity="spoke")


def test_plateau_rule():
    cfg = TrainConfig(plateau_tol=1e-6, plateau_steps=4)
    flat = [1.0] * 40
    assert cfg.plateau(flat, 2)
    assert not cfg.plateau(list(np.linspace(10, 1, 40)), 2)
    assert not TrainConfig(plateau_tol=0).plateau(flat, 2)


def test_training_is_deterministic():
    acq = cartesian_acquisition()
    cfg = TrainConfig(epochs=3, seed=0)
    arch = Architecture(in_channels=16, hidden=8)
    a = train_dfm(build_network(arch, 1), acq.data, acq.op, acq.bins, cfg)
    b = train_dfm(build_network(arch, 1), acq.data, acq.op, acq.bins, cfg)
    for p, q in zip(a.parameters(), b.parameters()):
        np.testing.assert_array_equal(p.data, q.data)
    assert a.loss_history == b.loss_history


def test_training_rejects_motion_operator():
    acq = cartesian_acquisition()
    op = replace(acq.op, motion=MotionTrack.zeros(1))
    with pytest.raises(ValueError):
        train_dfm(build_network(Architecture(in_channels=16)), acq.data, op, acq.bins, TrainConfig(epochs=1))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_training_aborts_with_diagnostics():
    acq = cartesian_acquisition()
    bad = replace(acq.data, samples=acq.data.samples * np.nan)
    with pytest.raises((NonFiniteError, ValueError)):
        train_dfm(build_network(Architecture(in_channels=16)), bad, acq.op, acq.bins,
                  TrainConfig(epochs=1, seed=9))


def test_noiseless_full_sampling_recovery():
    acq = cartesian_acquisition()
    cfg = TrainConfig(epochs=1500, lr=3e-3, seed=0, lr_final=0.01)
    g = gridded_init(acq.data, acq.bins, acq.op, dcf="none")
    net = train_dfm(build_network(Architecture(in_channels=16), 0), acq.data, acq.op, acq.bins,
                    cfg, g)
    series = np.stack([dfm_image(net, g, t) for t in acq.bins.normalized_centers()])
    assert per_image_nrmse(series, acq.truth_bins).max() < 0.05


def test_mc_schedule_validation():
    with pytest.raises(ValueError):
        TrainConfig(mc_schedule="sometimes")
    with pytest.raises(ValueError):
        TrainConfig(motion_every=0)
    with pytest.raises(ValueError):
        TrainConfig(motion_steps=0)
    with pytest.raises(ValueError):
        TrainConfig(lr_final=0)


def test_lr_decay_factor():
    cfg = TrainConfig(lr_final=0.1)
    assert cfg.lr_factor(0, 11) == 1.0
    assert cfg.lr_factor(10, 11) == pytest.approx(0.1)
    assert cfg.lr_factor(5, 11) == pytest.approx(math.sqrt(0.1))
    assert TrainConfig().lr_factor(7, 11) == 1.0


def _small_motion_acquisition(rot_deg, shift):
    cfg = ExperimentConfig(size=32, spokes_per_segment=48, n_segments=4, n_readout=45, coils=2,
                           n_bins=4, n_contrasts=4, tau_model="bin", motion_rot_deg=rot_deg,
                           motion_shift_px=shift, motion_start_segment=2)
    return simulate(cfg)


def _mc_config(**kw):
    base = dict(epochs=300, lr=2e-3, seed=0, lr_final=0.1, mc_schedule="interleaved",
                mc_warmup_epochs=100, motion_every=10, motion_steps=2, motion_lr=0.02)
    base.update(kw)
    return TrainConfig(**base)


@pytest.mark.slow
def test_mc_recovers_step_motion():
    acq = _small_motion_acquisition(5.0, (1.5, -1.0))
    net = build_network(Architecture(in_channels=8, hidden=16), 0)
    _, track = train_dfm_mc(net, acq.data, acq.op, acq.bins, _mc_config())
    rel = track.relative()
    truth = acq.motion.relative()
    np.testing.assert_allclose(np.degrees(rel.rotation), np.degrees(truth.rotation), atol=1.0)
    np.testing.assert_allclose(rel.translation, truth.translation, atol=0.5)


@pytest.mark.slow
def test_mc_on_motion_free_data_stays_put():
    acq = _small_motion_acquisition(0.0, (0.0, 0.0))
    net = build_network(Architecture(in_channels=8, hidden=16), 0)
    _, track = train_dfm_mc(net, acq.data, acq.op, acq.bins, _mc_config())
    rel = track.relative()
    assert np.abs(np.degrees(rel.rotation)).max() < 0.5
    assert np.abs(rel.translation).max() < 0.25


def test_mc_joint_schedule_moves_motion():
    # a few exact joint steps on a tiny problem: the motion receives gradient and segment 0 stays
    acq = _small_motion_acquisition(5.0, (1.5, -1.0))
    net = build_network(Architecture(in_channels=8, hidden=8), 0)
    _, track = train_dfm_mc(net, acq.data, acq.op, acq.bins,
                            TrainConfig(epochs=2, seed=0, mc_warmup_epochs=1, motion_lr=0.01,
                                        pin_first_segment=True))
    assert track.rotation[0] == 0 and np.all(track.translation[0] == 0)
    assert np.any(track.rotation[1:] != 0) and np.any(track.translation[1:] != 0)
    assert len(net.loss_history) == 4 + 8
