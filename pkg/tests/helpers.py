"""Small shared acquisitions for the reconstruction tests."""

from dataclasses import replace

import numpy as np

from dfmr.experiment import ExperimentConfig, simulate


def cartesian_config(**kw):
    """Noiseless, fully sampled 16x16 Cartesian data; every bin sees the whole grid."""
    base = ExperimentConfig(size=16, trajectory="cartesian", spokes_per_segment=128, n_segments=1,
                            tr_ms=27.5, tau_model="bin", coils=2, n_contrasts=8)
    return replace(base, **kw)


def cartesian_acquisition(**kw):
    return simulate(cartesian_config(**kw))


def factor_acquisition(n_components=12, decay=0.8):
    """Noiseless Cartesian data of a real series with a known factor spectrum.

    Bin images are ``sum_k decay**k u_k cos(k pi tau)`` with orthonormal random
    spatial maps ``u_k`` over 16 delay bins, so the best rank-r fit is real,
    smooth in tau and leaves a non-zero residual for every r < n_components.
    """
    acq = cartesian_acquisition(spokes_per_segment=256, n_bins=16)
    rng = np.random.default_rng(5)
    h, w = acq.op.image_shape
    u = np.linalg.qr(rng.standard_normal((h * w, n_components)))[0]
    tau = acq.bins.normalized_centers()
    v = np.cos(np.pi * np.outer(tau, np.arange(n_components)))
    series = (u * decay ** np.arange(n_components)) @ v.T * h
    samples = acq.data.samples.copy()
    for b in range(acq.bins.n_bins):
        spokes = acq.bins.spokes(b)
        samples[spokes] = acq.op.forward(series[:, b].reshape(h, w).astype(complex), spokes)
    return acq, replace(acq.data, samples=samples)
