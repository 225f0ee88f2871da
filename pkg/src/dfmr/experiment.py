"""Desk-scale experiments: configuration, simulation, reconstruction, evaluation."""

import csv
import hashlib
import io
import math
import zlib
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import container
from .dfm import (Architecture, TrainConfig, build_network, dfm_data_fit, dfm_series,
                  normalized_delays, train_dfm, train_dfm_mc)
from .encoding import EncodingOperator, KSpaceDataset, MotionTrack, coil_compress, gridded_init
from .lowrank import bin_problems, fit_lowrank, lowrank_data_fit, synthesize_at
from .metrics import (curve_max_deviation, extract_curves, gm_null_error, gm_null_magnitude,
                      interior_mask, per_image_nrmse, scale_fit)
from .phantom import (CSF, GM, CoilSet, LABEL_NAMES, WM, add_noise, make_phantom, render_at,
                      render_series, simulate_coils)
from .sequence import (SequenceTiming, bin_by_delay, cartesian_trajectory, generate_schedule,
                       radial_trajectory)

METHODS = ("gridding", "lowrank", "dfm", "dfm-mc")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    """Flat experiment settings; every field is a ``key = value`` line in the config file."""

    seed: int = 0
    size: int = 64
    t1_wm: float = 850.0
    t1_gm: float = 1400.0
    t1_csf: float = 4000.0
    m0_wm: float = 0.7
    m0_gm: float = 0.8
    m0_csf: float = 1.0
    tr_ms: float = 35.2
    spokes_per_segment: int = 100
    recovery_delay_ms: float = 500.0
    n_segments: int = 8
    angle_mode: str = "golden"
    trajectory: str = "radial"
    n_readout: int = 101
    center_out: bool = False
    coils: int = 4
    virtual_coils: int = 0
    uniform_coils: bool = False
    noise_sigma: float = 0.0
    snr_db: float = None
    tau_model: str = "spoke"
    n_bins: int = 8
    n_contrasts: int = 32
    method: str = "dfm"
    rank: int = 4
    epochs: int = 500
    lr: float = 1e-3
    lowrank_lr: float = 1e-2
    lr_final: float = 1.0
    lambda_rot: float = 0.01
    lambda_trans: float = 0.01
    motion_lr: float = 2e-2
    mc_warmup_epochs: int = 100
    mc_epochs: int = None
    mc_schedule: str = "interleaved"
    motion_every: int = 25
    motion_steps: int = 2
    pin_first_segment: bool = False
    plateau_tol: float = 1e-6
    plateau_steps: int = 100
    motion_rot_deg: float = 0.0
    motion_shift_px: tuple = (0.0, 0.0)
    motion_start_segment: int = 4
    out: str = "run"

    def __post_init__(self):
        self.method = canonical_method(self.method)[0] if self.method else self.method
        if self.trajectory not in ("radial", "cartesian"):
            raise ConfigError(f"trajectory must be radial or cartesian, got {self.trajectory!r}")
        if self.tau_model not in ("spoke", "bin"):
            raise ConfigError(f"tau_model must be spoke or bin, got {self.tau_model!r}")
        if self.n_contrasts < 1 or self.n_bins < 1:
            raise ConfigError("n_bins and n_contrasts must be positive")

    @property
    def timing(self):
        return SequenceTiming(self.tr_ms, self.spokes_per_segment, self.recovery_delay_ms,
                              self.n_segments)

    def train_config(self):
        return TrainConfig(epochs=self.epochs, lr=self.lr, seed=substream(self.seed, "init"),
                           lambda_rot=self.lambda_rot, lambda_trans=self.lambda_trans,
                           plateau_tol=self.plateau_tol, plateau_steps=self.plateau_steps,
                           motion_lr=self.motion_lr, mc_warmup_epochs=self.mc_warmup_epochs,
                           mc_epochs=self.mc_epochs, lr_final=self.lr_final,
                           mc_schedule=self.mc_schedule, motion_every=self.motion_every,
                           motion_steps=self.motion_steps,
                           pin_first_segment=self.pin_first_segment)

    @property
    def has_motion(self):
        return self.motion_rot_deg != 0 or any(v != 0 for v in self.motion_shift_px)

    def motion_truth(self):
        return MotionTrack.step(self.n_segments, self.motion_start_segment,
                                self.motion_rot_deg, self.motion_shift_px)

    def fingerprint(self):
        """Hash of everything that defines the simulated data (not the method)."""
        skip = {"method", "rank", "epochs", "lr", "lowrank_lr", "lr_final", "lambda_rot",
                "lambda_trans", "motion_lr", "mc_warmup_epochs", "mc_epochs", "mc_schedule",
                "motion_every", "motion_steps", "pin_first_segment", "plateau_tol",
                "plateau_steps", "out"}
        items = [(k, v) for k, v in sorted(asdict(self).items()) if k not in skip]
        return hashlib.sha256(repr(items).encode()).hexdigest()[:16]

    def method_label(self):
        return method_label(self.method, self.rank)


def canonical_method(name):
    """``'lowrank4'``, ``'lowrank:4'``, ``'lowrank(4)'`` -> ``('lowrank', 4)``."""
    s = str(name).strip().lower().replace("_", "-")
    for sep in ("(", ":"):
        s = s.replace(sep, "")
    s = s.rstrip(")")
    if s.startswith("lowrank"):
        rest = s[len("lowrank"):]
        return "lowrank", (int(rest) if rest else None)
    if s in ("dfmmc", "dfm-mc"):
        return "dfm-mc", None
    if s not in METHODS:
        raise ConfigError(f"unknown method {name!r}; choose from {', '.join(METHODS)}")
    return s, None


def method_label(method, rank=None):
    return f"lowrank({rank})" if method == "lowrank" else method


_CASTS = {int: int, float: float, str: str}


def _parse_value(name, raw, kind):
    raw = raw.strip()
    if raw.lower() in ("none", "") and kind in ("float", "int"):
        return None
    try:
        if kind == "bool":
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "tuple":
            return tuple(float(v) for v in raw.replace(",", " ").split())
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r} as {kind}") from None


def _kinds():
    defaults = ExperimentConfig()
    out = {}
    for f in fields(ExperimentConfig):
        v = getattr(defaults, f.name)
        if f.name in ("snr_db",):
            out[f.name] = "float"
        elif f.name == "mc_epochs":
            out[f.name] = "int"
        elif isinstance(v, bool):
            out[f.name] = "bool"
        elif isinstance(v, tuple):
            out[f.name] = "tuple"
        elif isinstance(v, int):
            out[f.name] = "int"
        elif isinstance(v, float):
            out[f.name] = "float"
        else:
            out[f.name] = "str"
    return out


def parse_config(text, **overrides):
    """Parse ``key = value`` lines (``#`` comments) into an :class:`ExperimentConfig`."""
    kinds = _kinds()
    values = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key = value, got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in kinds:
            raise ConfigError(f"line {n}: unknown key {key!r}")
        values[key] = _parse_value(key, raw, kinds[key])
    values.update({k: v for k, v in overrides.items() if v is not None})
    if "method" in values:
        m, r = canonical_method(values["method"])
        values["method"] = m
        if r is not None:
            values["rank"] = r
    return ExperimentConfig(**values)


def load_config(path, **overrides):
    return parse_config(Path(path).read_text(), **overrides)


def format_config(cfg):
    lines = []
    for k, v in asdict(cfg).items():
        if isinstance(v, tuple):
            v = ", ".join(repr(float(x)) for x in v)
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"


def substream(root, name):
    """Independent integer seed for the named random stream under ``root``."""
    ss = np.random.SeedSequence([int(root), zlib.crc32(name.encode())])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


# --- simulation -------------------------------------------------------------

@dataclass
class Acquisition:
    cfg: ExperimentConfig
    tissue: object
    coils: object
    schedule: object
    bins: object
    op: EncodingOperator        # motion-free encoding with the reconstruction coils
    data: KSpaceDataset
    motion: MotionTrack         # true motion used in simulation
    contrast_ms: np.ndarray     # delays of the reconstructed contrasts
    truth_bins: np.ndarray      # complex [n_bins, H, W]
    truth_contrasts: np.ndarray

    @property
    def bin_ms(self):
        return self.bins.centers_ms


def geometry(cfg):
    """Deterministic pieces of an acquisition that do not involve measured data."""
    size = (cfg.size, cfg.size)
    tissue = make_phantom(size, m0={WM: cfg.m0_wm, GM: cfg.m0_gm, CSF: cfg.m0_csf},
                          t1={WM: cfg.t1_wm, GM: cfg.t1_gm, CSF: cfg.t1_csf})
    coils = simulate_coils(cfg.coils, size, substream(cfg.seed, "coils"), cfg.uniform_coils)
    schedule = generate_schedule(cfg.timing, cfg.angle_mode)
    bins = bin_by_delay(schedule, cfg.n_bins)
    if cfg.trajectory == "cartesian":
        coords = cartesian_trajectory(schedule, size)
    else:
        coords = radial_trajectory(schedule, cfg.n_readout, center_out=cfg.center_out)
    contrast_ms = np.linspace(0.0, 1.0, cfg.n_contrasts) * bins.window_ms
    if cfg.n_contrasts == 1:
        contrast_ms = bins.centers_ms[:1].copy()
    return tissue, coils, schedule, bins, coords, contrast_ms


def simulate_samples(tissue, coils, schedule, bins, coords, motion, tau_model="spoke"):
    """Noise-free multicoil samples, each spoke encoded at its own delay and motion state."""
    op = EncodingOperator(coords, coils, schedule.segment, motion)
    taus = schedule.tau_ms if tau_model == "spoke" else bins.centers_ms[bins.bin_index]
    samples = np.empty((len(schedule), coils.n_coils, coords.shape[1]), dtype=np.complex128)
    for tau in np.unique(taus):
        spokes = np.flatnonzero(taus == tau)
        samples[spokes] = op.forward(render_at(tissue, tau).astype(np.complex128), spokes)
    return samples


def sigma_for_snr(samples, snr_db):
    """Noise std giving ``snr_db`` = 10 log10(mean |y|^2 / sigma^2)."""
    power = np.mean(np.abs(samples) ** 2)
    return float(math.sqrt(power / 10 ** (snr_db / 10)))


def simulate(cfg):
    tissue, coils, schedule, bins, coords, contrast_ms = geometry(cfg)
    motion = cfg.motion_truth()
    samples = simulate_samples(tissue, coils, schedule, bins, coords,
                               motion if cfg.has_motion else None, cfg.tau_model)
    data = KSpaceDataset(schedule, samples)
    sigma = cfg.noise_sigma if cfg.snr_db is None else sigma_for_snr(samples, cfg.snr_db)
    data = add_noise(data, sigma, substream(cfg.seed, "noise"))
    return assemble(cfg, tissue, coils, schedule, bins, coords, contrast_ms, data, motion)


def assemble(cfg, tissue, coils, schedule, bins, coords, contrast_ms, data, motion):
    rec_coils = coils
    if cfg.virtual_coils:
        data, rec_coils = coil_compress(data, coils, cfg.virtual_coils)
    op = EncodingOperator(coords, rec_coils, schedule.segment)
    return Acquisition(cfg, tissue, coils, schedule, bins, op, data, motion, contrast_ms,
                       render_series(tissue, bins.centers_ms).images,
                       render_series(tissue, contrast_ms).images)


# --- reconstruction ---------------------------------------------------------

@dataclass
class Reconstruction:
    method: str
    bins: np.ndarray          # complex [n_bins, H, W]
    contrasts: np.ndarray     # complex [n_contrasts, H, W]
    data_fit: float
    gamma: object = None
    net: object = None
    factors: object = None
    motion: MotionTrack = None
    loss_history: list = None


def reconstruct(acq, method=None, rank=None):
    cfg = acq.cfg
    method = method or cfg.method
    rank = rank or cfg.rank
    train = cfg.train_config()
    bins = acq.bins
    # unit weights on a full Cartesian grid make the adjoint an exact inverse
    gamma = gridded_init(acq.data, bins, acq.op, "none" if cfg.trajectory == "cartesian" else "ramp")
    problems = bin_problems(acq.data, acq.op, bins)
    if method == "gridding":
        nearest = np.abs(acq.contrast_ms[:, None] - bins.centers_ms[None]).argmin(axis=1)
        fit = float("nan")
        images = gamma.unnormalized()
        return Reconstruction("gridding", images, images[nearest], fit, gamma)
    if method == "lowrank":
        factors = fit_lowrank(acq.data, acq.op, bins, rank, replace(train, lr=cfg.lowrank_lr))
        return Reconstruction(method_label("lowrank", rank),
                              synthesize_at(factors, bins.centers_ms),
                              synthesize_at(factors, acq.contrast_ms),
                              lowrank_data_fit(factors, problems), gamma, factors=factors,
                              loss_history=factors.loss_history)
    arch = Architecture(in_channels=2 * bins.n_bins)
    net = build_network(arch, train.seed)
    motion = None
    if method == "dfm":
        train_dfm(net, acq.data, acq.op, bins, train, gamma)
    elif method == "dfm-mc":
        net, motion = train_dfm_mc(net, acq.data, acq.op, bins, train, gamma)
    else:
        raise ConfigError(f"unknown method {method!r}")
    taus = normalized_delays(bins, train)
    window = train.tau_window_ms or bins.window_ms
    return Reconstruction(method, dfm_series(net, gamma, taus),
                          dfm_series(net, gamma, acq.contrast_ms / window),
                          dfm_data_fit(net, gamma, taus, problems), gamma, net=net,
                          motion=motion, loss_history=net.loss_history)


# --- evaluation -------------------------------------------------------------

METRICS_HEADER = ("method", "bin", "tau_ms", "nrmse")
CURVES_HEADER = ("voxel", "label", "tau_ms", "value")


def representative_voxels(tissue):
    """One interior voxel per tissue class along the central row, centre outwards.

    A class missing from that half row is represented by its voxel nearest
    the image centre.
    """
    h, w = tissue.shape
    row = h // 2
    out = {}
    for label in (CSF, WM, GM):
        mask = interior_mask(tissue, label)
        for j in range(w // 2, w):
            if mask[row, j]:
                out[label] = (row, j)
                break
        else:
            pts = np.argwhere(mask)
            if len(pts):
                d = np.sum((pts - [row, w // 2]) ** 2, axis=1)
                out[label] = tuple(int(v) for v in pts[np.argmin(d)])
    return out


def evaluate(acq, rec):
    """Scalar and per-bin metrics of one reconstruction against the ground truth."""
    alpha_c = scale_fit(rec.contrasts, acq.truth_contrasts)
    contrasts = alpha_c * rec.contrasts
    per_bin = per_image_nrmse(rec.bins, acq.truth_bins)
    gm_mag, k = gm_null_magnitude(contrasts, acq.tissue, acq.tissue.m0[GM])
    summary = {
        "method": rec.method,
        "mean_nrmse": float(per_bin.mean()),
        "contrast_nrmse": float(per_image_nrmse(rec.contrasts, acq.truth_contrasts).mean()),
        "gm_null_magnitude": gm_mag,
        "gm_null_tau_ms": float(acq.contrast_ms[k]),
        "gm_null_error": gm_null_error(contrasts, acq.truth_contrasts, acq.contrast_ms, acq.tissue),
        "gm_curve_max_dev": curve_max_deviation(contrasts, acq.truth_contrasts, acq.tissue, GM),
        "wm_curve_max_dev": curve_max_deviation(contrasts, acq.truth_contrasts, acq.tissue, WM),
        "data_fit": rec.data_fit,
    }
    if rec.motion is not None:
        est = rec.motion.relative()
        tru = acq.motion.relative()
        summary["motion_rot_rms_deg"] = float(np.degrees(
            np.sqrt(np.mean((est.rotation - tru.rotation) ** 2))))
        summary["motion_shift_rms_px"] = float(np.sqrt(np.mean(
            np.sum((est.translation - tru.translation) ** 2, axis=1))))
    rows = [(rec.method, b, float(acq.bin_ms[b]), float(v)) for b, v in enumerate(per_bin)]
    curves = extract_curves(contrasts, acq.contrast_ms, acq.tissue,
                            list(representative_voxels(acq.tissue).values()))
    return rows, summary, curves


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return repr(v) if math.isfinite(v) else str(v)
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def metrics_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_HEADER)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def summary_csv(summaries, fingerprint):
    keys = []
    for s in summaries:
        keys += [k for k in s if k not in keys]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["fingerprint", *keys])
    for s in summaries:
        w.writerow([fingerprint, *(_fmt(s.get(k, "")) for k in keys)])
    return buf.getvalue()


def curves_csv(curves):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CURVES_HEADER)
    for c in curves:
        vox = f"{c.voxel[0]}:{c.voxel[1]}"
        for t, v in zip(c.delays, c.values):
            w.writerow([vox, c.label_name, _fmt(float(t)), _fmt(float(v))])
    return buf.getvalue()


def write_pgm(path, image):
    """8-bit binary graymap of ``|image|`` scaled to its maximum; returns the scale."""
    mag = np.abs(np.asarray(image))
    scale = float(mag.max())
    pix = np.zeros(mag.shape, dtype=np.uint8) if scale == 0 else \
        np.round(255 * mag / scale).astype(np.uint8)
    h, w = pix.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + pix.tobytes())
    return scale


def read_pgm(path):
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h = map(int, parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w)


# --- artifact files ---------------------------------------------------------

def method_slug(label):
    return label.replace("(", "").replace(")", "")


def label_from_slug(slug):
    """Inverse of :func:`method_slug`: ``lowrank4`` -> ``lowrank(4)``."""
    if slug.startswith("lowrank") and slug[7:].isdigit():
        return f"lowrank({slug[7:]})"
    return slug


def ground_truth_arrays(acq):
    return {
        "labels": acq.tissue.labels,
        "bin_tau_ms": acq.bin_ms,
        "truth_bins": acq.truth_bins,
        "contrast_tau_ms": acq.contrast_ms,
        "truth_contrasts": acq.truth_contrasts,
    }


def kspace_arrays(acq):
    s = acq.schedule
    return {
        "samples": acq.data.samples,
        "noise_sigma": np.array([acq.data.noise_sigma]),
        "coords": acq.op.coords,
        "coil_maps": acq.coils.maps,
        "spoke_index": s.index,
        "segment": s.segment,
        "t_ms": s.t_ms,
        "tau_ms": s.tau_ms,
        "angle": s.angle,
        "bin_index": acq.bins.bin_index,
        "motion_rotation": acq.motion.rotation,
        "motion_translation": acq.motion.translation,
    }


def load_acquisition(cfg, path):
    """Rebuild an :class:`Acquisition` from config geometry and stored k-space."""
    arrays = container.read(path)
    tissue, _, schedule, bins, coords, contrast_ms = geometry(cfg)
    coils = CoilSet(arrays["coil_maps"])
    if arrays["samples"].shape[0] != len(schedule):
        raise ConfigError("stored k-space does not match the configured schedule")
    data = KSpaceDataset(schedule, arrays["samples"], float(arrays["noise_sigma"][0]))
    motion = MotionTrack(arrays["motion_rotation"], arrays["motion_translation"])
    return assemble(cfg, tissue, coils, schedule, bins, arrays["coords"], contrast_ms, data, motion)


def reconstruction_arrays(rec):
    out = {"bins": rec.bins, "contrasts": rec.contrasts,
           "data_fit": np.array([rec.data_fit])}
    if rec.gamma is not None:
        out["gamma"] = rec.gamma.images
        out["gamma_peaks"] = rec.gamma.peaks
    if rec.net is not None:
        out.update({f"net.{k}": v for k, v in rec.net.state().items()})
    if rec.factors is not None:
        out.update({"U": rec.factors.U, "V": rec.factors.V, "factor_tau_ms": rec.factors.delays})
    if rec.motion is not None:
        out.update({"est_rotation": rec.motion.rotation, "est_translation": rec.motion.translation})
    if rec.loss_history:
        out["loss_history"] = np.asarray(rec.loss_history)
    return out


def load_reconstruction(path):
    """Rebuild the evaluable part of a :class:`Reconstruction` from its container."""
    path = Path(path)
    arrays = container.read(path)
    motion = None
    if "est_rotation" in arrays:
        motion = MotionTrack(arrays["est_rotation"], arrays["est_translation"])
    return Reconstruction(label_from_slug(path.stem[len("recon_"):]), arrays["bins"],
                          arrays["contrasts"], float(arrays["data_fit"][0]), motion=motion,
                          loss_history=list(arrays.get("loss_history", [])))


def write_outputs(out, acq, items):
    """Write metrics, summary, curves and snapshots for ``(rec, rows, summary, curves)`` items."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    rows, sums, curves_text = [], [], []
    snap = ["file,scale"]
    for rec, r, s, c in items:
        rows += r
        sums.append(s)
        slug = method_slug(rec.method)
        (out / f"curves_{slug}.csv").write_text(curves_csv(c))
        for b, img in enumerate(rec.bins):
            name = f"{slug}_bin{b}.pgm"
            snap.append(f"{name},{_fmt(write_pgm(out / name, img))}")
    (out / "metrics.csv").write_text(metrics_csv(rows))
    (out / "summary.csv").write_text(summary_csv(sums, acq.cfg.fingerprint()))
    (out / "snapshots.csv").write_text("\n".join(snap) + "\n")


def run_experiment(cfg, out=None, methods=None):
    """Simulate, reconstruct with each method and write every artifact to ``out``."""
    out = Path(out or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    acq = simulate(cfg)
    (out / "config.txt").write_text(format_config(cfg))
    container.write(out / "groundtruth.dfmr", ground_truth_arrays(acq))
    container.write(out / "kspace.dfmr", kspace_arrays(acq))
    items = []
    for m in methods or [(cfg.method, cfg.rank)]:
        method, rank = m if isinstance(m, tuple) else (m, cfg.rank)
        rec = reconstruct(acq, method, rank)
        container.write(out / f"recon_{method_slug(rec.method)}.dfmr", reconstruction_arrays(rec))
        items.append((rec, *evaluate(acq, rec)))
    write_outputs(out, acq, items)
    return acq, items


# --- comparison -------------------------------------------------------------

EXPECTED_ORDER = [
    # (better, worse, summary key): "better" should have the lower value
    ("dfm", "lowrank(4)", "mean_nrmse"),
    ("lowrank(8)", "lowrank(4)", "gm_null_error"),
    ("dfm-mc", "dfm", "mean_nrmse"),
]


def read_table(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def compare_report(run_dirs):
    """Align per-bin metrics across runs and flag violated expected orderings.

    Returns ``(csv_text, table_text, violations)``.
    """
    rows, summaries, prints = [], {}, set()
    for d in run_dirs:
        d = Path(d)
        for s in read_table(d / "summary.csv"):
            prints.add(s["fingerprint"])
            summaries[s["method"]] = s
        for r in read_table(d / "metrics.csv"):
            rows.append(r)
    if len(prints) > 1:
        raise ConfigError(f"runs come from different experiments: {sorted(prints)}")
    methods = list(dict.fromkeys(r["method"] for r in rows))
    by_bin = {}
    for r in rows:
        by_bin.setdefault((int(r["bin"]), r["tau_ms"]), {})[r["method"]] = float(r["nrmse"])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["bin", "tau_ms", *methods])
    lines = [" ".join([f"{'bin':>4}", f"{'tau_ms':>9}", *(f"{m:>12}" for m in methods)])]
    for (b, tau), vals in sorted(by_bin.items()):
        w.writerow([b, tau, *(_fmt(vals.get(m, float("nan"))) for m in methods)])
        lines.append(" ".join([f"{b:>4}", f"{float(tau):>9.1f}",
                               *(f"{vals.get(m, float('nan')):>12.4f}" for m in methods)]))
    violations = []
    for better, worse, key in EXPECTED_ORDER:
        if better in summaries and worse in summaries and better != worse:
            a, b = float(summaries[better][key]), float(summaries[worse][key])
            if not a < b:
                violations.append(f"{key}: expected {better} ({a:.4g}) < {worse} ({b:.4g})")
    lines.append("mean " + " ".join(f"{m}={float(summaries[m]['mean_nrmse']):.4f}"
                                    for m in methods if m in summaries))
    lines += [f"VIOLATION {v}" for v in violations] or ["no ordering violations"]
    return buf.getvalue(), "\n".join(lines) + "\n", violations
