"""Command line entry point ``dfmr``.

Subcommands::

    dfmr simulate --config C --out D       ground truth + k-space containers
    dfmr recon    --config C --out D [--method M]
    dfmr eval     --config C --out D       metrics, curves, snapshots for every recon in D
    dfmr run      --config C --out D [--method M ...]   all of the above
    dfmr compare  D1 D2 ... [--out D]
    dfmr selftest

Exit codes: 0 success, 1 failed self-check or ordering violation in
``compare --strict``, 2 configuration error, 3 numerical abort, 4 I/O error.
"""

import argparse
import sys
from pathlib import Path

from . import container, experiment, selftest
from .optim import NonFiniteError

EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _config(args):
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "method", None):
        overrides["method"] = args.method[0] if isinstance(args.method, list) else args.method
    if args.config:
        cfg = experiment.load_config(args.config, **overrides)
    else:
        cfg = experiment.parse_config("", **overrides)
    return cfg


def _out(args, cfg):
    return Path(args.out or cfg.out)


def _methods(args, cfg):
    names = args.method or [cfg.method]
    out = []
    for name in names:
        method, rank = experiment.canonical_method(name)
        out.append((method, rank if rank is not None else cfg.rank))
    return out


def cmd_simulate(args):
    cfg = _config(args)
    out = _out(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    acq = experiment.simulate(cfg)
    (out / "config.txt").write_text(experiment.format_config(cfg))
    container.write(out / "groundtruth.dfmr", experiment.ground_truth_arrays(acq))
    container.write(out / "kspace.dfmr", experiment.kspace_arrays(acq))
    print(f"wrote {out}/groundtruth.dfmr, {out}/kspace.dfmr (noise sigma {acq.data.noise_sigma:.4g})")
    return 0


def _acquisition(cfg, out):
    path = out / "kspace.dfmr"
    if path.exists():
        return experiment.load_acquisition(cfg, path)
    return experiment.simulate(cfg)


def cmd_recon(args):
    cfg = _config(args)
    out = _out(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    acq = _acquisition(cfg, out)
    for method, rank in _methods(args, cfg):
        rec = experiment.reconstruct(acq, method, rank)
        path = out / f"recon_{experiment.method_slug(rec.method)}.dfmr"
        container.write(path, experiment.reconstruction_arrays(rec))
        print(f"{rec.method}: data fit {rec.data_fit:.6g} -> {path}")
    return 0


def cmd_eval(args):
    cfg = _config(args)
    out = _out(args, cfg)
    acq = _acquisition(cfg, out)
    paths = sorted(out.glob("recon_*.dfmr"))
    if not paths:
        raise FileNotFoundError(f"no recon_*.dfmr files in {out}")
    items = []
    for p in paths:
        rec = experiment.load_reconstruction(p)
        items.append((rec, *experiment.evaluate(acq, rec)))
    experiment.write_outputs(out, acq, items)
    for rec, _, summary, _ in items:
        print(f"{rec.method}: mean nrmse {summary['mean_nrmse']:.4f}, "
              f"GM-null magnitude {summary['gm_null_magnitude']:.4f}")
    return 0


def cmd_run(args):
    cfg = _config(args)
    out = _out(args, cfg)
    _, items = experiment.run_experiment(cfg, out, _methods(args, cfg))
    for rec, _, summary, _ in items:
        print(f"{rec.method}: mean nrmse {summary['mean_nrmse']:.4f}")
    return 0


def cmd_compare(args):
    csv_text, table, violations = experiment.compare_report(args.runs)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "compare.csv").write_text(csv_text)
        (out / "compare.txt").write_text(table)
    sys.stdout.write(table)
    return 1 if (violations and args.strict) else 0


def cmd_selftest(args):
    checks = selftest.run_all()
    for c in checks:
        print(c.line())
    return 0 if all(c.ok for c in checks) else 1


def build_parser():
    p = _Parser(prog="dfmr", description="Deep factor model MRI reconstruction at desk scale.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, multi=False):
        sp.add_argument("--config", metavar="PATH", help="key=value experiment file")
        sp.add_argument("--out", metavar="DIR", help="output directory (default: config 'out')")
        sp.add_argument("--seed", type=int, metavar="N", help="root seed override")
        if multi:
            sp.add_argument("--method", action="append", metavar="NAME",
                            help="gridding, lowrank(R), dfm or dfm-mc; repeatable")
        return sp

    common(sub.add_parser("simulate", help="simulate ground truth and k-space"))
    common(sub.add_parser("recon", help="reconstruct stored (or freshly simulated) k-space"), True)
    common(sub.add_parser("eval", help="score every reconstruction in the output directory"))
    common(sub.add_parser("run", help="simulate, reconstruct and evaluate"), True)
    cp = sub.add_parser("compare", help="align metrics of several run directories")
    cp.add_argument("runs", nargs="+", metavar="DIR")
    cp.add_argument("--out", metavar="DIR", help="also write compare.csv / compare.txt here")
    cp.add_argument("--strict", action="store_true", help="exit 1 on ordering violations")
    sub.add_parser("selftest", help="oracle, adjoint and gradient checks")
    return p


COMMANDS = {"simulate": cmd_simulate, "recon": cmd_recon, "eval": cmd_eval, "run": cmd_run,
            "compare": cmd_compare, "selftest": cmd_selftest}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (NonFiniteError, FloatingPointError) as exc:
        print(f"dfmr: numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, container.ContainerError) as exc:
        print(f"dfmr: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        # ConfigError and parameter validation inside the modules
        print(f"dfmr: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
