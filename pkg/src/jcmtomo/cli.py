"""Command-line interface.

Frequencies are given in angular kHz and times in microseconds. Bloch
vectors on the command line and in outputs are Pauli components; measured
moments are read in the design's spin convention.

Exit codes: 0 success, 2 invalid arguments, 3 singular design,
4 likelihood fit did not converge, 5 moment series disagree with propagation.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from contextlib import contextmanager
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from .errors import AllSingular, NoConventionMatches, NonConvergence, SingularDesign
from .mlfit import TABLE_VALUES, CountRecord, MlOptions, delta_table, ml_fit
from .model import BlochVector, JcmConfig, MomentVector, SpinConvention, TimeGrid
from .moments import DesignSystem, build_design, build_design_unchecked, moments
from .oracle import calibrate_convention, evolve_analytic, initial_state, joint_distribution, sample_counts
from .tomography import invert_moments, pick_time, scan_determinant

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_SINGULAR = 3
EXIT_NONCONVERGENCE = 4
EXIT_NO_CONVENTION = 5


class UsageError(Exception):
    pass


def fmt(x: float) -> str:
    return f"{x:.17g}"


def _triple(text: str) -> List[float]:
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected three comma-separated numbers, got {text!r}") from None
    if len(vals) != 3:
        raise argparse.ArgumentTypeError(f"expected three comma-separated numbers, got {text!r}")
    return vals


def _cutoff(text: str):
    if text == "auto":
        return "auto"
    try:
        return int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"cutoff must be an integer or 'auto', got {text!r}") from None


def _add_physics(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("system")
    g.add_argument("--nbar", type=float, default=2.0, help="mean photon number of the coherent state")
    g.add_argument("--phase", type=float, default=0.0, help="phase of the coherent amplitude (rad)")
    g.add_argument("--g", type=float, default=50.0, help="coupling, angular kHz")
    g.add_argument("--delta", type=float, default=100.0, help="detuning, angular kHz")
    g.add_argument("--nu", type=float, default=0.0, help="mode frequency, angular kHz (0: interaction picture)")
    g.add_argument("--cutoff", type=_cutoff, default="auto", help="photon cutoff or 'auto'")


def _add_design(p: argparse.ArgumentParser, time_required: bool = True) -> None:
    p.add_argument("--t", type=float, required=time_required, help="interaction time, us")
    p.add_argument("--correlator", choices=("corrected", "legacy"), default="corrected")
    p.add_argument("--convention", choices=[c.value for c in SpinConvention], default=SpinConvention.HALF.value)


def _add_output(p: argparse.ArgumentParser, formats=("json", "csv"), default="json") -> None:
    p.add_argument("--format", choices=formats, default=default)
    p.add_argument("--out", default="-", help="output path (default: standard output)")


def _config(args) -> JcmConfig:
    if args.nbar < 0:
        raise UsageError(f"--nbar must be non-negative, got {args.nbar}")
    try:
        return JcmConfig.from_nbar(args.nbar, args.g, args.delta, args.phase, nu=args.nu, fock_cutoff=args.cutoff)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _grid(args) -> TimeGrid:
    try:
        return TimeGrid(args.tmin, args.tmax, args.steps)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _meta(args, cfg: Optional[JcmConfig] = None) -> Dict[str, object]:
    meta: Dict[str, object] = {"command": args.command, "version": __version__}
    if cfg is not None:
        nbar = getattr(args, "nbar", None)
        meta.update(
            nbar=cfg.nbar if nbar is None else nbar,
            phase=getattr(args, "phase", 0.0),
            g=cfg.g,
            delta=cfg.delta,
            nu=cfg.nu,
            cutoff=cfg.cutoff,
        )
    for key in ("t", "tmin", "tmax", "steps", "sigma", "correlator", "convention", "shots", "seed"):
        if getattr(args, key, None) is not None:
            meta[key] = getattr(args, key)
    return meta


@contextmanager
def _open_out(path: str):
    if path == "-":
        yield sys.stdout
    else:
        with open(path, "w", newline="") as fh:
            yield fh


def _write_json(path: str, doc) -> None:
    with _open_out(path) as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def _write_csv(path: str, meta: Dict[str, object], header: Sequence[str], rows) -> None:
    with _open_out(path) as fh:
        for k, v in meta.items():
            fh.write(f"# {k}={v}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) if isinstance(v, float) else v for v in row])


def _design(args, cfg: JcmConfig) -> DesignSystem:
    return build_design(cfg, args.t, correlator=args.correlator, convention=args.convention)


def _bloch_doc(b: BlochVector) -> List[float]:
    return [b.x, b.y, b.z]


def design_document(design: DesignSystem) -> Dict[str, object]:
    """Matrices of a design under the frozen key names."""
    return {
        "m": design.m.tolist(),
        "b": design.b.tolist(),
        "det": design.det,
        "m_inv": None if design.m_inv is None else design.m_inv.tolist(),
        "c": None if design.c is None else design.c.tolist(),
        "cond": design.cond,
    }


def cmd_scan_det(args) -> int:
    cfg = _config(args)
    grid = _grid(args)
    if args.sigma is not None and args.sigma < 0:
        raise UsageError(f"--sigma must be non-negative, got {args.sigma}")
    scan = scan_determinant(cfg, grid, args.sigma)
    col_t, col_d = ("t0_us", "D_bar") if scan.averaged else ("t_us", "D")
    summary = {"argmax_t_us": scan.argmax, "max_abs": scan.max_abs}
    if not scan.averaged:
        try:
            summary["refined_t_us"] = pick_time(cfg, grid)
        except AllSingular:
            summary["refined_t_us"] = None
    meta = _meta(args, cfg)
    if args.format == "csv":
        _write_csv(args.out, {**meta, **summary}, (col_t, col_d), scan.rows())
    else:
        _write_json(args.out, {"meta": meta, **summary, col_t: scan.times.tolist(), col_d: scan.values.tolist()})
    if args.out != "-":
        print("  ".join(f"{k}={v if v is None else fmt(v)}" for k, v in summary.items()))
    return EXIT_OK


def cmd_design(args) -> int:
    cfg = _config(args)
    if args.allow_singular:
        design = build_design_unchecked(cfg, args.t, correlator=args.correlator, convention=args.convention)
    else:
        design = _design(args, cfg)
    _write_json(args.out, {"meta": _meta(args, cfg), **design_document(design)})
    return EXIT_OK


def cmd_moments(args) -> int:
    cfg = _config(args)
    s = BlochVector(*args.bloch, validate=True)
    conv = SpinConvention.parse(args.convention)
    mv = moments(BlochVector.from_array(conv.scale * s.as_array()), cfg, args.t, args.correlator)
    doc = {"sz": mv.sz, "n": mv.n, "szn": mv.szn}
    if args.format == "csv":
        _write_csv(args.out, _meta(args, cfg), ("sz", "n", "szn"), [(mv.sz, mv.n, mv.szn)])
    else:
        _write_json(args.out, {"meta": _meta(args, cfg), **doc})
    return EXIT_OK


def cmd_invert(args) -> int:
    cfg = _config(args)
    res = invert_moments(MomentVector(*args.moments), _design(args, cfg))
    doc = {
        "bloch": _bloch_doc(res.bloch),
        "norm": res.norm,
        "physical": res.physical,
        "cond": res.condition,
        "det": res.det,
    }
    if args.format == "csv":
        b = res.bloch
        rows = [(b.x, b.y, b.z, res.norm, int(res.physical), res.condition, res.det)]
        _write_csv(args.out, _meta(args, cfg), ("x", "y", "z", "norm", "physical", "cond", "det"), rows)
    else:
        _write_json(args.out, {"meta": _meta(args, cfg), **doc})
    return EXIT_OK


def simulate_counts(cfg: JcmConfig, s: BlochVector, t: float, shots: int, seed: int) -> CountRecord:
    state = evolve_analytic(initial_state(s, cfg), cfg, t)
    return sample_counts(joint_distribution(state), shots, seed)


def cmd_simulate(args) -> int:
    cfg = _config(args)
    if args.shots < 1:
        raise UsageError(f"--shots must be a positive integer, got {args.shots}")
    s = BlochVector(*args.bloch, validate=True)
    rec = simulate_counts(cfg, s, args.t, args.shots, args.seed)
    freq = rec.frequencies
    meta = {**_meta(args, cfg), "bloch": ",".join(fmt(v) for v in args.bloch)}
    rows = [(int(m), int(a), int(c), float(f)) for m, a, c, f in zip(rec.m, rec.a, rec.values, freq)]
    if args.format == "csv":
        _write_csv(args.out, meta, ("m", "a", "count", "frequency"), rows)
    else:
        doc = {"meta": meta, "outcomes": [dict(m=m, a=a, count=c, frequency=f) for m, a, c, f in rows]}
        _write_json(args.out, doc)
    return EXIT_OK


def read_counts(path: str) -> CountRecord:
    """Counts CSV (as written by ``simulate``): columns m, a and count or frequency."""
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if ln.strip() and not ln.lstrip().startswith("#")]
    reader = csv.DictReader(io.StringIO("".join(lines)))
    key = "count" if "count" in (reader.fieldnames or []) else "frequency"
    if not {"m", "a", key} <= set(reader.fieldnames or []):
        raise UsageError(f"{path}: expected columns m, a and count or frequency")
    entries = [(int(r["m"]), int(r["a"]), float(r[key])) for r in reader]
    return CountRecord.from_pairs(entries)


def parse_freqs(text: str) -> CountRecord:
    """``m:a:value`` entries separated by commas, e.g. ``1:1:0.05,1:-1:0.05``."""
    entries = []
    for item in text.split(","):
        try:
            m, a, v = item.split(":")
            entries.append((int(m), int(a), float(v)))
        except ValueError:
            raise UsageError(f"bad frequency entry {item!r}; expected m:a:value") from None
    return CountRecord.from_pairs(entries)


def read_design(path: str) -> DesignSystem:
    """Rebuild a design from a document written by ``design``."""
    with open(path) as fh:
        doc = json.load(fh)
    meta = doc["meta"]
    cfg = JcmConfig.from_nbar(
        meta["nbar"], meta["g"], meta["delta"], meta.get("phase", 0.0), nu=meta.get("nu", 0.0), fock_cutoff=meta["cutoff"]
    )
    if doc["m_inv"] is None:
        raise SingularDesign(f"{path}: design is singular")
    return DesignSystem(
        m=np.array(doc["m"]),
        b=np.array(doc["b"]),
        det=doc["det"],
        m_inv=np.array(doc["m_inv"]),
        c=np.array(doc["c"]),
        cfg=cfg,
        t=meta["t"],
        correlator=meta["correlator"],
        convention=SpinConvention.parse(meta["convention"]),
    )


def solution_document(sol) -> Dict[str, object]:
    table = sol.p
    return {
        "p": [dict(m=int(m), a=int(a), p=float(p)) for m, a, p in zip(table.m, table.a, table.p)],
        "bloch": _bloch_doc(sol.bloch),
        "delta": sol.delta,
        "constraint_active": sol.constraint_active,
        "converged": sol.converged,
        "iterations": sol.iterations,
        "log_likelihood": sol.log_likelihood,
        "multiplier": sol.multiplier,
        "constraint_value": sol.constraint_value,
        "regularized": sol.regularized,
    }


def cmd_mlfit(args) -> int:
    if args.design:
        design = read_design(args.design)
        cfg = design.cfg
    else:
        if args.t is None:
            raise UsageError("either --design or --t is required")
        cfg = _config(args)
        design = _design(args, cfg)
    opts = MlOptions(max_iter=args.max_iter)
    meta = _meta(args, cfg)
    meta.update(t=design.t, correlator=design.correlator, convention=design.convention.value)
    if args.design:
        meta.update(nbar=cfg.nbar, phase=0.0, design=args.design)
    if args.table1:
        rows = []
        for v1, v2, d, sol in delta_table(design, TABLE_VALUES, opts):
            rows.append((v1, v2, "unphysical input" if sol is None else d))
        if args.format == "csv":
            _write_csv(args.out, meta, ("nu1_1", "nu1_2", "delta"), rows)
        else:
            cells = [dict(nu1_1=a, nu1_2=b, delta=d) for a, b, d in rows]
            _write_json(args.out, {"meta": meta, "table": cells})
        return EXIT_OK
    sources = [x for x in (args.counts, args.freqs) if x]
    if len(sources) != 1:
        raise UsageError("give exactly one of --counts, --freqs or --table1")
    rec = read_counts(args.counts) if args.counts else parse_freqs(args.freqs)
    code = EXIT_OK
    try:
        sol = ml_fit(rec, design, opts)
    except NonConvergence as exc:
        sol, code = exc.solution, EXIT_NONCONVERGENCE
        print(f"error: {exc}", file=sys.stderr)
    _write_json(args.out, {"meta": meta, **solution_document(sol)})
    return code


DEFAULT_SWEEP = {"nbar": (0.5, 2.0, 5.0), "delta": (0.0, 10.0, 100.0)}


def cmd_oracle_check(args) -> int:
    sweep_nbar = args.sweep_nbar or DEFAULT_SWEEP["nbar"]
    sweep_delta = args.sweep_delta or DEFAULT_SWEEP["delta"]
    grid = _grid(args)
    worst: Dict[str, float] = {"sz": 0.0, "n": 0.0, "szn": 0.0}
    found = set()
    lines = []
    for nbar in sweep_nbar:
        for delta in sweep_delta:
            cfg = JcmConfig.from_nbar(nbar, args.g, delta)
            try:
                report = calibrate_convention(cfg, grid, args.correlator, args.tol)
            except NoConventionMatches as exc:
                print(f"nbar={nbar:g} delta={delta:g}: no convention matches", file=sys.stderr)
                for line in exc.report.lines():
                    print("  " + line, file=sys.stderr)
                return EXIT_NO_CONVENTION
            conv = report.convention or SpinConvention.HALF
            if report.convention is not None:
                found.add(report.convention.value)
            rows = report.deviations[conv.value]
            for k in worst:
                worst[k] = max(worst[k], max(rows[k].values()))
            tag = conv.value if report.convention else f"{conv.value} (not discriminated)"
            lines.append(f"nbar={nbar:g} delta={delta:g}: convention {tag}, max deviation {report.max_deviation(conv):.3e}")
    if len(found) > 1:
        print(f"error: inconsistent conventions across the sweep: {sorted(found)}", file=sys.stderr)
        return EXIT_NO_CONVENTION
    with _open_out(args.out) as fh:
        for line in lines:
            fh.write(line + "\n")
        for k, v in worst.items():
            fh.write(f"max deviation {k}: {v:.3e}\n")
        fh.write(f"calibrated convention: {found.pop() if found else 'undetermined'}\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="jcmtomo", description="Atomic state tomography through a cavity mode.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("scan-det", help="determinant (or its time average) on a time grid")
    _add_physics(p)
    p.add_argument("--tmin", type=float, default=0.0)
    p.add_argument("--tmax", type=float, default=400.0)
    p.add_argument("--steps", type=int, default=4000)
    p.add_argument("--sigma", type=float, default=None, help="variance of the interaction time, us^2")
    _add_output(p, default="csv")
    p.set_defaults(func=cmd_scan_det)

    p = sub.add_parser("design", help="design matrix, offset, determinant and inverse at one time")
    _add_physics(p)
    _add_design(p)
    p.add_argument("--allow-singular", action="store_true")
    _add_output(p, formats=("json",))
    p.set_defaults(func=cmd_design)

    p = sub.add_parser("moments", help="closed-form moments for a Bloch vector")
    _add_physics(p)
    _add_design(p)
    p.add_argument("--bloch", type=_triple, required=True, help="x,y,z")
    _add_output(p)
    p.set_defaults(func=cmd_moments)

    p = sub.add_parser("invert", help="Bloch vector from measured moments")
    _add_physics(p)
    _add_design(p)
    p.add_argument("--moments", type=_triple, required=True, help="sz,n,szn")
    _add_output(p)
    p.set_defaults(func=cmd_invert)

    p = sub.add_parser("simulate", help="sample joint photon/atom counts from exact propagation")
    _add_physics(p)
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--bloch", type=_triple, required=True, help="x,y,z")
    p.add_argument("--shots", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    _add_output(p, default="csv")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("mlfit", help="constrained maximum-likelihood fit of joint frequencies")
    _add_physics(p)
    _add_design(p, time_required=False)
    p.add_argument("--design", help="design JSON written by the design command")
    p.add_argument("--counts", help="counts CSV written by the simulate command")
    p.add_argument("--freqs", help="inline m:a:value entries, comma separated")
    p.add_argument("--table1", action="store_true", help="symmetric-frequency delta grid")
    p.add_argument("--max-iter", type=int, default=MlOptions.max_iter)
    _add_output(p)
    p.set_defaults(func=cmd_mlfit)

    p = sub.add_parser("oracle-check", help="compare the moment series with exact propagation")
    p.add_argument("--g", type=float, default=50.0)
    p.add_argument("--sweep-nbar", type=float, nargs="+")
    p.add_argument("--sweep-delta", type=float, nargs="+")
    p.add_argument("--tmin", type=float, default=0.0)
    p.add_argument("--tmax", type=float, default=300.0)
    p.add_argument("--steps", type=int, default=31)
    p.add_argument("--correlator", choices=("corrected", "legacy"), default="corrected")
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_oracle_check)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SingularDesign as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SINGULAR
    except NonConvergence as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except NoConventionMatches as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NO_CONVENTION
