"""Command-line front end.

Exit status: 0 success, 2 usage or configuration error, 3 data or parse
error, 4 numerical failure.  Failures print one line to stderr of the form
``bdsagnac: error[<kind>]: <message>``.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import datetime as _dt
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import counting as cnt
from . import entanglement as ent
from . import interferometer as ifm
from . import stability as stab
from .errors import BDSagnacError, DataFormatError
from .materials import DB_ENV_VAR, Ray, group_index, load_database, refractive_index, thermo_optic

PROG = "bdsagnac"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# -- output helpers ------------------------------------------------------------


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def _report(args, db, body):
    doc = {
        "tool": {"name": PROG, "version": __version__},
        "command": args.command,
        "database": None if db is None else {"schema_version": db.schema_version, "source": db.source},
        "parameters": {k: v for k, v in vars(args).items() if k not in ("func", "command")},
        "result": body,
    }
    if not args.reproducible:
        doc["generated_utc"] = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    return json.dumps(_plain(doc), indent=2, sort_keys=True, allow_nan=False) + "\n"


def _write_text(path, text):
    if path is None or str(path) == "-":
        sys.stdout.write(text)
        return
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise DataFormatError(f"cannot write {path}: {exc.strerror}") from exc


@contextlib.contextmanager
def _open_out(path):
    if path is None or str(path) == "-":
        yield sys.stdout
        return
    try:
        fh = open(path, "w", encoding="utf-8", newline="")
    except OSError as exc:
        raise DataFormatError(f"cannot write {path}: {exc.strerror}") from exc
    with fh:
        yield fh


def _read_input(path):
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataFormatError(f"cannot read {path}: {exc.strerror}") from exc


def emit_plot_data(columns: dict, path) -> None:
    """Write named equal-length columns as CSV with round-trip-exact floats."""
    lengths = {len(v) for v in columns.values()}
    if len(lengths) > 1:
        raise UsageError(f"plot-data columns differ in length: {sorted(lengths)}")
    with _open_out(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(columns))
        for row in zip(*columns.values()):
            w.writerow([repr(float(x)) for x in row])


# -- commands ------------------------------------------------------------------


def cmd_materials(args, db):
    if args.material is None:
        body = {
            name: {"valid_range_nm": list(db[name].valid_range_nm), "citation": db[name].citation}
            for name in db.names()
        }
        return body
    m = db[args.material]
    out = {"material": m.name, "citation": m.citation, "valid_range_nm": list(m.valid_range_nm), "rows": []}
    for lam in args.wavelength_nm or []:
        out["rows"].append(
            {
                "wavelength_nm": lam,
                "n_o": refractive_index(m, Ray.ORDINARY, lam),
                "n_e": refractive_index(m, Ray.EXTRAORDINARY, lam),
                "group_index_o": group_index(m, Ray.ORDINARY, lam),
                "group_index_e": group_index(m, Ray.EXTRAORDINARY, lam),
                "dn_dT_o_per_k": thermo_optic(m, Ray.ORDINARY, lam),
                "dn_dT_e_per_k": thermo_optic(m, Ray.EXTRAORDINARY, lam),
                "walkoff_deg": ifm.walkoff_angle_at(m, args.cut_deg, lam),
            }
        )
    return out


def _compensator(args, db):
    if not (args.compensator_signal_mm or args.compensator_idler_mm):
        return ifm.NO_COMPENSATOR
    orient = {"auto": "auto", "plus": 1, "minus": -1}[args.compensator_orientation]
    return ifm.Compensator(
        db[args.compensator_material],
        args.compensator_signal_mm,
        args.compensator_idler_mm,
        args.compensator_cut_deg,
        orient,
    )


def cmd_design(args, db):
    bd = ifm.BeamDisplacer(db[args.material], args.length_mm, args.cut_deg, args.reference_temperature_k)
    wl = ifm.WavelengthSet(args.pump_nm, args.signal_nm, args.idler_nm)
    comp = _compensator(args, db)
    report = ifm.design_report(
        bd, wl, args.beam_diameter_mm, args.pulse_width_ps, comp, args.temperature_k, args.daughter_mode
    )
    if args.table:
        _write_text(args.table, report.format_table())
    body = report.to_dict()
    if comp is not ifm.NO_COMPENSATOR:
        body["compensated_temporal_walkoff_ps"] = list(ifm.compensated_temporal_walkoff(bd, wl, comp))
    return body


def cmd_fit_counts(args, db):
    scan = cnt.read_scan_csv(_read_input(args.input))
    fit = cnt.fit_counting_model(
        scan,
        window_s=args.window_ns * 1e-9,
        dark_s=args.dark_s_cps,
        dark_i=args.dark_i_cps,
        derived_series=not args.three_series,
        max_iterations=args.max_iterations,
    )
    body = fit.to_dict()
    body["per_pulse_brightness_per_mw2"] = cnt.per_pulse_brightness(fit.params.n_pair, args.rep_rate_mhz * 1e6)
    body["raman_crossover_mw"] = cnt.raman_crossover_power(fit.params)
    if args.plot_data:
        p = np.array([pt.power_mw for pt in scan])
        n_s, n_i, n_c = cnt.predict_rates(fit.params, p)
        emit_plot_data(
            {"power_mw": p, "model_n_s_cps": n_s, "model_n_i_cps": n_i, "model_n_c_cps": n_c,
             "model_h_s": n_c / n_i, "model_h_i": n_c / n_s},
            args.plot_data,
        )
    return body


def _latest_by_basis(text):
    return ent.by_basis(ent.read_fringe_csv(text))


def cmd_fringe(args, db):
    data = _latest_by_basis(_read_input(args.input))
    fits = {b: ent.fit_fringe(ds) for b, ds in sorted(data.items())}
    body = {"fits": {b: f.to_dict() for b, f in fits.items()}, "visibility_avg": ent.average_visibility(fits.values())}
    if args.plot_data:
        grid = np.arange(0.0, 360.0 + 1e-9, args.grid_step_deg)
        cols = {"theta_deg": grid}
        cols.update({f"fit_{b}_cps": f.evaluate(grid) for b, f in fits.items()})
        emit_plot_data(cols, args.plot_data)
    return body


def cmd_chsh(args, db):
    data = _latest_by_basis(_read_input(args.input))
    source = data if args.raw_counts else {b: ent.fit_fringe(ds) for b, ds in data.items()}
    s, sigma = ent.chsh_s(source, tuple(args.idler_deg), tuple(args.signal_deg), raw_counts=args.raw_counts)
    body = {"S": s, "sigma_S": sigma, "violation_sigmas": (s - 2.0) / sigma if sigma > 0 else None}
    if not args.raw_counts:
        v_avg = ent.average_visibility(source.values())
        body["visibility_avg"] = v_avg
        body["S_expected_from_visibility"] = 2.0 * math.sqrt(2.0) * v_avg
    return body


def cmd_phase_series(args, db):
    scans = ent.read_fringe_csv(_read_input(args.input))
    result = ent.extract_phase_series(scans)
    with _open_out(args.output_csv) as fh:
        ent.write_phase_csv(result, fh)
    good = [e for e in result.estimates if e.converged]
    return {
        "scans": len(result.estimates),
        "converged": len(good),
        "phi_deg_mean": float(np.mean([e.phi_deg for e in good])) if good else None,
        "gamma_mean": float(np.mean([e.gamma for e in good])) if good else None,
        "phase_csv": args.output_csv,
    }


def cmd_allan(args, db):
    series = stab.read_phase_csv(_read_input(args.input))
    curve = stab.allan_curve(series)
    with _open_out(args.output_csv) as fh:
        stab.write_curve_csv(curve, fh)
    body = {"interval_s": series.interval_s, "n_total": series.n_total, "curve": [list(c) for c in curve]}
    if any(s > 0 for _, s in curve):
        slope, err = stab.powerlaw_slope(curve)
        body.update(slope=slope, sigma_slope=err)
        print(f"slope {slope:.4f} +- {err:.4f}", file=sys.stderr)
    else:
        body.update(slope=None, sigma_slope=None)
        print("slope undefined: all deviations are zero", file=sys.stderr)
    return body


def _sim_params(args):
    return cnt.CountingParams(
        args.n_pair_cps_per_mw2, args.n_raman_s_cps_per_mw, args.n_raman_i_cps_per_mw,
        args.eta_s, args.eta_i, args.dark_s_cps, args.dark_i_cps, args.window_ns * 1e-9,
    )


def cmd_simulate(args, db):
    rng = np.random.default_rng(args.seed)
    if args.kind == "counts":
        params = _sim_params(args)
        points = []
        for p in args.powers_mw:
            draws = [cnt.simulate_counts(params, p, args.duration_s, int(rng.integers(2**63))) for _ in range(args.repeats)]
            arr = np.array([[d.n_s, d.n_i, d.n_c] for d in draws])
            sd = arr.std(axis=0, ddof=1) / math.sqrt(args.repeats) if args.repeats > 1 else np.sqrt(arr[0] / args.duration_s)
            mean = arr.mean(axis=0)
            points.append(cnt.PowerScanPoint(p, *mean, *sd, args.repeats))
        with _open_out(args.output_csv) as fh:
            cnt.write_scan_csv(points, fh)
        return {"kind": "counts", "points": len(points), "csv": args.output_csv}

    theta = np.arange(0.0, args.span_deg + 1e-9, args.step_deg)
    n_phi = 2.0 * args.n_pair_cps_per_mw2 * args.power_mw**2
    datasets = []

    def scan(basis, gamma, phi_rad, t, vis=None):
        if vis is None:
            state = ent.EntangledStateEstimate(gamma, phi_rad, n_phi)
            mu = ent.coincidence_fringe(state, args.eta_s, args.eta_i, theta, basis)
        else:
            mu = ent.visibility_fringe(n_phi * args.eta_s * args.eta_i, vis, theta, basis)
        c = rng.poisson(mu * args.duration_s) / args.duration_s
        s = rng.poisson(args.eta_s * n_phi / 2 * args.duration_s, len(theta)) / args.duration_s
        i = rng.poisson(args.eta_i * n_phi / 2 * args.duration_s, len(theta)) / args.duration_s
        pts = tuple(
            ent.FringePoint(a, b, x, y, math.sqrt(max(b, 1.0) / args.duration_s), 1) for a, b, x, y in zip(theta, c, s, i)
        )
        return ent.FringeDataset(basis, pts, t)

    if args.kind == "fringe":
        vis = dict(zip("HVDA", args.visibility))
        for basis in "HVDA":
            datasets.append(scan(basis, None, None, 0.0, vis[basis]))
        truth = {"visibility": vis}
    else:
        phi = args.phi0_deg + np.concatenate([[0.0], np.cumsum(rng.normal(0.0, args.step_sigma_deg, args.scans - 1))])
        for k, p in enumerate(phi):
            datasets.append(scan("D", args.gamma, math.radians(p), k * args.interval_s))
        truth = {"phi_deg": phi.tolist()}
    with _open_out(args.output_csv) as fh:
        ent.write_fringe_csv(datasets, fh)
    return {"kind": args.kind, "datasets": len(datasets), "csv": args.output_csv, "truth": truth}


# -- parser --------------------------------------------------------------------


def _add_common(p, needs_db=False):
    p.add_argument("--output", "-o", default=None, help="report file (JSON); default stdout")
    p.add_argument("--reproducible", action="store_true", help="omit the wall-clock timestamp from the report")
    if needs_db:
        p.add_argument("--db", default=None, help=f"material database TOML (default ${DB_ENV_VAR}, then bundled)")


def _add_source(p):
    g = p.add_argument_group("source parameters (defaults: reference fit)")
    g.add_argument("--n-pair-cps-per-mw2", type=float, default=149.71, help="pair coefficient, cps/mW^2")
    g.add_argument("--n-raman-s-cps-per-mw", type=float, default=18.61, help="signal Raman coefficient, cps/mW")
    g.add_argument("--n-raman-i-cps-per-mw", type=float, default=450.39, help="idler Raman coefficient, cps/mW")
    g.add_argument("--eta-s", type=float, default=0.25, help="signal detection efficiency (0-1)")
    g.add_argument("--eta-i", type=float, default=0.19, help="idler detection efficiency (0-1)")
    g.add_argument("--dark-s-cps", type=float, default=0.0, help="signal dark rate, cps")
    g.add_argument("--dark-i-cps", type=float, default=0.0, help="idler dark rate, cps")
    g.add_argument("--window-ns", type=float, default=0.6, help="coincidence window, ns")


def build_parser():
    parser = _Parser(prog=PROG, description="Beam-displacer Sagnac source design and analysis.")
    parser.add_argument("--version", action="version", version=f"{PROG} {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("materials", help="list materials or tabulate indices")
    _add_common(p, needs_db=True)
    p.add_argument("--material", default=None, help="material name")
    p.add_argument("--wavelength-nm", type=float, nargs="*", help="wavelengths, nm")
    p.add_argument("--cut-deg", type=float, default=45.0, help="cut angle for the walk-off column, deg")
    p.set_defaults(func=cmd_materials)

    p = sub.add_parser("design", help="walk-off and phase-sensitivity report for a displacer pair")
    _add_common(p, needs_db=True)
    p.add_argument("--material", required=True, help="displacer material")
    p.add_argument("--length-mm", type=float, default=40.0, help="displacer length, mm")
    p.add_argument("--cut-deg", type=float, default=45.0, help="optic-axis angle to the face normal, deg")
    p.add_argument("--pump-nm", type=float, required=True, help="pump wavelength, nm")
    p.add_argument("--signal-nm", type=float, required=True, help="signal wavelength, nm")
    p.add_argument("--idler-nm", type=float, required=True, help="idler wavelength, nm")
    p.add_argument("--beam-diameter-mm", type=float, default=1.1, help="beam 1/e full width of intensity, mm")
    p.add_argument("--pulse-width-ps", type=float, default=1.3, help="wavepacket 1/e full width of intensity, ps")
    p.add_argument("--temperature-k", type=float, default=295.0, help="operating temperature, K")
    p.add_argument("--reference-temperature-k", type=float, default=295.0, help="temperature at which length is given, K")
    p.add_argument("--compensator-material", default="quartz", help="compensator material")
    p.add_argument("--compensator-signal-mm", type=float, default=0.0, help="signal-arm compensator length, mm")
    p.add_argument("--compensator-idler-mm", type=float, default=0.0, help="idler-arm compensator length, mm")
    p.add_argument("--compensator-cut-deg", type=float, default=90.0, help="compensator optic-axis angle, deg")
    p.add_argument("--compensator-orientation", choices=("auto", "plus", "minus"), default="auto",
                   help="which polarization the compensator delays (auto: against the arm's walk-off)")
    p.add_argument("--daughter-mode", choices=ifm.DAUGHTER_MODES, default="signal-fixed",
                   help="how daughter wavelengths follow a pump-wavelength change")
    p.add_argument("--table", default=None, help="also write a fixed-width text table here ('-' for stdout)")
    p.set_defaults(func=cmd_design)

    p = sub.add_parser("fit-counts", help="fit the pair/Raman/dark model to a power scan")
    _add_common(p)
    p.add_argument("input", help="power-scan CSV")
    p.add_argument("--window-ns", type=float, default=0.6, help="coincidence window, ns")
    p.add_argument("--dark-s-cps", type=float, default=0.0, help="signal dark rate, cps")
    p.add_argument("--dark-i-cps", type=float, default=0.0, help="idler dark rate, cps")
    p.add_argument("--rep-rate-mhz", type=float, default=76.0, help="pump repetition rate, MHz")
    p.add_argument("--three-series", action="store_true", help="fit N_S, N_I, N_C only (drop heralding ratios)")
    p.add_argument("--max-iterations", type=int, default=200, help="iteration cap")
    p.add_argument("--plot-data", default=None, help="CSV of model curves at the scan powers")
    p.set_defaults(func=cmd_fit_counts)

    p = sub.add_parser("fringe", help="sinusoidal fits and visibilities per idler basis")
    _add_common(p)
    p.add_argument("input", help="fringe CSV")
    p.add_argument("--plot-data", default=None, help="CSV of fitted fringes on a theta grid")
    p.add_argument("--grid-step-deg", type=float, default=1.0, help="plot grid step, deg")
    p.set_defaults(func=cmd_fringe)

    p = sub.add_parser("chsh", help="CHSH S from four idler-basis fringes")
    _add_common(p)
    p.add_argument("input", help="fringe CSV with H, V, D, A bases")
    p.add_argument("--idler-deg", type=float, nargs=2, default=list(ent.CANONICAL_IDLER), help="idler settings a a', deg")
    p.add_argument("--signal-deg", type=float, nargs=2, default=list(ent.CANONICAL_SIGNAL), help="signal settings b b', deg")
    p.add_argument("--raw-counts", action="store_true", help="use counts at the exact analyser angles instead of fits")
    p.set_defaults(func=cmd_chsh)

    p = sub.add_parser("phase-series", help="per-scan amplitude and phase from diagonal-basis scans")
    _add_common(p)
    p.add_argument("input", help="fringe CSV, one D-basis scan per timestamp")
    p.add_argument("--output-csv", required=True, help="phase-series CSV ('-' for stdout)")
    p.set_defaults(func=cmd_phase_series)

    p = sub.add_parser("allan", help="phase deviation curve and log-log slope")
    _add_common(p)
    p.add_argument("input", help="phase-series CSV")
    p.add_argument("--output-csv", required=True, help="curve CSV ('-' for stdout)")
    p.set_defaults(func=cmd_allan)

    p = sub.add_parser("simulate", help="seeded synthetic data")
    _add_common(p)
    p.add_argument("kind", choices=("counts", "fringe", "phase-series"), help="what to generate")
    p.add_argument("--seed", type=int, required=True, help="random seed (mandatory)")
    p.add_argument("--output-csv", required=True, help="output CSV ('-' for stdout)")
    p.add_argument("--duration-s", type=float, default=1.0, help="integration time per point, s")
    _add_source(p)
    g = p.add_argument_group("counts")
    g.add_argument("--powers-mw", type=float, nargs="+", default=[2.0, 5.0, 8.0, 12.0, 17.0, 22.0, 28.0, 35.0],
                   help="pump powers, mW")
    g.add_argument("--repeats", type=int, default=10, help="acquisitions averaged per power")
    g = p.add_argument_group("fringe / phase-series")
    g.add_argument("--power-mw", type=float, default=20.0, help="pump power, mW")
    g.add_argument("--step-deg", type=float, default=10.0, help="polarizer step, deg")
    g.add_argument("--span-deg", type=float, default=360.0, help="polarizer sweep, deg")
    g.add_argument("--visibility", type=float, nargs=4, default=[0.983, 0.965, 0.938, 0.935],
                   help="fringe visibilities for H V D A")
    g.add_argument("--gamma", type=float, default=1 / math.sqrt(2), help="state amplitude (0-1)")
    g.add_argument("--phi0-deg", type=float, default=90.0, help="initial phase, deg")
    g.add_argument("--step-sigma-deg", type=float, default=1.0, help="random-walk step per scan, deg")
    g.add_argument("--scans", type=int, default=143, help="number of scans")
    g.add_argument("--interval-s", type=float, default=600.0, help="time between scans, s")
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"{PROG}: error[usage]: {exc}", file=sys.stderr)
        return 2
    try:
        db = load_database(args.db) if hasattr(args, "db") else None
        body = args.func(args, db)
        _write_text(args.output, _report(args, db, body))
    except UsageError as exc:
        print(f"{PROG}: error[usage]: {exc}", file=sys.stderr)
        return 2
    except BDSagnacError as exc:
        message = " ".join(str(exc).split())
        print(f"{PROG}: error[{exc.kind}]: {message}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
