"""Acceptance criteria, one test and one PASS/FAIL summary line per criterion.

Run ``pytest tests/test_acceptance.py -v`` (lines appear in the terminal
summary) or ``python tests/test_acceptance.py`` (lines printed directly).
"""

import math
import time

import numpy as np
from scipy import integrate

from bdsagnac import birefringence as bf
from bdsagnac import cli
from bdsagnac import counting as cnt
from bdsagnac import entanglement as ent
from bdsagnac import interferometer as ifm
from bdsagnac import stability as stab
from bdsagnac.materials import load_database
from bdsagnac.numdiff import richardson_derivative

try:
    from conftest import ACCEPTANCE_LINES
except ImportError:  # run as a script
    ACCEPTANCE_LINES = []

DB = load_database()
WL = ifm.WavelengthSet(940.0, 764.0, 1221.0)
G0 = 1 / math.sqrt(2)

# reference design table: (dT_S, dT_I) ps, (dd_S, dd_I) mm, dphi/dT deg/K
TABLE = {
    "calcite": ((-0.20, 0.06), (-0.07, 0.09), -7.00),
    "alpha-BBO": ((-0.18, 0.15), (-0.01, -0.01), -0.97),
    "YVO4": ((1.35, -0.93), (0.07, -0.06), -0.86),
}
LAST_DIGIT = {"dT": 0.01, "dd": 0.01, "dphi": 0.01}


def record(tag, title, checks):
    failed = [c for c in checks if not c[1]]
    status = "PASS" if not failed else "FAIL"
    detail = f"{len(checks) - len(failed)}/{len(checks)} checks"
    if failed:
        detail += "; failing: " + "; ".join(f"{label} ({info})" for label, _, info in failed)
    line = f"[{status}] {tag} {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert not failed, line


def _close(got, want, rel, unit):
    return abs(got - want) <= max(rel * abs(want), unit) and (got > 0) == (want > 0)


def test_c1_table_reproduction():
    checks = []
    for name, ((ts, ti), (ds, di), dphi) in TABLE.items():
        rel = 0.25 if name == "YVO4" else 0.15
        start = time.perf_counter()
        rep = ifm.design_report(ifm.BeamDisplacer(DB[name], 40.0, 45.0), WL)
        elapsed = time.perf_counter() - start
        pairs = [
            ("dT_S", rep.temporal_walkoff_signal_ps, ts, "dT"),
            ("dT_I", rep.temporal_walkoff_idler_ps, ti, "dT"),
            ("dd_S", rep.spatial_walkoff_signal_mm, ds, "dd"),
            ("dd_I", rep.spatial_walkoff_idler_mm, di, "dd"),
            ("dphi/dT", rep.thermal_phase_deg_per_k, dphi, "dphi"),
        ]
        for label, got, want, kind in pairs:
            unit = 0.0 if name == "YVO4" else LAST_DIGIT[kind]
            checks.append((f"{name} {label}", _close(got, want, rel, unit), f"got {got:+.3f}, want {want:+.2f}"))
        checks.append((f"{name} runtime", elapsed < 1.0, f"{elapsed:.3f} s"))
    record("C1", "design table (signs and magnitudes)", checks)


def test_c2_overlaps():
    rep = ifm.design_report(ifm.BeamDisplacer(DB["calcite"], 40.0), WL, beam_diameter_1e_mm=1.1, pulse_width_1e_ps=1.3)
    checks = [
        ("spatial S > 0.99", rep.overlap_spatial_signal > 0.99, f"{rep.overlap_spatial_signal:.4f}"),
        ("spatial I > 0.99", rep.overlap_spatial_idler > 0.99, f"{rep.overlap_spatial_idler:.4f}"),
        ("temporal S 0.973+-0.005", abs(rep.overlap_temporal_signal - 0.973) <= 0.005, f"{rep.overlap_temporal_signal:.4f}"),
        ("temporal I 0.998+-0.002", abs(rep.overlap_temporal_idler - 0.998) <= 0.002, f"{rep.overlap_temporal_idler:.4f}"),
    ]
    record("C2", "mode overlap factors", checks)


def test_c3_pump_wavelength_sensitivity():
    bd = ifm.BeamDisplacer(DB["calcite"], 40.0)
    signal_only = ifm.Compensator(DB["quartz"], signal_length_mm=16.0)
    both = ifm.Compensator(DB["quartz"], signal_length_mm=16.0, idler_length_mm=16.0)
    a = abs(ifm.pump_phase_sensitivity(bd, WL, signal_only))
    b = abs(ifm.pump_phase_sensitivity(bd, WL, both))
    checks = [
        ("signal-only 1.01 rad/nm +-20%", abs(a - 1.01) <= 0.2 * 1.01, f"got {a:.3f}"),
        ("both arms 0.48 rad/nm +-20%", abs(b - 0.48) <= 0.2 * 0.48, f"got {b:.3f}"),
    ]
    record("C3", "pump-wavelength phase sensitivity", checks)


def _scan(params, rng=None, noise=0.0):
    pts = []
    for p in np.linspace(2.0, 35.0, 8):
        rates = np.array(cnt.predict_rates(params, p))
        obs = rates * (1 + noise * rng.standard_normal(3)) if noise else rates
        pts.append(cnt.PowerScanPoint(p, *obs, *(0.01 * rates), 10))
    return pts


def test_c4_counting_self_consistency():
    truth = np.array(cnt.REFERENCE_FIT.fitted())
    fit = cnt.fit_counting_model(_scan(cnt.REFERENCE_FIT))
    fixed = np.max(np.abs(np.array(fit.params.fitted()) / truth - 1))
    errors = []
    for seed in range(100):
        noisy = cnt.fit_counting_model(_scan(cnt.REFERENCE_FIT, np.random.default_rng(seed), 0.01))
        errors.append(np.abs(np.array(noisy.params.fitted()) / truth - 1))
    p95 = np.percentile(errors, 95, axis=0)
    brightness = cnt.per_pulse_brightness(fit.params.n_pair, 76e6)
    checks = [("fixed point 1e-4", fixed <= 1e-4, f"max rel err {fixed:.1e}")]
    for name, err in zip(cnt.FIT_NAMES, p95):
        checks.append((f"noisy {name} 95th pct <= 5%", err <= 0.05, f"{100 * err:.1f}%"))
    checks.append(("per-pulse brightness 2.1(2)e-6", abs(brightness - 2.1e-6) <= 0.2e-6, f"{brightness:.3e}"))
    record("C4", "counting model fit", checks)


def _uniform_fits(v, grid=np.arange(0.0, 360.0, 10.0)):
    return {
        b: ent.fit_fringe(ent.FringeDataset(b, tuple(ent.FringePoint(t, ent.visibility_fringe(1000.0, v, t, b)) for t in grid)))
        for b in ent.BASIS_ANGLES
    }


def test_c5_visibility_chsh_identity():
    s_v, _ = ent.chsh_s(_uniform_fits(0.955))
    s_1, _ = ent.chsh_s(_uniform_fits(1.0))
    checks = [
        ("S(V=0.955) = 2.7012 +- 1e-4", abs(s_v - 2.7012) <= 1e-4, f"{s_v:.6f}"),
        ("consistent with 2.70 +- 0.04", abs(s_v - 2.70) <= 0.04, f"{s_v:.4f}"),
        ("ideal S = 2 sqrt2 to 1e-10", abs(s_1 - 2 * math.sqrt(2)) <= 1e-10, f"{s_1 - 2 * math.sqrt(2):.1e}"),
    ]
    record("C5", "visibility / CHSH identity", checks)


def test_c6_fringe_round_trip():
    injected = dict(zip("HVDA", (0.983, 0.965, 0.938, 0.935)))
    grid = np.arange(0.0, 360.0, 10.0)
    peak, dwell = 600.0, 5.0
    errs = {b: [] for b in injected}
    avg_err = []
    for seed in range(100):
        rng = np.random.default_rng(seed)
        fits = []
        for b, v in injected.items():
            counts = rng.poisson(ent.visibility_fringe(peak, v, grid, b) * dwell) / dwell
            pts = tuple(ent.FringePoint(t, c, sd_c=math.sqrt(max(c, 1.0) / dwell), repeats=5) for t, c in zip(grid, counts))
            fit = ent.fit_fringe(ent.FringeDataset(b, pts))
            errs[b].append(abs(fit.visibility - v))
            fits.append(fit)
        avg_err.append(abs(ent.average_visibility(fits) - 0.955))
    checks = [(f"V_{b} +-0.01", np.percentile(e, 95) <= 0.01, f"95th pct {np.percentile(e, 95):.4f}") for b, e in errs.items()]
    checks.append(("V_avg +-0.006", np.percentile(avg_err, 95) <= 0.006, f"95th pct {np.percentile(avg_err, 95):.4f}"))
    record("C6", "fringe visibility round trip", checks)


def _heralding_scan(phi_rad, t, rng, n_phi=1.2e5, eta=(0.25, 0.19), dwell=5.0):
    grid = np.arange(0.0, 360.0 + 1e-9, 10.0)
    state = ent.EntangledStateEstimate(G0, phi_rad, n_phi)
    c = rng.poisson(ent.coincidence_fringe(state, *eta, grid, "D") * dwell) / dwell
    s = rng.poisson(eta[0] * n_phi / 2 * dwell, len(grid)) / dwell
    i = rng.poisson(eta[1] * n_phi / 2 * dwell, len(grid)) / dwell
    pts = tuple(ent.FringePoint(a, x, y, z, math.sqrt(max(x, 1.0) / dwell)) for a, x, y, z in zip(grid, c, s, i))
    return ent.FringeDataset("D", pts, t)


def test_c7_phase_series():
    rng = np.random.default_rng(0)
    truth = 90.0 + np.concatenate([[0.0], np.cumsum(rng.normal(0.0, 1.0, 142))])
    result = ent.extract_phase_series([_heralding_scan(math.radians(p), 600.0 * k, rng) for k, p in enumerate(truth)])
    rec = np.array([e.phi_deg for e in result.estimates])
    rms = math.sqrt(np.mean((rec - truth) ** 2))
    slope, _ = stab.powerlaw_slope(stab.allan_curve(result.to_series()))
    const = stab.allan_curve(stab.PhaseSeries(600.0, (30.0,) * 143))
    checks = [
        ("143-scan RMS < 0.5 deg", rms < 0.5, f"{rms:.3f} deg"),
        ("Allan slope in [0.35, 0.65]", 0.35 <= slope <= 0.65, f"{slope:.3f}"),
        ("constant phase -> zero curve", all(s == 0.0 for _, s in const), "nonzero point"),
    ]
    record("C7", "phase-series extraction and Allan slope", checks)


def test_c8_oracle_suite():
    rng = np.random.default_rng(8)
    start = time.perf_counter()

    worst_eff = 0.0
    for _ in range(200):
        n_o, n_e = rng.uniform(1.3, 2.4, 2)
        d_o, d_e = rng.uniform(-2e-5, 2e-5, 2)
        th = rng.uniform(0.0, 90.0)
        numeric = richardson_derivative(lambda t: bf.effective_index(n_o + d_o * t, n_e + d_e * t, th), 0.0, 5.0, levels=3)
        analytic = bf.effective_thermo_optic(n_o, n_e, d_o, d_e, th)
        worst_eff = max(worst_eff, abs(analytic - numeric) / (abs(d_o) + abs(d_e)))

    h, v = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    worst_fringe = 0.0
    for _ in range(200):
        g, phi, th = rng.uniform(0, 1), rng.uniform(-math.pi, math.pi), rng.uniform(0, 360)
        basis = rng.choice(list(ent.BASIS_ANGLES))
        beta = math.radians(ent.BASIS_ANGLES[basis])
        psi = g * np.kron(h, h) + math.sqrt(1 - g * g) * np.exp(1j * phi) * np.kron(v, v)
        m = np.kron([math.cos(math.radians(th)), math.sin(math.radians(th))], [math.cos(beta), math.sin(beta)])
        got = ent.coincidence_fringe(ent.EntangledStateEstimate(g, phi, 1.0), 1.0, 1.0, th, basis)
        worst_fringe = max(worst_fringe, abs(got - abs(np.vdot(m, psi)) ** 2))

    worst_allan = 0.0
    for _ in range(30):
        n = int(rng.integers(3, 51))
        phi = rng.normal(0, 10, n)
        series = stab.PhaseSeries(1.0, tuple(phi))
        for lag in range(1, n):
            naive = math.sqrt(sum((phi[i + lag] - phi[i]) ** 2 for i in range(n - lag)) / (2 * (n - lag)))
            worst_allan = max(worst_allan, abs(stab.allan_deviation(series, lag) - naive) / max(naive, 1e-300))

    worst_overlap = 0.0
    for k in range(100):
        w = rng.uniform(0.3, 2.0)
        d = rng.uniform(-1.5, 1.5) * w
        f = lambda x: (4 / (math.pi * w * w)) ** 0.25 * math.exp(-2 * x * x / (w * w))
        lim = abs(d) + 8 * w
        one, _ = integrate.quad(lambda x: f(x) * f(x - d), -lim, lim, epsabs=1e-13, epsrel=1e-12)
        worst_overlap = max(worst_overlap, abs(ifm.gaussian_overlap_temporal(d, w) - one))
        if k < 20:
            two, _ = integrate.dblquad(lambda y, x: f(x) * f(x - d) * f(y) ** 2, -lim, lim, -8 * w, 8 * w,
                                       epsabs=1e-12, epsrel=1e-11)
            worst_overlap = max(worst_overlap, abs(ifm.gaussian_overlap_spatial(d, w) - two))
    elapsed = time.perf_counter() - start

    checks = [
        ("effective dn/dT vs finite difference 1e-7", worst_eff <= 1e-7, f"{worst_eff:.1e}"),
        ("fringe vs state vector 1e-12", worst_fringe <= 1e-12, f"{worst_fringe:.1e}"),
        ("Allan vs enumeration 1e-12", worst_allan <= 1e-12, f"{worst_allan:.1e}"),
        ("overlap vs quadrature 1e-8", worst_overlap <= 1e-8, f"{worst_overlap:.1e}"),
        ("oracle runtime < 60 s", elapsed < 60.0, f"{elapsed:.1f} s"),
    ]
    record("C8", "oracle equivalence suite", checks)


if __name__ == "__main__":
    for name, fn in list(globals().items()):
        if name.startswith("test_c"):
            try:
                fn()
            except AssertionError:
                pass
