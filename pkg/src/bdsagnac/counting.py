"""Single and coincidence rates of a pulsed four-wave-mixing pair source.

Photons reach each detector from pair generation (quadratic in pump power),
incoherent Raman scattering (linear) and dark counts (constant).  The
coincidence rate adds the accidental products of every uncorrelated
combination within the coincidence window.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import ConvergenceError, DataFormatError, DegenerateInputError, DomainError

SCAN_HEADER = ("power_mw", "n_s_cps", "n_i_cps", "n_c_cps", "sd_s", "sd_i", "sd_c", "repeats")
FIT_NAMES = ("n_pair", "n_raman_s", "n_raman_i", "eta_s", "eta_i")
SERIES_5 = ("n_s", "n_i", "n_c", "h_s", "h_i")
SERIES_3 = SERIES_5[:3]


@dataclass(frozen=True)
class CountingParams:
    """Source and detector parameters.

    Rates in cps (pair term per mW^2, Raman per mW), coincidence window in s.
    """

    n_pair: float
    n_raman_s: float
    n_raman_i: float
    eta_s: float
    eta_i: float
    dark_s: float = 0.0
    dark_i: float = 0.0
    window_s: float = 0.6e-9

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not (math.isfinite(value) and value >= 0):
                raise DomainError(f"{name} must be finite and non-negative, got {value}")
        if self.eta_s > 1 or self.eta_i > 1:
            raise DomainError(f"efficiencies must not exceed 1 (eta_s={self.eta_s}, eta_i={self.eta_i})")

    def fitted(self) -> tuple[float, ...]:
        return tuple(getattr(self, k) for k in FIT_NAMES)

    def with_fitted(self, values) -> "CountingParams":
        return replace(self, **{k: float(v) for k, v in zip(FIT_NAMES, values)})


REFERENCE_FIT = CountingParams(149.71, 18.61, 450.39, 0.25, 0.19)


@dataclass(frozen=True)
class PowerScanPoint:
    power_mw: float
    n_s: float
    n_i: float
    n_c: float
    sd_s: float = math.nan
    sd_i: float = math.nan
    sd_c: float = math.nan
    repeats: int = 1

    def __post_init__(self):
        if not self.power_mw >= 0:
            raise DomainError(f"pump power must be non-negative, got {self.power_mw}")
        if min(self.n_s, self.n_i, self.n_c) < 0:
            raise DomainError("count rates must be non-negative")
        for sd in (self.sd_s, self.sd_i, self.sd_c):
            if sd < 0:
                raise DomainError("standard deviations must be non-negative")


def _rates(x, p, dark_s, dark_i, window):
    # x = (n_pair, n_raman_s, n_raman_i, eta_s, eta_i); works on complex and array input
    n_pair, r_s, r_i, eta_s, eta_i = x
    pair = n_pair * p * p
    noise_s = dark_s + eta_s * r_s * p
    noise_i = dark_i + eta_i * r_i * p
    n_s = eta_s * pair + noise_s
    n_i = eta_i * pair + noise_i
    n_c = (
        eta_s * eta_i * pair
        + eta_s * pair * noise_i * window
        + eta_i * pair * noise_s * window
        + noise_i * noise_s * window
    )
    return n_s, n_i, n_c


def predict_rates(params: CountingParams, power_mw):
    """(N_S, N_I, N_C) in cps at pump power ``power_mw`` (scalar or array)."""
    p = np.asarray(power_mw, dtype=float) if np.ndim(power_mw) else float(power_mw)
    return _rates(params.fitted(), p, params.dark_s, params.dark_i, params.window_s)


def heralding(n_s, n_i, n_c):
    """(H_S, H_I) = (N_C/N_I, N_C/N_S)."""
    if n_s <= 0 or n_i <= 0:
        raise DegenerateInputError(f"heralding needs positive singles (N_S={n_s}, N_I={n_i})")
    return n_c / n_i, n_c / n_s


def klyshko_pair_rate(n_s, n_i, n_c):
    if n_c <= 0:
        raise DegenerateInputError("pair rate undefined for zero coincidences")
    return n_s * n_i / n_c


def per_pulse_brightness(n_pair, rep_rate_hz):
    """Pairs per pulse per mW^2."""
    if not rep_rate_hz > 0:
        raise DomainError(f"repetition rate must be positive, got {rep_rate_hz}")
    return n_pair / rep_rate_hz


def raman_crossover_power(params: CountingParams) -> float:
    """Pump power (mW) below which idler Raman counts exceed idler pair counts."""
    if params.n_pair <= 0:
        raise DegenerateInputError("crossover undefined without pair generation")
    return params.n_raman_i / params.n_pair


def simulate_counts(params: CountingParams, power_mw: float, duration_s: float, seed: int) -> PowerScanPoint:
    """One acquisition of Poisson counts, reported as rates in cps."""
    if not duration_s > 0:
        raise DomainError(f"duration must be positive, got {duration_s}")
    rng = np.random.default_rng(seed)
    means = np.array(predict_rates(params, power_mw)) * duration_s
    counts = rng.poisson(means)
    n_s, n_i, n_c = counts / duration_s
    sd = np.sqrt(counts) / duration_s
    return PowerScanPoint(power_mw, n_s, n_i, n_c, sd[0], sd[1], sd[2], 1)


# -- fitting ---------------------------------------------------------------


@dataclass
class FitResult:
    params: CountingParams
    covariance: np.ndarray
    converged: bool
    iterations: int
    cost: float
    series: tuple[str, ...]
    residuals: dict = field(default_factory=dict)
    log: list = field(default_factory=list)

    @property
    def uncertainties(self):
        return dict(zip(FIT_NAMES, np.sqrt(np.clip(np.diag(self.covariance), 0, None))))

    def to_dict(self):
        return {
            "parameters": dict(zip(FIT_NAMES, self.params.fitted())),
            "uncertainties": {k: float(v) for k, v in self.uncertainties.items()},
            "dark_s_cps": self.params.dark_s,
            "dark_i_cps": self.params.dark_i,
            "window_s": self.params.window_s,
            "series": list(self.series),
            "residuals": self.residuals,
            "convergence": {
                "converged": self.converged,
                "iterations": self.iterations,
                "cost": self.cost,
            },
        }


def _observations(scan, series):
    p = np.array([pt.power_mw for pt in scan])
    n = {k: np.array([getattr(pt, k) for pt in scan]) for k in ("n_s", "n_i", "n_c")}
    sd = {}
    for k, attr in (("n_s", "sd_s"), ("n_i", "sd_i"), ("n_c", "sd_c")):
        given = np.array([getattr(pt, attr) for pt in scan])
        poisson = np.sqrt(n[k])
        sd[k] = np.where(np.isfinite(given) & (given > 0), given, poisson)
    if np.any(n["n_s"] <= 0) or np.any(n["n_i"] <= 0):
        raise DegenerateInputError("every scan point needs non-zero singles")
    if np.any(sd["n_c"] <= 0):
        raise DegenerateInputError("zero coincidences with no reported spread; cannot weight")
    obs = {k: n[k] for k in SERIES_3}
    if "h_s" in series:
        obs["h_s"] = n["n_c"] / n["n_i"]
        obs["h_i"] = n["n_c"] / n["n_s"]
        rel_c = sd["n_c"] / np.where(n["n_c"] > 0, n["n_c"], 1.0)
        sd["h_s"] = obs["h_s"] * np.hypot(rel_c, sd["n_i"] / n["n_i"])
        sd["h_i"] = obs["h_i"] * np.hypot(rel_c, sd["n_s"] / n["n_s"])
        # zero-coincidence points carry an absolute spread instead
        sd["h_s"] = np.where(n["n_c"] > 0, sd["h_s"], sd["n_c"] / n["n_i"])
        sd["h_i"] = np.where(n["n_c"] > 0, sd["h_i"], sd["n_c"] / n["n_s"])
    if any(np.any(sd[k] <= 0) for k in series):
        raise DegenerateInputError("a series has zero spread and zero counts; cannot weight")
    return p, obs, {k: sd[k] for k in series}


def _initial_guess(p, obs, dark_s, dark_i):
    """Closed-form start: quadratic fits of the singles, P^2 fit of the coincidences."""
    design = np.column_stack([p * p, p])
    (a_s, b_s), *_ = np.linalg.lstsq(design, obs["n_s"] - dark_s, rcond=None)
    (a_i, b_i), *_ = np.linalg.lstsq(design, obs["n_i"] - dark_i, rcond=None)
    c = float(np.dot(p * p, obs["n_c"]) / np.dot(p * p, p * p))
    if min(a_s, a_i, c) <= 0:
        return np.array([1.0, 1.0, 1.0, 0.5, 0.5])
    eta_s = min(c / a_i, 1.0)
    eta_i = min(c / a_s, 1.0)
    return np.array([a_s / eta_s, max(b_s, 0) / eta_s, max(b_i, 0) / eta_i, eta_s, eta_i])


def _project(x):
    x = np.maximum(x, 0.0)
    x[3:] = np.minimum(x[3:], 1.0)
    return x


def fit_counting_model(
    scan,
    window_s: float = 0.6e-9,
    dark_s: float = 0.0,
    dark_i: float = 0.0,
    init: CountingParams | None = None,
    derived_series: bool = True,
    max_iterations: int = 200,
    rtol: float = 1e-10,
) -> FitResult:
    """Weighted joint least-squares fit of the five source parameters.

    Dark rates and the coincidence window are held fixed.  With
    ``derived_series`` the heralding ratios N_C/N_I and N_C/N_S join the
    objective alongside the three count series.  Parameters stay
    non-negative and efficiencies stay at or below 1 by projection after
    each damped Gauss-Newton step.  Raises :class:`ConvergenceError` (with
    ``best``) after ``max_iterations``.
    """
    scan = list(scan)
    if len({pt.power_mw for pt in scan}) < 5:
        raise DegenerateInputError("under-determined: need at least 5 distinct pump powers for 5 parameters")
    series = SERIES_5 if derived_series else SERIES_3
    p, obs, sd = _observations(scan, series)
    template = CountingParams(1.0, 1.0, 1.0, 0.5, 0.5, dark_s, dark_i, window_s)

    def residual(x):
        n_s, n_i, n_c = _rates(x, p, dark_s, dark_i, window_s)
        model = {"n_s": n_s, "n_i": n_i, "n_c": n_c}
        if derived_series:
            model["h_s"] = n_c / n_i
            model["h_i"] = n_c / n_s
        return np.concatenate([(model[k] - obs[k]) / sd[k] for k in series])

    def jacobian(x):
        # complex step: exact to rounding for this analytic model
        cols = []
        for j in range(len(x)):
            h = 1e-20 * max(abs(x[j]), 1.0)
            xc = x.astype(complex)
            xc[j] += 1j * h
            cols.append(residual(xc).imag / h)
        return np.column_stack(cols)

    x = _project(np.array(init.fitted(), dtype=float) if init else _initial_guess(p, obs, dark_s, dark_i))
    r = residual(x)
    cost = 0.5 * float(r @ r)
    damping = 1e-3
    log = [{"iteration": 0, "cost": cost, "damping": damping, "params": x.tolist()}]
    converged = False
    iteration = 0
    for iteration in range(1, max_iterations + 1):
        jac = jacobian(x)
        a = jac.T @ jac
        g = jac.T @ r
        scale = np.where(np.diag(a) > 0, np.diag(a), 1.0)
        while True:
            try:
                step = np.linalg.solve(a + damping * np.diag(scale), -g)
            except np.linalg.LinAlgError:
                step = np.zeros_like(x)
            x_new = _project(x + step)
            r_new = residual(x_new)
            cost_new = 0.5 * float(r_new @ r_new)
            if cost_new <= cost:
                break
            damping *= 10.0
            if damping > 1e16:
                break
        moved = np.abs(x_new - x)
        if cost_new <= cost:
            x, r = x_new, r_new
            reduction = cost - cost_new
            cost = cost_new
            damping = max(damping / 10.0, 1e-12)
            log.append({"iteration": iteration, "cost": cost, "damping": damping, "params": x.tolist()})
            if np.all(moved <= rtol * (np.abs(x) + rtol)) or reduction <= 1e-15 * max(cost, 1e-300):
                converged = True
                break
        else:
            # no descent direction left at machine precision
            converged = True
            break
    best = template.with_fitted(x)
    if not converged:
        raise ConvergenceError(f"counting fit did not converge in {max_iterations} iterations", best=best)

    jac = jacobian(x)
    covariance = np.linalg.pinv(jac.T @ jac)
    per_series = {}
    offset = 0
    for k in series:
        chunk = r[offset : offset + len(p)]
        offset += len(p)
        per_series[k] = {
            "chi2": float(chunk @ chunk),
            "rms_normalized": float(np.sqrt(np.mean(chunk**2))),
            "normalized": chunk.tolist(),
        }
    return FitResult(best, covariance, converged, iteration, cost, series, per_series, log)


# -- CSV ---------------------------------------------------------------------


def _fmt(x):
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


def write_scan_csv(points, stream):
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(SCAN_HEADER)
    for pt in points:
        w.writerow(
            [_fmt(pt.power_mw), _fmt(pt.n_s), _fmt(pt.n_i), _fmt(pt.n_c),
             _fmt(pt.sd_s), _fmt(pt.sd_i), _fmt(pt.sd_c), pt.repeats]
        )


def read_scan_csv(stream) -> list[PowerScanPoint]:
    """Parse a power-scan CSV; '#' lines are comments, empty sd fields mean Poisson weights."""
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    rows = csv.DictReader(line for line in stream if line.strip() and not line.lstrip().startswith("#"))
    missing = set(SCAN_HEADER) - set(rows.fieldnames or ())
    if missing:
        raise DataFormatError(f"power-scan CSV lacks columns: {', '.join(sorted(missing))}")
    points = []
    for lineno, row in enumerate(rows, start=2):
        try:
            sd = [float(row[k]) if row[k].strip() else math.nan for k in ("sd_s", "sd_i", "sd_c")]
            points.append(
                PowerScanPoint(
                    float(row["power_mw"]), float(row["n_s_cps"]), float(row["n_i_cps"]),
                    float(row["n_c_cps"]), *sd, int(row["repeats"] or 1),
                )
            )
        except (TypeError, ValueError) as exc:
            raise DataFormatError(f"power-scan CSV row {lineno}: {exc}") from exc
    return points
