"""Allan-type phase deviation of a uniformly sampled phase record.

The estimator here is the overlapping lag-N difference

    sigma(N tau)^2 = sum_{i} (phi_{i+N} - phi_i)^2 / (2 (N_tot - N))

taken over raw phase samples.  It is not the block-averaged Allan variance
of frequency metrology: no averaging over blocks happens before the
difference, so a random-walk phase gives sigma proportional to sqrt(T) and
white phase noise gives a flat curve.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import DataFormatError, GapError, RangeError

PHASE_HEADER = ("timestamp_s", "gamma", "phi_deg", "sigma_gamma", "sigma_phi_deg", "converged")
CURVE_HEADER = ("t_seconds", "sigma_deg")


@dataclass(frozen=True)
class PhaseSeries:
    """Phase samples in degrees at a fixed interval ``interval_s``; ``valid`` marks usable samples."""

    interval_s: float
    phi_deg: tuple[float, ...]
    valid: tuple[bool, ...] | None = None

    def __post_init__(self):
        if not self.interval_s > 0:
            raise RangeError(f"sample interval must be positive, got {self.interval_s}")
        if self.valid is None:
            object.__setattr__(self, "valid", tuple(math.isfinite(x) for x in self.phi_deg))
        elif len(self.valid) != len(self.phi_deg):
            raise RangeError("valid flags and samples differ in length")

    @property
    def n_total(self) -> int:
        return len(self.phi_deg)

    @classmethod
    def from_timestamps(cls, timestamps, phi_deg, valid=None, rtol=0.01):
        """Build a series, checking that ``timestamps`` are uniform within ``rtol``."""
        t = np.asarray(timestamps, dtype=float)
        if len(t) < 2:
            raise RangeError("need at least two timestamps to infer the sample interval")
        steps = np.diff(t)
        interval = float(np.median(steps))
        if interval <= 0 or np.any(np.abs(steps - interval) > rtol * interval):
            raise GapError("phase samples are not uniformly spaced in time")
        return cls(interval, tuple(float(x) for x in phi_deg), None if valid is None else tuple(bool(v) for v in valid))


def allan_deviation(series: PhaseSeries, lag: int) -> float:
    """Overlapping lag-``lag`` phase deviation in degrees."""
    n_tot = series.n_total
    if n_tot < 3:
        raise RangeError(f"need at least 3 samples, got {n_tot}")
    if not 1 <= lag <= n_tot - 1:
        raise RangeError(f"lag {lag} outside [1, {n_tot - 1}]")
    used = range(n_tot) if lag <= n_tot - lag else [*range(n_tot - lag), *range(lag, n_tot)]
    bad = [i for i in used if not series.valid[i]]
    if bad:
        raise GapError(f"invalid sample at index {bad[0]} inside the lag-{lag} estimator range")
    phi = series.phi_deg
    total = math.fsum((phi[i + lag] - phi[i]) ** 2 for i in range(n_tot - lag))
    return math.sqrt(total / (2 * (n_tot - lag)))


def curve_lags(n_total: int) -> list[int]:
    """Lags 1, 2, 3, 4, 6, 8, 12, 16, ... up to n_total // 4."""
    top = n_total // 4
    lags, k = set(), 1
    while k <= top:
        lags.add(k)
        if k + k // 2 <= top:
            lags.add(k + k // 2)
        k *= 2
    return sorted(lags)


def allan_curve(series: PhaseSeries) -> list[tuple[float, float]]:
    """(integration time in s, deviation in deg) at the lags of :func:`curve_lags`."""
    if series.n_total < 8:
        raise RangeError(f"an Allan curve needs at least 8 samples, got {series.n_total}")
    return [(lag * series.interval_s, allan_deviation(series, lag)) for lag in curve_lags(series.n_total)]


def powerlaw_slope(curve) -> tuple[float, float]:
    """Log-log OLS slope of ``curve`` and its standard error.

    Points with zero deviation carry no scaling information and are dropped
    with a warning.
    """
    kept = [(t, s) for t, s in curve if s > 0]
    if len(kept) < len(curve):
        warnings.warn(f"dropped {len(curve) - len(kept)} zero-deviation point(s) from the slope fit", stacklevel=2)
    if len(kept) < 3:
        raise RangeError(f"slope fit needs at least 3 positive points, got {len(kept)}")
    t, s = np.log(np.array(kept)).T
    fit = stats.linregress(t, s)
    return float(fit.slope), float(fit.stderr)


# -- CSV ---------------------------------------------------------------------


def write_curve_csv(curve, stream):
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(CURVE_HEADER)
    for t, s in curve:
        w.writerow([repr(float(t)), repr(float(s))])


def read_phase_csv(stream) -> PhaseSeries:
    """Phase series from the per-scan CSV; non-converged rows become gaps."""
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    rows = csv.DictReader(line for line in stream if line.strip() and not line.lstrip().startswith("#"))
    missing = {"timestamp_s", "phi_deg", "converged"} - set(rows.fieldnames or ())
    if missing:
        raise DataFormatError(f"phase CSV lacks columns: {', '.join(sorted(missing))}")
    t, phi, ok = [], [], []
    for lineno, row in enumerate(rows, start=2):
        try:
            t.append(float(row["timestamp_s"]))
            phi.append(float(row["phi_deg"]) if row["phi_deg"].strip() else math.nan)
            ok.append(row["converged"].strip().lower() in ("1", "true", "yes"))
        except ValueError as exc:
            raise DataFormatError(f"phase CSV row {lineno}: {exc}") from exc
    valid = [v and math.isfinite(p) for v, p in zip(ok, phi)]
    return PhaseSeries.from_timestamps(t, phi, valid)
