"""Polarization-correlation analysis of a two-photon state a|HH> + b e^{i phi}|VV>.

Polarizer angles are in degrees; the idler analyser bases are H = 0,
V = +90, D = +45 and A = -45.  Fringes are fitted as
``a + b sin(2 theta) + c cos(2 theta)``, which is linear in (a, b, c), so
every fit here is a closed-form weighted least-squares solve.
"""

from __future__ import annotations

import csv
import io
import math
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from .errors import DataFormatError, DegenerateInputError, DomainError, IncompleteDataError
from .stability import PHASE_HEADER, PhaseSeries

BASIS_ANGLES = {"H": 0.0, "V": 90.0, "D": 45.0, "A": -45.0}
FRINGE_HEADER = ("timestamp_s", "idler_basis", "theta_deg", "n_c_cps", "n_s_cps", "n_i_cps", "sd_c", "repeats")
CANONICAL_IDLER = (0.0, 45.0)
CANONICAL_SIGNAL = (22.5, 67.5)


@dataclass(frozen=True)
class EntangledStateEstimate:
    gamma: float
    phi: float
    n_phi: float = 1.0
    sigma_gamma: float = math.nan
    sigma_phi: float = math.nan

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise DomainError(f"amplitude gamma must lie in [0, 1], got {self.gamma}")
        if not self.n_phi >= 0:
            raise DomainError(f"pair rate must be non-negative, got {self.n_phi}")
        wrapped = math.remainder(self.phi, 2 * math.pi)
        if wrapped == -math.pi:
            wrapped = math.pi
        object.__setattr__(self, "phi", wrapped)


def _basis_angle(basis) -> float:
    if isinstance(basis, str):
        try:
            return BASIS_ANGLES[basis]
        except KeyError:
            raise DomainError(f"unknown idler basis {basis!r}; expected one of H, V, D, A") from None
    return float(basis)


def projection_probability(gamma, phi, theta_deg, idler_deg):
    """|<theta, beta|Phi>|^2 for linear analysers at signal angle theta and idler angle beta."""
    t, b = np.radians(theta_deg), np.radians(idler_deg)
    g2 = gamma * gamma
    cross = gamma * math.sqrt(max(1.0 - g2, 0.0)) * math.cos(phi)
    ct, st, cb, sb = np.cos(t), np.sin(t), np.cos(b), np.sin(b)
    return g2 * ct**2 * cb**2 + (1.0 - g2) * st**2 * sb**2 + 2.0 * cross * ct * st * cb * sb


def coincidence_fringe(state: EntangledStateEstimate, eta_s, eta_i, theta_deg, idler_basis="D"):
    """Coincidence rate in cps for a signal polarizer at ``theta_deg``."""
    if not (0 < eta_s <= 1 and 0 < eta_i <= 1):
        raise DomainError(f"efficiencies must lie in (0, 1], got {eta_s}, {eta_i}")
    p = projection_probability(state.gamma, state.phi, theta_deg, _basis_angle(idler_basis))
    return state.n_phi * eta_s * eta_i * p


def approx_fringe(d_gamma, d_phi, theta_deg):
    """Small-imbalance form (1/4)[1 + sin(2 theta + asin(2 sqrt2 d_gamma)) cos d_phi], diagonal idler."""
    arg = 2.0 * math.sqrt(2.0) * d_gamma
    if abs(arg) > 1.0:
        raise DomainError(f"|2*sqrt(2)*d_gamma| = {abs(arg):.4g} exceeds 1")
    return 0.25 * (1.0 + np.sin(2.0 * np.radians(theta_deg) + math.asin(arg)) * math.cos(d_phi))


def visibility_fringe(peak_cps, visibility, theta_deg, idler_basis):
    """Coincidences of a visibility-limited Phi+ state: (peak/2)(1 + V cos 2(theta - beta))."""
    beta = _basis_angle(idler_basis)
    return 0.5 * peak_cps * (1.0 + visibility * np.cos(2.0 * np.radians(np.asarray(theta_deg) - beta)))


# -- fringe data and fitting ---------------------------------------------------


@dataclass(frozen=True)
class FringePoint:
    theta_deg: float
    n_c: float
    n_s: float = math.nan
    n_i: float = math.nan
    sd_c: float = math.nan
    repeats: int = 1


@dataclass(frozen=True)
class FringeDataset:
    idler_basis: str
    points: tuple[FringePoint, ...]
    timestamp_s: float = 0.0

    def __post_init__(self):
        _basis_angle(self.idler_basis)
        for pt in self.points:
            if pt.n_c < 0 or pt.n_s < 0 or pt.n_i < 0:
                raise DomainError("fringe counts must be non-negative")

    def arrays(self):
        theta = np.array([p.theta_deg for p in self.points], dtype=float)
        n_c = np.array([p.n_c for p in self.points], dtype=float)
        sd = np.array([p.sd_c for p in self.points], dtype=float)
        # missing spread: Poisson over a 1 s gate, floored at one count
        sd = np.where(np.isfinite(sd) & (sd > 0), sd, np.sqrt(np.maximum(n_c, 1.0)))
        return theta, n_c, sd

    def check_coverage(self):
        theta = [p.theta_deg for p in self.points]
        if len(theta) < 8:
            raise DegenerateInputError(f"fringe needs at least 8 angles, got {len(theta)}")
        if max(theta) - min(theta) < 180.0:
            raise DegenerateInputError(f"fringe angles span {max(theta) - min(theta):g} deg, need 180")


@dataclass
class FringeFit:
    """Weighted fit of a + b sin 2theta + c cos 2theta."""

    coefficients: np.ndarray
    covariance: np.ndarray
    idler_basis: str = "D"
    chi2: float = math.nan
    dof: int = 0

    @property
    def mean(self):
        return float(self.coefficients[0])

    @property
    def amplitude(self):
        return float(math.hypot(self.coefficients[1], self.coefficients[2]))

    @property
    def visibility(self):
        return self.amplitude / self.mean

    @property
    def phase_offset_deg(self):
        """Angle shift s in a + A sin(2(theta + s))."""
        _, b, c = self.coefficients
        return math.degrees(math.atan2(c, b)) / 2.0

    def _gradient(self, fn):
        a0 = np.array(self.coefficients, dtype=float)
        grad = np.empty(3)
        for k in range(3):
            h = 1e-7 * max(abs(a0[k]), 1e-3)
            up, dn = a0.copy(), a0.copy()
            up[k] += h
            dn[k] -= h
            grad[k] = (fn(up) - fn(dn)) / (2 * h)
        return grad

    @property
    def sigma_visibility(self):
        g = self._gradient(lambda x: math.hypot(x[1], x[2]) / x[0])
        return float(math.sqrt(max(g @ self.covariance @ g, 0.0)))

    def evaluate(self, theta_deg):
        t = 2.0 * np.radians(theta_deg)
        a, b, c = self.coefficients
        return a + b * np.sin(t) + c * np.cos(t)

    def to_dict(self):
        sig = np.sqrt(np.clip(np.diag(self.covariance), 0, None))
        return {
            "idler_basis": self.idler_basis,
            "mean_cps": self.mean,
            "amplitude_cps": self.amplitude,
            "phase_offset_deg": self.phase_offset_deg,
            "visibility": self.visibility,
            "sigma_visibility": self.sigma_visibility,
            "coefficients": [float(x) for x in self.coefficients],
            "sigma_coefficients": [float(x) for x in sig],
            "chi2": self.chi2,
            "dof": self.dof,
        }


def _linear_fit(theta_deg, values, sigma):
    t = 2.0 * np.radians(theta_deg)
    design = np.column_stack([np.ones_like(t), np.sin(t), np.cos(t)])
    w = 1.0 / sigma
    a = design * w[:, None]
    if np.linalg.matrix_rank(a) < 3:
        raise DegenerateInputError("fringe angles do not determine a sinusoid (rank-deficient design)")
    coef, *_ = np.linalg.lstsq(a, values * w, rcond=None)
    cov = np.linalg.inv(a.T @ a)
    resid = (values - design @ coef) * w
    return coef, cov, float(resid @ resid)


def fit_fringe(data: FringeDataset) -> FringeFit:
    data.check_coverage()
    theta, n_c, sd = data.arrays()
    coef, cov, chi2 = _linear_fit(theta, n_c, sd)
    if not coef[0] > 0:
        raise DegenerateInputError("fitted mean coincidence rate is not positive")
    return FringeFit(coef, cov, data.idler_basis, chi2, len(theta) - 3)


def visibility(max_count, min_count):
    """(max - min)/(max + min) from raw extreme counts."""
    if max_count <= 0:
        raise DegenerateInputError("visibility undefined when the maximum count is zero")
    if not max_count >= min_count >= 0:
        raise DomainError(f"need max >= min >= 0, got max={max_count}, min={min_count}")
    return (max_count - min_count) / (max_count + min_count)


def average_visibility(fits):
    return float(np.mean([f.visibility for f in fits]))


def symmetric_heralding(n_s, n_i, n_c):
    """N_C / sqrt(N_S N_I)."""
    if n_s <= 0 or n_i <= 0:
        raise DegenerateInputError(f"symmetric heralding needs positive singles (N_S={n_s}, N_I={n_i})")
    return n_c / math.sqrt(n_s * n_i)


# -- CHSH ----------------------------------------------------------------------


def _basis_for(angle_deg):
    wrapped = (angle_deg + 90.0) % 180.0 - 90.0
    for name, ang in BASIS_ANGLES.items():
        if math.isclose(wrapped, (ang + 90.0) % 180.0 - 90.0, abs_tol=1e-9):
            return name
    raise IncompleteDataError(f"no idler basis at {angle_deg} deg; CHSH idler settings must be H/V/D/A angles")


def _correlator(counts):
    """E from the four analyser combinations (++, --, +-, -+)."""
    pp, mm, pm, mp = counts
    total = pp + mm + pm + mp
    if total <= 0:
        raise DegenerateInputError("no coincidences at a CHSH setting pair")
    return (pp + mm - pm - mp) / total


def _chsh_value(corr):
    e_ab, e_abp, e_apb, e_apbp = corr
    return abs(e_ab - e_abp + e_apb + e_apbp)


def chsh_s(
    fringes,
    idler_settings=CANONICAL_IDLER,
    signal_settings=CANONICAL_SIGNAL,
    raw_counts: bool = False,
):
    """CHSH S = |E(a,b) - E(a,b') + E(a',b) + E(a',b')| and its 1-sigma spread.

    ``fringes`` maps idler basis name to a :class:`FringeFit` (default) or
    to a :class:`FringeDataset` when ``raw_counts`` is set, in which case the
    counts measured exactly at the analyser angles are used.  a, a' are idler
    settings; b, b' are signal polarizer angles.
    """
    pairs = []
    for a in idler_settings:
        for b in signal_settings:
            pairs.append(
                [
                    (_basis_for(a), b),
                    (_basis_for(a + 90.0), b + 90.0),
                    (_basis_for(a), b + 90.0),
                    (_basis_for(a + 90.0), b),
                ]
            )
    needed = {basis for combo in pairs for basis, _ in combo}
    missing = needed - set(fringes)
    if missing:
        raise IncompleteDataError(f"CHSH needs idler bases {sorted(needed)}; missing {sorted(missing)}")

    if raw_counts:
        lookup = {}
        for basis in needed:
            ds = fringes[basis]
            for pt in ds.points:
                lookup[(basis, round(pt.theta_deg % 180.0, 6))] = pt
        values, sigmas = [], []
        for combo in pairs:
            for basis, theta in combo:
                pt = lookup.get((basis, round(theta % 180.0, 6)))
                if pt is None:
                    raise IncompleteDataError(f"raw CHSH needs basis {basis} at theta = {theta % 180.0:g} deg")
                values.append(pt.n_c)
                sigmas.append(pt.sd_c if math.isfinite(pt.sd_c) and pt.sd_c > 0 else math.sqrt(max(pt.n_c, 1.0)))
        values = np.array(values)

        def s_of(v):
            return _chsh_value([_correlator(v[4 * k : 4 * k + 4]) for k in range(4)])

        s = s_of(values)
        grad = np.empty(len(values))
        for k in range(len(values)):
            h = 1e-6 * max(values[k], 1.0)
            up, dn = values.copy(), values.copy()
            up[k] += h
            dn[k] -= h
            grad[k] = (s_of(up) - s_of(dn)) / (2 * h)
        return s, float(math.sqrt(np.sum((grad * np.array(sigmas)) ** 2)))

    order = sorted(needed)
    coef = np.concatenate([np.asarray(fringes[b].coefficients, dtype=float) for b in order])
    slot = {b: 3 * i for i, b in enumerate(order)}

    def s_of(x):
        corr = []
        for combo in pairs:
            counts = []
            for basis, theta in combo:
                a, bb, c = x[slot[basis] : slot[basis] + 3]
                t = 2.0 * math.radians(theta)
                counts.append(a + bb * math.sin(t) + c * math.cos(t))
            corr.append(_correlator(counts))
        return _chsh_value(corr)

    s = s_of(coef)
    grad = np.empty(len(coef))
    for k in range(len(coef)):
        h = 1e-7 * max(abs(coef[k]), 1e-3)
        up, dn = coef.copy(), coef.copy()
        up[k] += h
        dn[k] -= h
        grad[k] = (s_of(up) - s_of(dn)) / (2 * h)
    var = 0.0
    for b in order:
        g = grad[slot[b] : slot[b] + 3]
        var += float(g @ fringes[b].covariance @ g)
    return s, math.sqrt(max(var, 0.0))


# -- phase extraction ----------------------------------------------------------


@dataclass
class PhaseEstimate:
    timestamp_s: float
    gamma: float
    phi_deg: float
    sigma_gamma: float
    sigma_phi_deg: float
    converged: bool
    scale: float = math.nan


def heralding_fit(data: FringeDataset):
    """(gamma, phi in [0, pi], scale, sigma_gamma, sigma_phi) from one diagonal-basis scan.

    With constant singles the symmetric heralding efficiency is
    H(theta) = K [gamma^2 cos^2 + (1 - gamma^2) sin^2 + gamma sqrt(1-gamma^2) sin 2theta cos phi],
    K = sqrt(eta_S eta_I).  Writing it as a + b sin 2theta + c cos 2theta gives
    K = 2a, 2 gamma^2 - 1 = c/a and 2 gamma sqrt(1-gamma^2) cos phi = b/a; only
    cos phi is observable, so phi is returned in [0, pi].
    """
    if _basis_angle(data.idler_basis) != BASIS_ANGLES["D"]:
        raise DegenerateInputError("phase extraction needs the diagonal idler basis")
    data.check_coverage()
    theta = np.array([p.theta_deg for p in data.points], dtype=float)
    n_c = np.array([p.n_c for p in data.points], dtype=float)
    n_s = np.array([p.n_s for p in data.points], dtype=float)
    n_i = np.array([p.n_i for p in data.points], dtype=float)
    if not (np.all(n_s > 0) and np.all(n_i > 0)):
        raise DegenerateInputError("symmetric heralding needs positive singles at every angle")
    _, _, sd_c = data.arrays()
    norm = np.sqrt(n_s * n_i)
    coef, cov, _ = _linear_fit(theta, n_c / norm, sd_c / norm)

    def params(x):
        a, b, c = x
        u = c / a
        if not (a > 0 and abs(u) < 1):
            raise DegenerateInputError("fitted heralding fringe lies outside the pure-state model")
        gamma = math.sqrt((1 + u) / 2)
        cos_phi = b / (a * math.sqrt(1 - u * u))
        return gamma, math.acos(min(max(cos_phi, -1.0), 1.0)), 2 * a, abs(cos_phi) >= 1

    gamma, phi, scale, clipped = params(coef)
    sig = []
    for idx in (0, 1):
        grad = np.empty(3)
        for k in range(3):
            h = 1e-7 * max(abs(coef[k]), 1e-6)
            up, dn = coef.copy(), coef.copy()
            up[k] += h
            dn[k] -= h
            grad[k] = (params(up)[idx] - params(dn)[idx]) / (2 * h)
        sig.append(math.sqrt(max(grad @ cov @ grad, 0.0)))
    sigma_phi = math.nan if clipped else sig[1]
    return gamma, phi, scale, sig[0], sigma_phi


def _nearest_branch(phi, previous):
    """Pick among +-phi + 2 pi k the value closest to ``previous``."""
    best = None
    for cand in (phi, -phi):
        k = round((previous - cand) / (2 * math.pi))
        value = cand + 2 * math.pi * k
        if best is None or abs(value - previous) < abs(best - previous):
            best = value
    return best


@dataclass
class PhaseExtraction:
    estimates: list[PhaseEstimate] = field(default_factory=list)

    def to_series(self, rtol=0.01) -> PhaseSeries:
        return PhaseSeries.from_timestamps(
            [e.timestamp_s for e in self.estimates],
            [e.phi_deg for e in self.estimates],
            [e.converged for e in self.estimates],
            rtol=rtol,
        )


def extract_phase_series(scans) -> PhaseExtraction:
    """Per-scan (gamma, phi) with phi continued across scans by the nearest branch.

    A scan that cannot be fitted is kept as a non-converged row; the next
    good scan restarts the continuation from its principal value.
    """
    out = PhaseExtraction()
    previous = None
    for scan in scans:
        try:
            gamma, phi, scale, s_gamma, s_phi = heralding_fit(scan)
        except (DegenerateInputError, DomainError, np.linalg.LinAlgError):
            out.estimates.append(PhaseEstimate(scan.timestamp_s, math.nan, math.nan, math.nan, math.nan, False))
            previous = None
            continue
        phi_c = phi if previous is None else _nearest_branch(phi, previous)
        previous = phi_c
        out.estimates.append(
            PhaseEstimate(scan.timestamp_s, gamma, math.degrees(phi_c), s_gamma, math.degrees(s_phi), True, scale)
        )
    return out


# -- CSV ---------------------------------------------------------------------


def _num(x):
    return repr(float(x))


def write_phase_csv(extraction: PhaseExtraction, stream):
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(PHASE_HEADER)
    for e in extraction.estimates:
        w.writerow(
            [_num(e.timestamp_s), _num(e.gamma), _num(e.phi_deg), _num(e.sigma_gamma),
             _num(e.sigma_phi_deg), int(e.converged)]
        )


def write_fringe_csv(datasets, stream):
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(FRINGE_HEADER)
    for ds in datasets:
        for p in ds.points:
            w.writerow(
                [_num(ds.timestamp_s), ds.idler_basis, _num(p.theta_deg), _num(p.n_c), _num(p.n_s),
                 _num(p.n_i), _num(p.sd_c), p.repeats]
            )


def read_fringe_csv(stream) -> list[FringeDataset]:
    """Group rows by (timestamp, idler basis) in file order."""
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    rows = csv.DictReader(line for line in stream if line.strip() and not line.lstrip().startswith("#"))
    missing = set(FRINGE_HEADER) - set(rows.fieldnames or ())
    if missing:
        raise DataFormatError(f"fringe CSV lacks columns: {', '.join(sorted(missing))}")
    groups = OrderedDict()
    for lineno, row in enumerate(rows, start=2):
        try:
            basis = row["idler_basis"].strip()
            _basis_angle(basis)

            def opt(key):
                return float(row[key]) if row[key].strip() else math.nan

            pt = FringePoint(
                float(row["theta_deg"]), float(row["n_c_cps"]), opt("n_s_cps"), opt("n_i_cps"),
                opt("sd_c"), int(row["repeats"] or 1),
            )
            key = (float(row["timestamp_s"]), basis)
        except (ValueError, DomainError) as exc:
            raise DataFormatError(f"fringe CSV row {lineno}: {exc}") from exc
        groups.setdefault(key, []).append(pt)
    try:
        return [FringeDataset(b, tuple(pts), t) for (t, b), pts in groups.items()]
    except DomainError as exc:
        raise DataFormatError(f"fringe CSV: {exc}") from exc


def by_basis(datasets):
    """Map basis name to dataset; later datasets of the same basis replace earlier ones."""
    return {ds.idler_basis: ds for ds in datasets}
