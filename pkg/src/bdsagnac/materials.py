"""Refractive properties of uniaxial crystals from a versioned database file.

Wavelengths cross the public API in nanometres; the Sellmeier forms and the
thermo-optic tables are written in micrometres, as in the source literature.
The database is a TOML document (see ``data/materials.toml``) carrying a
mandatory ``schema_version``.
"""

from __future__ import annotations

import enum
import math
import os
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Mapping

import tomli_w

from .errors import DatabaseError, RangeError
from .numdiff import richardson_derivative

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SCHEMA_VERSION = 1
DB_ENV_VAR = "BDSAGNAC_DB"

# Derivative stencils reach this far from the evaluation point.
STENCIL_NM = 1.0

_FORMS = ("sellmeier", "polynomial")


class Ray(enum.Enum):
    ORDINARY = "o"
    EXTRAORDINARY = "e"


@dataclass(frozen=True)
class Dispersion:
    """Sellmeier model and thermo-optic table of one ray."""

    form: str
    coefficients: tuple[float, ...]
    thermo_optic: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if self.form not in _FORMS:
            raise DatabaseError(f"unknown Sellmeier form {self.form!r}")
        coeffs = self.coefficients
        if self.form == "sellmeier" and (len(coeffs) < 1 or len(coeffs) % 2 != 1):
            raise DatabaseError("sellmeier form needs [A, B1, C1, ...] (odd length)")
        if self.form == "polynomial" and len(coeffs) != 4:
            raise DatabaseError("polynomial form needs exactly [A, B, C, D]")
        if not all(math.isfinite(c) for c in coeffs):
            raise DatabaseError("non-finite Sellmeier coefficient")
        if not self.thermo_optic:
            raise DatabaseError("thermo-optic table is empty")
        wavelengths = [row[0] for row in self.thermo_optic]
        if any(b <= a for a, b in zip(wavelengths, wavelengths[1:])):
            raise DatabaseError("thermo-optic wavelengths must be strictly increasing")

    def n_squared(self, lam_um):
        lam2 = lam_um * lam_um
        c = self.coefficients
        if self.form == "sellmeier":
            total = 1.0 + c[0]
            for b, pole in zip(c[1::2], c[2::2]):
                total += b * lam2 / (lam2 - pole)
            return total
        a, b, pole, d = c
        return a + b / (lam2 - pole) - d * lam2

    def dn2_dlam(self, lam_um):
        """d(n^2)/d(lambda) in um^-1."""
        lam2 = lam_um * lam_um
        c = self.coefficients
        if self.form == "sellmeier":
            total = 0.0
            for b, pole in zip(c[1::2], c[2::2]):
                total += -2.0 * b * pole * lam_um / (lam2 - pole) ** 2
            return total
        _, b, pole, d = c
        return -2.0 * b * lam_um / (lam2 - pole) ** 2 - 2.0 * d * lam_um

    def dn_dT(self, lam_um):
        rows = self.thermo_optic
        if len(rows) == 1:
            return rows[0][1]
        if lam_um <= rows[0][0]:
            (x0, y0), (x1, y1) = rows[0], rows[1]
        elif lam_um >= rows[-1][0]:
            (x0, y0), (x1, y1) = rows[-2], rows[-1]
        else:
            for (x0, y0), (x1, y1) in zip(rows, rows[1:]):
                if x0 <= lam_um <= x1:
                    break
        return y0 + (y1 - y0) * (lam_um - x0) / (x1 - x0)


@dataclass(frozen=True)
class Material:
    name: str
    ordinary: Dispersion
    extraordinary: Dispersion
    alpha_parallel: float
    alpha_perpendicular: float
    valid_range_nm: tuple[float, float]
    citation: str = ""

    def __post_init__(self):
        lo, hi = self.valid_range_nm
        if not (math.isfinite(lo) and math.isfinite(hi) and 0 < lo < hi):
            raise DatabaseError(f"{self.name}: empty or invalid valid_range_nm {self.valid_range_nm}")
        if not (math.isfinite(self.alpha_parallel) and math.isfinite(self.alpha_perpendicular)):
            raise DatabaseError(f"{self.name}: non-finite thermal expansion")

    def dispersion(self, ray: Ray) -> Dispersion:
        return self.ordinary if ray is Ray.ORDINARY else self.extraordinary

    def thermal_expansion(self, theta_deg: float = 45.0) -> float:
        """Linear expansion coefficient along a direction at ``theta_deg`` to the optic axis."""
        t = math.radians(theta_deg)
        return self.alpha_parallel * math.cos(t) ** 2 + self.alpha_perpendicular * math.sin(t) ** 2

    def check_range(self, wavelength_nm: float, margin_nm: float = 0.0) -> None:
        lo, hi = self.valid_range_nm
        if not lo <= wavelength_nm <= hi:
            bound = lo if wavelength_nm < lo else hi
            raise RangeError(
                f"{self.name}: wavelength {wavelength_nm} nm outside valid range "
                f"[{lo}, {hi}] nm (bound {bound} nm)"
            )
        if not (lo + margin_nm <= wavelength_nm <= hi - margin_nm):
            raise RangeError(
                f"{self.name}: {wavelength_nm} nm is within {margin_nm} nm of the "
                f"valid range [{lo}, {hi}] nm boundary"
            )


def refractive_index(material: Material, ray: Ray, wavelength_nm: float) -> float:
    material.check_range(wavelength_nm)
    n2 = material.dispersion(ray).n_squared(wavelength_nm * 1e-3)
    if not (math.isfinite(n2) and n2 > 1.0):
        raise DatabaseError(f"{material.name}: Sellmeier gives n^2={n2} at {wavelength_nm} nm")
    return math.sqrt(n2)


def index_derivative(material: Material, ray: Ray, wavelength_nm: float, analytic: bool = True) -> float:
    """dn/d(lambda) per nanometre.

    The analytic path differentiates the tagged Sellmeier form; the numeric
    path is a Richardson-extrapolated central difference of
    :func:`refractive_index`.
    """
    material.check_range(wavelength_nm, STENCIL_NM)
    if analytic:
        lam_um = wavelength_nm * 1e-3
        disp = material.dispersion(ray)
        n = math.sqrt(disp.n_squared(lam_um))
        return disp.dn2_dlam(lam_um) / (2.0 * n) * 1e-3
    return richardson_derivative(lambda x: refractive_index(material, ray, x), wavelength_nm, 0.5, levels=4)


def group_index(material: Material, ray: Ray, wavelength_nm: float, analytic: bool = True) -> float:
    """Group index n_g = n - lambda * dn/d(lambda)."""
    n = refractive_index(material, ray, wavelength_nm)
    return n - wavelength_nm * index_derivative(material, ray, wavelength_nm, analytic)


def thermo_optic(material: Material, ray: Ray, wavelength_nm: float) -> float:
    """dn/dT per kelvin, piecewise linear in wavelength."""
    return material.dispersion(ray).dn_dT(wavelength_nm * 1e-3)


# -- database file ---------------------------------------------------------


@dataclass(frozen=True)
class MaterialDatabase:
    materials: Mapping[str, Material]
    schema_version: int = SCHEMA_VERSION
    source: str = ""

    def __getitem__(self, name: str) -> Material:
        try:
            return self.materials[name]
        except KeyError:
            known = ", ".join(sorted(self.materials))
            raise DatabaseError(f"unknown material {name!r} (known: {known})") from None

    def __contains__(self, name):
        return name in self.materials

    def names(self):
        return sorted(self.materials)


def _parse_dispersion(name, label, table):
    try:
        return Dispersion(
            form=str(table["form"]),
            coefficients=tuple(float(c) for c in table["coefficients"]),
            thermo_optic=tuple((float(w), float(v)) for w, v in table["thermo_optic"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DatabaseError(f"{name}.{label}: malformed entry ({exc})") from exc


def parse_database(text: str, source: str = "<string>") -> MaterialDatabase:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise DatabaseError(f"{source}: {exc}") from exc
    version = doc.get("schema_version")
    if version is None:
        raise DatabaseError(f"{source}: missing schema_version")
    if version != SCHEMA_VERSION:
        raise DatabaseError(f"{source}: unsupported schema_version {version!r}")
    materials = {}
    for name, entry in doc.get("materials", {}).items():
        try:
            expansion = entry["thermal_expansion"]
            lo, hi = entry["valid_range_nm"]
            materials[name] = Material(
                name=name,
                ordinary=_parse_dispersion(name, "ordinary", entry["ordinary"]),
                extraordinary=_parse_dispersion(name, "extraordinary", entry["extraordinary"]),
                alpha_parallel=float(expansion["parallel"]),
                alpha_perpendicular=float(expansion["perpendicular"]),
                valid_range_nm=(float(lo), float(hi)),
                citation=str(entry.get("citation", "")),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DatabaseError(f"{source}: material {name!r} malformed ({exc!r})") from exc
    return MaterialDatabase(materials=materials, schema_version=version, source=source)


def dumps_database(db: MaterialDatabase) -> str:
    doc = {"schema_version": db.schema_version, "materials": {}}
    for name in db.names():
        m = db[name]
        doc["materials"][name] = {
            "citation": m.citation,
            "valid_range_nm": list(m.valid_range_nm),
            "thermal_expansion": {"parallel": m.alpha_parallel, "perpendicular": m.alpha_perpendicular},
            **{
                label: {
                    "form": d.form,
                    "coefficients": list(d.coefficients),
                    "thermo_optic": [list(row) for row in d.thermo_optic],
                }
                for label, d in (("ordinary", m.ordinary), ("extraordinary", m.extraordinary))
            },
        }
    return tomli_w.dumps(doc)


def default_database_path() -> Path | None:
    env = os.environ.get(DB_ENV_VAR)
    return Path(env) if env else None


def load_database(path: str | os.PathLike | None = None) -> MaterialDatabase:
    """Load a database file; defaults to $BDSAGNAC_DB, then the bundled file."""
    if path is None:
        path = default_database_path()
    if path is None:
        text = resources.files("bdsagnac").joinpath("data/materials.toml").read_text(encoding="utf-8")
        return parse_database(text, source="bundled:materials.toml")
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DatabaseError(f"cannot read database {path}: {exc.strerror}") from exc
    return parse_database(text, source=str(path))
