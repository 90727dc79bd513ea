"""Three-line Voigt absorption model, its least-squares fit and the atomic
number density recovered from the fitted parameters.

Fit parameters:

* ``k1``: optical-depth scale (1/MHz)
* ``k2``: Doppler width sigma (MHz)
* ``k3``: half Lorentz width Gamma/2 (MHz)
* ``k4``, ``k5``: affine correction ``T' = k4 T + k5``

The detuning axis and all widths share one unit (MHz); the density
conversion treats it as an angular-frequency axis.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import constants as sc
from scipy import integrate, optimize
from scipy.special import wofz

SQRT_2PI = math.sqrt(2.0 * math.pi)
MHZ_TO_RAD_S = 2.0 * math.pi * 1e6
PARAM_NAMES = ("k1", "k2", "k3", "k4", "k5")


class QuadratureError(RuntimeError):
    pass


class FitError(RuntimeError):
    """The fit did not converge; carries the best parameters found."""

    def __init__(self, message, best=None, residual_trace=None):
        super().__init__(message)
        self.best = best
        self.residual_trace = residual_trace or []


# --- lineshapes ---------------------------------------------------------------


def lorentzian(delta, gamma):
    """Unit-area Lorentzian with full width ``gamma``."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    delta = np.asarray(delta, dtype=float)
    return (gamma / (2.0 * math.pi)) / (delta**2 + (gamma / 2.0) ** 2)


def gaussian_doppler(delta, sigma):
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    delta = np.asarray(delta, dtype=float)
    return np.exp(-0.5 * (delta / sigma) ** 2) / (sigma * SQRT_2PI)


def voigt(delta, gamma, sigma):
    """Lorentzian (full width ``gamma``) convolved with a Gaussian ``sigma``.

    Evaluated by adaptive quadrature over the Doppler shift, truncated at
    ``+-(8 sigma + 200 gamma)``.
    """
    if gamma <= 0 or sigma <= 0:
        raise ValueError("gamma and sigma must be positive")
    half = 8.0 * sigma + 200.0 * gamma

    def one(d):
        f = lambda x: lorentzian(d - x, gamma) * gaussian_doppler(x, sigma)
        pts = sorted({0.0, min(max(d, -half), half)})
        val, err, info = integrate.quad(
            f, -half, half, points=pts, limit=500, epsabs=0.0, epsrel=1e-10,
            full_output=1,
        )[:3]
        if not np.isfinite(val) or err > 1e-6 * abs(val) + 1e-14:
            raise QuadratureError(
                f"voigt quadrature did not converge at delta={d!r}: "
                f"value={val!r}, error estimate={err!r}, evaluations={info['neval']}"
            )
        return val

    delta = np.asarray(delta, dtype=float)
    out = np.vectorize(one, otypes=[float])(delta)
    return out if out.ndim else float(out)


def voigt_fast(delta, gamma, sigma):
    """Same profile through the Faddeeva function; used inside the fit."""
    delta = np.asarray(delta, dtype=float)
    z = (delta + 0.5j * gamma) / (sigma * math.sqrt(2.0))
    return wofz(z).real / (sigma * SQRT_2PI)


# --- model and fit -------------------------------------------------------------


@dataclass(frozen=True)
class LineTable:
    """Hyperfine line centres (MHz) and relative strengths.

    Defaults are the caesium D2 ``F=3 -> F'=2,3,4`` values taken from
    standard reference data (excited-state positions relative to the
    hyperfine centre of gravity, relative transition strength factors
    5/14, 3/8, 15/56).
    """

    centers: tuple = (-339.7128, -188.4885, 12.79851)
    strengths: tuple = (5 / 14, 3 / 8, 15 / 56)

    def __post_init__(self):
        c = tuple(float(x) for x in self.centers)
        s = tuple(float(x) for x in self.strengths)
        if len(c) != 3 or len(s) != 3:
            raise ValueError("three line centres and strengths are required")
        if any(x <= 0 for x in s):
            raise ValueError("line strengths must be positive")
        if any(b <= a for a, b in zip(c, c[1:])):
            raise ValueError("line centres must be strictly increasing")
        object.__setattr__(self, "centers", c)
        object.__setattr__(self, "strengths", s)

    @classmethod
    def from_dict(cls, cfg):
        return cls(tuple(cfg["centers_mhz"]), tuple(cfg["strengths"]))


@dataclass(frozen=True)
class FitResult:
    k1: float
    k2: float
    k3: float
    k4: float = 1.0
    k5: float = 0.0
    residual_rms: float = 0.0
    covariance: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        if not (self.k1 > 0 and self.k2 > 0 and self.k3 > 0):
            raise ValueError("k1, k2 and k3 must be positive")

    @property
    def params(self):
        return np.array([self.k1, self.k2, self.k3, self.k4, self.k5])

    @property
    def std_errors(self):
        if self.covariance is None:
            return None
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))

    def to_dict(self):
        d = {k: getattr(self, k) for k in PARAM_NAMES}
        d["residual_rms"] = self.residual_rms
        d["covariance"] = None if self.covariance is None else self.covariance.tolist()
        return d


@dataclass(frozen=True)
class SpectrumSample:
    detuning: float
    transmission: float

    def __post_init__(self):
        if self.transmission < 0:
            raise ValueError("transmission must be non-negative")


def _optical_depth(omega, k1, k2, k3, lines):
    # the S13 integral equals pi sqrt(2 pi) k2 k3 times the unit-area Voigt
    omega = np.asarray(omega, dtype=float)
    total = np.zeros_like(omega)
    for center, strength in zip(lines.centers, lines.strengths):
        total += strength * voigt_fast(omega - center, 2.0 * k3, k2)
    return k1 * math.pi * SQRT_2PI * k2 * k3 * total


def _raw_model(omega, params, lines):
    k1, k2, k3, k4, k5 = params
    return k4 * np.exp(-_optical_depth(omega, k1, k2, k3, lines)) + k5


def transmission_model(omega, fit: FitResult, lines: LineTable):
    """Fitted transmission, clamped at zero."""
    out = np.clip(_raw_model(omega, fit.params, lines), 0.0, None)
    return out if np.ndim(out) else float(out)


def s13_integral(omega, k2, k3, center):
    """Direct quadrature of one line's S13 integrand (reference for the model)."""
    g = lambda w: math.exp(-0.5 * ((omega - center - w) / k2) ** 2) / (1.0 + (w / k3) ** 2)
    half = 8.0 * k2 + 400.0 * k3 + abs(omega - center)
    core = integrate.quad(g, -half, half, points=[0.0, omega - center], limit=500)[0]
    left = integrate.quad(g, -np.inf, -half)[0]
    right = integrate.quad(g, half, np.inf)[0]
    return left + core + right


def initial_guess(samples, lines: LineTable) -> FitResult:
    """Heuristic starting point: plateau, dip depth and dip width."""
    det = np.array([s.detuning for s in samples], dtype=float)
    tr = np.array([s.transmission for s in samples], dtype=float)
    order = np.argsort(det)
    det, tr = det[order], tr[order]
    edge = max(3, len(tr) // 10)
    k4 = float(np.median(np.concatenate([tr[:edge], tr[-edge:]])))
    k4 = k4 if k4 > 0 else 1.0
    i_min = int(np.argmin(tr))
    half_level = 0.5 * (k4 + tr[i_min])
    below = np.nonzero(tr <= half_level)[0]
    fwhm = det[below[-1]] - det[below[0]] if below.size > 1 else np.ptp(det) / 10
    fwhm = max(fwhm, np.ptp(det) / 100)
    k2 = fwhm / 2.355
    k3 = k2 / 3.0
    od_peak = -math.log(max(tr[i_min] / k4, 1e-6))
    unit_od = _optical_depth(det[i_min], 1.0, k2, k3, lines)
    k1 = max(od_peak / float(unit_od), 1e-12)
    return FitResult(k1, k2, k3, k4, 0.0)


def fit_spectrum(samples, lines: LineTable, init: FitResult | None = None,
                 max_iter: int = 500, xtol: float = 1e-10) -> FitResult:
    """Trust-region least squares of the model against the measured spectrum."""
    if len(samples) < 20:
        raise ValueError("at least 20 samples are required")
    det = np.array([s.detuning for s in samples], dtype=float)
    tr = np.array([s.transmission for s in samples], dtype=float)
    order = np.lexsort((tr, det))
    det, tr = det[order], tr[order]
    if det[0] > lines.centers[0] or det[-1] < lines.centers[-1]:
        raise ValueError("samples must span all three lines")
    if init is None:
        init = initial_guess(samples, lines)

    trace = []
    best = {"cost": math.inf, "x": init.params}

    def resid(x):
        r = _raw_model(det, x, lines) - tr
        cost = float(r @ r)
        trace.append(cost)
        if cost < best["cost"]:
            best.update(cost=cost, x=x.copy())
        return r

    lower = [1e-12, 1e-9, 1e-9, -np.inf, -np.inf]
    upper = [np.inf] * 5
    sol = optimize.least_squares(
        resid, init.params, bounds=(lower, upper), method="trf", x_scale="jac",
        xtol=xtol, ftol=None, gtol=None, max_nfev=max_iter,
    )
    if not sol.success or sol.status == 0:
        x = best["x"]
        raise FitError(
            f"fit did not converge: {sol.message}",
            best=dict(zip(PARAM_NAMES, map(float, x))),
            residual_trace=trace,
        )
    n, p = det.size, 5
    rss = float(sol.fun @ sol.fun)
    jac = sol.jac
    s2 = rss / max(n - p, 1)
    cov = np.linalg.pinv(jac.T @ jac) * s2
    k = [float(v) for v in sol.x]
    return FitResult(*k, residual_rms=math.sqrt(rss / n), covariance=cov)


# --- density -------------------------------------------------------------------


@dataclass(frozen=True)
class PhysicalConstants:
    dipole_moment: float = 2.1923e-29  # C m, effective far-detuned Cs D2
    transition_angular_frequency: float = 2.0 * math.pi * 351.726e12  # rad/s
    cell_length: float = 75.3e-3  # m
    planck: float = sc.h
    vacuum_permittivity: float = sc.epsilon_0

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not v > 0:
                raise ValueError(f"{k} must be positive")

    @property
    def wave_number(self) -> float:
        return self.transition_angular_frequency / sc.c

    @classmethod
    def from_dict(cls, cfg):
        keys = {
            "dipole_moment_c_m": "dipole_moment",
            "transition_angular_frequency_rad_s": "transition_angular_frequency",
            "cell_length_m": "cell_length",
            "planck_j_s": "planck",
            "vacuum_permittivity_f_m": "vacuum_permittivity",
        }
        return cls(**{v: float(cfg[k]) for k, v in keys.items() if k in cfg})


def density_from_fit(fit: FitResult, constants: PhysicalConstants = PhysicalConstants()) -> float:
    """Atomic number density (m^-3) from ``k1 k2 k3``."""
    c = constants
    k123 = fit.k1 * fit.k2 * fit.k3 * MHZ_TO_RAD_S
    return (SQRT_2PI * c.planck * c.vacuum_permittivity * k123) / (
        2.0 * c.dipole_moment**2 * c.wave_number * c.cell_length
    )


# --- I/O -----------------------------------------------------------------------


def read_spectrum(fh):
    from .photonstats import CsvFormatError

    reader = csv.reader(fh)
    header = next(reader, None)
    if header is None or [h.strip() for h in header] != ["detuning_mhz", "transmission"]:
        raise CsvFormatError("expected header detuning_mhz,transmission", 1)
    out = []
    for row in reader:
        if not row:
            continue
        line = reader.line_num
        if len(row) != 2:
            raise CsvFormatError("expected 2 fields", line)
        try:
            out.append(SpectrumSample(float(row[0]), float(row[1])))
        except ValueError as exc:
            raise CsvFormatError(str(exc), line) from None
    return out


def write_spectrum(fh, detuning, transmission):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["detuning_mhz", "transmission"])
    for d, t in zip(detuning, transmission):
        w.writerow([repr(float(d)), repr(float(t))])


def load_config(fh):
    """Lines and constants from one JSON document."""
    cfg = json.load(fh)
    return LineTable.from_dict(cfg), PhysicalConstants.from_dict(cfg)
