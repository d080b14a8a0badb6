"""Static electrical model of a resistive cell.

The current of a cell in any state is a linear mixture of two fixed limiting
polynomials in the applied voltage: the most resistive characteristic
(``hhrs``) and the most conductive one (``llrs``).  A single state variable
``r`` in [0, 1] selects the mixture, with r = 1 the most resistive limit.
The module also builds the parabolic transition curve that connects a cycle's
low-resistance branch to the next high-resistance branch during gradual
positive-polarity switching.
"""

from dataclasses import dataclass

import numpy as np

U0_DEFAULT = 0.2            # reference voltage for static resistance [V]
MIN_LINEAR_COEFF = 1e-9     # lower bound on the linear coefficient [A/V]
DENOM_FLOOR = 1e-12         # |i_llrs - i_hhrs| below this is degenerate [A]
MIN_CURVE_SPAN = 1e-3       # smallest usable (u_max - u_start) [V]


class DegenerateVoltageError(ValueError):
    """Raised when the two limiting polynomials cannot be separated at u."""


def eval_poly(coeffs, u):
    """Evaluate sum_k c_k * u**k by Horner's rule.

    ``coeffs`` are ascending (c_0 first).  The accumulation runs from the
    highest coefficient down, one multiply-add per order, so the operation
    order is fixed and results are bit-reproducible.  Accepts scalar or
    array ``u``; scalars come back as floats.
    """
    coeffs = np.asarray(coeffs)
    if coeffs.size == 0:
        raise ValueError("empty coefficient list")
    u_arr = np.asarray(u)
    acc = np.zeros_like(u_arr) + coeffs[-1]
    for c in coeffs[-2::-1]:
        acc = acc * u_arr + c
    if acc.ndim == 0:
        return acc.item()
    return acc


@dataclass(frozen=True)
class ConductionModel:
    """Limiting-polynomial pair plus the static-resistance reference voltage.

    Coefficients are ascending; the constant terms must be exactly zero and
    the linear terms at least MIN_LINEAR_COEFF.  The conductive branch must
    carry more current than the resistive one at u0.
    """

    hhrs: np.ndarray
    llrs: np.ndarray
    u0: float = U0_DEFAULT

    def __post_init__(self):
        object.__setattr__(self, "hhrs", np.asarray(self.hhrs, dtype=np.float64))
        object.__setattr__(self, "llrs", np.asarray(self.llrs, dtype=np.float64))
        for name, c in (("hhrs", self.hhrs), ("llrs", self.llrs)):
            if c.ndim != 1 or c.size < 2:
                raise ValueError(f"{name} needs at least linear order")
            if c[0] != 0.0:
                raise ValueError(f"{name} constant term must be 0 A, got {c[0]!r}")
            if c[1] < MIN_LINEAR_COEFF:
                raise ValueError(
                    f"{name} linear coefficient {c[1]:g} A/V below {MIN_LINEAR_COEFF:g}"
                )
        ih, il = self.i_hhrs(self.u0), self.i_llrs(self.u0)
        if not (il > ih > 0.0):
            raise ValueError(
                f"need i_llrs(u0) > i_hhrs(u0) > 0 at u0={self.u0}, got {il:g}, {ih:g}"
            )

    def i_hhrs(self, u):
        return eval_poly(self.hhrs, u)

    def i_llrs(self, u):
        return eval_poly(self.llrs, u)

    def static_resistance(self, r):
        """u0 / I(r, u0) for a state variable r."""
        return self.u0 / current(r, self.u0, self)


def current(r, u, model: ConductionModel):
    """Mixture current I(r, u) = r*i_hhrs(u) + (1 - r)*i_llrs(u)."""
    ih = model.i_hhrs(u)
    il = model.i_llrs(u)
    return r * ih + (1.0 - r) * il


def state_from_point(i, u, model: ConductionModel, floor: float = DENOM_FLOOR):
    """State variable of the mixture curve passing through the point (i, u).

    Clamped to [0, 1].  Raises DegenerateVoltageError when the limiting
    currents at u differ by less than ``floor``.
    """
    il = model.i_llrs(u)
    denom = il - model.i_hhrs(u)
    if np.min(np.abs(denom)) < floor:
        raise DegenerateVoltageError(
            f"limiting currents separated by < {floor:g} A at u={u!r}"
        )
    return np.clip((il - i) / denom, 0.0, 1.0)


def state_from_resistance(res, model: ConductionModel):
    """State variable whose static resistance at u0 equals ``res``."""
    if np.min(res) <= 0.0:
        raise ValueError(f"resistance must be positive, got {res!r}")
    il = model.i_llrs(model.u0)
    denom = il - model.i_hhrs(model.u0)
    return np.clip((il - model.u0 / np.asarray(res, dtype=float)) / denom, 0.0, 1.0)


@dataclass(frozen=True)
class ResetCurve:
    """Parabolic transition current, valid on [u_start, u_max].

    Satisfies q(u_start) = I_lrs(u_start), q(u_max) = I_next_hrs(u_max) and
    q'(u_max) = 0.
    """

    quad_coeffs: np.ndarray  # ascending [A, A/V, A/V^2]
    u_start: float
    u_max: float

    def __call__(self, u):
        return eval_poly(self.quad_coeffs, u)


def build_reset_curve(u_reset, r_lrs, r_hrs_next, u_max, model: ConductionModel) -> ResetCurve:
    """Closed-form parabola between the departing low-resistance point and
    the arriving high-resistance point.

    The three conditions (two endpoint currents, zero slope at u_max) pin the
    quadratic as q(u) = i_end + c*(u - u_max)^2.
    """
    if not (0.0 < u_reset < u_max):
        raise ValueError(f"need 0 < u_reset < u_max, got {u_reset!r}, {u_max!r}")
    if u_max - u_reset < MIN_CURVE_SPAN:
        raise ValueError(
            f"ill-conditioned transition: u_max - u_reset = {u_max - u_reset:g} V"
            f" < {MIN_CURVE_SPAN:g} V"
        )
    i_start = current(r_lrs, u_reset, model)
    i_end = current(r_hrs_next, u_max, model)
    c = (i_start - i_end) / (u_reset - u_max) ** 2
    coeffs = np.array([i_end + c * u_max**2, -2.0 * c * u_max, c])
    return ResetCurve(coeffs, float(u_reset), float(u_max))


def fit_conduction_poly(u, i, degree, min_linear: float = MIN_LINEAR_COEFF) -> np.ndarray:
    """Least-squares polynomial of ``degree`` with c0 = 0 and c1 >= min_linear.

    The constant term is eliminated from the design matrix; the linear bound
    is enforced by a single active-set clamp (fix c1, refit the rest), which
    is always feasible.  Returns ascending coefficients of length degree + 1.
    """
    u = np.asarray(u, dtype=np.float64)
    i = np.asarray(i, dtype=np.float64)
    if u.size <= degree:
        raise ValueError(f"need more than {degree} points, got {u.size}")
    powers = np.arange(1, degree + 1)
    design = u[:, None] ** powers[None, :]
    coef, *_ = np.linalg.lstsq(design, i, rcond=None)
    if coef[0] < min_linear:
        resid = i - min_linear * u
        if degree >= 2:
            rest, *_ = np.linalg.lstsq(design[:, 1:], resid, rcond=None)
        else:
            rest = np.empty(0)
        coef = np.concatenate([[min_linear], rest])
    return np.concatenate([[0.0], coef])


def fit_limiting_model(
    hrs_windows,
    lrs_windows,
    r_h,
    r_l,
    u0: float = U0_DEFAULT,
    percentile: float = 1.0,
) -> ConductionModel:
    """Estimate the limiting polynomials from per-cycle fit windows.

    Cycles whose high-resistance value falls in the top ``percentile`` of
    r_h (respectively the bottom percentile of r_l) are pooled, and one
    constrained polynomial is refit to each pooled point set.
    """
    r_h = np.asarray(r_h, dtype=float)
    r_l = np.asarray(r_l, dtype=float)
    if not (len(hrs_windows) == len(lrs_windows) == r_h.size == r_l.size):
        raise ValueError("windows and resistances must align one per cycle")
    hi = r_h >= np.quantile(r_h, 1.0 - percentile / 100.0)
    lo = r_l <= np.quantile(r_l, percentile / 100.0)
    u_hi = np.concatenate([hrs_windows[k][0] for k in np.nonzero(hi)[0]])
    i_hi = np.concatenate([hrs_windows[k][1] for k in np.nonzero(hi)[0]])
    u_lo = np.concatenate([lrs_windows[k][0] for k in np.nonzero(lo)[0]])
    i_lo = np.concatenate([lrs_windows[k][1] for k in np.nonzero(lo)[0]])
    hhrs = fit_conduction_poly(u_hi, i_hi, degree=5)
    llrs = fit_conduction_poly(u_lo, i_lo, degree=3)
    return ConductionModel(hhrs=hhrs, llrs=llrs, u0=u0)
