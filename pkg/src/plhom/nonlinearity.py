"""Reaction terms ``f`` (bulk) and ``g`` (hole boundary) and their checks.

All checks are sampling based: ``s`` runs over a symmetric logarithmic
grid on ``[-smax, smax]`` (plus zero and the critical points of ``f'``).
They report; they never stop a solver from running.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import logging
import math

import numpy as np
from numpy.polynomial import polynomial as P

from .errors import GrowthInfeasible

logger = logging.getLogger(__name__)

DEFAULT_RANGE = (1e-3, 1e3)


@dataclass(frozen=True)
class Nonlinearity:
    """Polynomial reaction term ``sum_j coeffs[j] * s**j``.

    ``kind`` is ``"zero"``, ``"linear"`` or ``"poly"``; ``exponent`` is the
    declared growth exponent ``q`` (``degree + 1`` unless given).
    """

    coeffs: tuple
    exponent: float
    kind: str = "poly"
    name: str = ""

    @property
    def degree(self):
        c = np.trim_zeros(np.asarray(self.coeffs, float), "b")
        return max(len(c) - 1, 0)

    @property
    def is_affine(self):
        return self.degree <= 1

    @property
    def is_odd_polynomial(self):
        c = np.trim_zeros(np.asarray(self.coeffs, float), "b")
        return len(c) >= 2 and (len(c) - 1) % 2 == 1 and c[-1] > 0

    def __call__(self, s):
        return self.value(s)

    def value(self, s):
        return P.polyval(s, self.coeffs)

    def derivative(self, s):
        d = P.polyder(self.coeffs) if len(self.coeffs) > 1 else [0.0]
        return P.polyval(s, d)

    def primitive(self, s):
        return P.polyval(s, P.polyint(self.coeffs))

    def describe(self):
        return {"kind": self.kind, "name": self.name, "coeffs": list(map(float, self.coeffs)),
                "exponent": self.exponent}


def zero():
    return Nonlinearity((0.0,), 2.0, kind="zero", name="zero")


def linear(slope=1.0):
    return Nonlinearity((0.0, float(slope)), 2.0, kind="linear", name=f"linear({slope})")


def polynomial(coeffs, exponent=None, name=""):
    """Polynomial with ascending ``coeffs``; ``exponent`` defaults to degree + 1."""
    coeffs = tuple(float(c) for c in coeffs)
    c = np.trim_zeros(np.asarray(coeffs), "b")
    deg = max(len(c) - 1, 0)
    if exponent is None:
        exponent = float(max(deg + 1, 2))
    if deg == 0 and not c.any():
        return Nonlinearity(coeffs, float(exponent), kind="zero", name=name or "zero")
    kind = "linear" if deg == 1 and c[0] == 0 else "poly"
    return Nonlinearity(coeffs, float(exponent), kind=kind, name=name)


def odd_polynomial(coeffs, exponent=None, name=""):
    nl = polynomial(coeffs, exponent, name)
    if not nl.is_odd_polynomial:
        raise ValueError("odd polynomial needs odd degree and a positive leading coefficient")
    return nl


def cubic(a=1.0, b=0.0):
    """``a s^3 + b s``."""
    return polynomial((0.0, b, 0.0, a), name="cubic")


PRESETS = {"zero": zero, "linear": linear, "cubic": cubic}


def sample_grid(sample_range=DEFAULT_RANGE, n=801):
    lo, hi = sample_range
    pos = np.logspace(math.log10(lo), math.log10(hi), n)
    return np.concatenate([-pos[::-1], [0.0], pos])


@dataclass(frozen=True)
class ExponentCheck:
    p: float
    N: int
    q1: float
    q2: float
    admissible_theorem: bool
    messages: list = field(default_factory=list)

    def describe(self):
        return {"p": self.p, "N": self.N, "q1": self.q1, "q2": self.q2,
                "admissible_theorem": self.admissible_theorem, "messages": list(self.messages)}


def validate_exponents(p, N, q1, q2):
    """Check ``p``, ``q1``, ``q2`` against the growth restrictions of the theory.

    For ``p == N`` the exponents only need to be finite with ``q1 >= p``,
    ``q2 >= 2`` (and ``q2 >= p`` for the convergence theorem); for
    ``p < N`` they are capped by the Sobolev and trace exponents
    ``N p/(N-p)`` and ``(N-1) p/(N-p)``.
    """
    msgs = []
    if not (2 <= p <= N):
        msgs.append(f"p={p} outside [2, N={N}]")
        if p > N:
            logger.warning("p=%s > N=%s: solver mode only", p, N)
    for name, q in (("q1", q1), ("q2", q2)):
        if not math.isfinite(q):
            msgs.append(f"{name}={q} is not finite")
    if p == N:
        if q1 < p:
            msgs.append(f"q1={q1} < p={p}")
        if q2 < 2:
            msgs.append(f"q2={q2} < 2")
        if q2 < p:
            msgs.append(f"q2={q2} < p={p} (convergence theorem)")
    elif p < N:
        s1 = N * p / (N - p)
        s2 = (N - 1) * p / (N - p)
        if not (2 <= q1 <= s1):
            msgs.append(f"q1={q1} outside [2, Np/(N-p)={s1:g}]")
        if not (2 <= q2 <= s2):
            msgs.append(f"q2={q2} outside [2, (N-1)p/(N-p)={s2:g}]")
    return ExponentCheck(float(p), int(N), float(q1), float(q2), not msgs, msgs)


def growth_constants(nl, sample_range=DEFAULT_RANGE, tail_spread=2.0):
    """Constants ``(alpha1, alpha2, beta)`` with
    ``alpha1 |s|^q - beta <= f(s) s <= alpha2 |s|^q + beta`` on the samples.

    ``alpha1``/``alpha2`` enclose ``f(s) s / |s|^q`` on the top decade of the
    range; ``beta`` then absorbs whatever the small-``|s|`` samples need.
    Raises :class:`GrowthInfeasible` when the ratio is not asymptotically
    bounded away from 0 and infinity (declared ``q`` wrong, or ``f`` of the
    wrong sign).
    """
    q = nl.exponent
    s = sample_grid(sample_range)
    r = nl.value(s) * s
    a = np.abs(s)
    tail = a >= sample_range[1] / 10.0
    ratio = r[tail] / a[tail] ** q
    lo_t, hi_t = ratio.min(), ratio.max()
    if not (lo_t > 0 and hi_t <= tail_spread * lo_t):
        raise GrowthInfeasible(
            f"f(s)s/|s|^{q:g} ranges over [{lo_t:.3g}, {hi_t:.3g}] on the top decade")
    alpha1, alpha2 = float(lo_t), float(hi_t)
    beta = max(0.0, float(np.max(alpha1 * a ** q - r)), float(np.max(r - alpha2 * a ** q)))
    return alpha1, alpha2, beta


def lower_growth(nl, sample_range=DEFAULT_RANGE):
    """``(alpha1, beta)`` for the lower bound only; ``alpha1 = 0`` when no
    positive constant fits (e.g. ``f = 0``)."""
    try:
        a1, _, beta = growth_constants(nl, sample_range)
        return a1, beta
    except GrowthInfeasible:
        s = sample_grid(sample_range)
        return 0.0, max(0.0, float(-np.min(nl.value(s) * s)))


def min_derivative(nl, sample_range=DEFAULT_RANGE):
    s = sample_grid(sample_range)
    crit = P.polyroots(P.polyder(nl.coeffs, 2)) if nl.degree >= 2 else np.zeros(0)
    crit = crit[np.abs(crit.imag) < 1e-12].real
    crit = crit[np.abs(crit) <= sample_range[1]]
    return float(np.min(nl.derivative(np.concatenate([s, crit]))))


def semi_monotonicity_check(nl, l, sample_range=DEFAULT_RANGE):
    """True iff ``(f(s1)-f(s2))(s1-s2) >= -l (s1-s2)^2``, i.e. ``min f' >= -l``."""
    return min_derivative(nl, sample_range) >= -l


def is_sign_dissipative(nl, sample_range=DEFAULT_RANGE):
    """``f(s) s >= 0`` on the sample grid."""
    s = sample_grid(sample_range)
    return bool(np.all(nl.value(s) * s >= 0.0))


def derivative_errors(nl, steps=(1e-3, 1e-4, 1e-5), n=41, seed=0):
    """Max forward-difference error of ``f'`` for each step on random samples in [-2, 2]."""
    s = np.random.default_rng(seed).uniform(-2.0, 2.0, n)
    return [float(np.max(np.abs((nl.value(s + h) - nl.value(s)) / h - nl.derivative(s)))) for h in steps]


def check_nonlinearity(nl, l=None, sample_range=DEFAULT_RANGE):
    """Report dict used by ``validate`` and the run manifests."""
    out = {"nonlinearity": nl.describe(), "odd_polynomial": nl.is_odd_polynomial,
           "sign_dissipative": is_sign_dissipative(nl, sample_range),
           "min_derivative": min_derivative(nl, sample_range)}
    try:
        a1, a2, b = growth_constants(nl, sample_range)
        out["growth"] = {"alpha1": a1, "alpha2": a2, "beta": b, "feasible": True}
    except GrowthInfeasible as exc:
        out["growth"] = {"feasible": False, "reason": str(exc)}
    if l is not None:
        out["semi_monotone"] = semi_monotonicity_check(nl, l, sample_range)
    return out
