"""Stability of derivatives of Lipschitz convex functions under sup-norm perturbations, exact
Gaussian measures of interval unions, and Gaussian integrals over bounded-oscillation step functions.

Convex functions are piecewise linear, so derivatives are step functions and every set
operation below is exact up to floating-point rounding.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize
from scipy.special import log_ndtr, ndtr

SQRT2PI = math.sqrt(2.0 * math.pi)


# ---------------------------------------------------------------- piecewise linear


@dataclass(frozen=True)
class PiecewiseLinear:
    """Continuous PL function: values at sorted knots, linear tails with the given slopes."""

    xs: tuple[float, ...]
    ys: tuple[float, ...]
    left_slope: float
    right_slope: float

    def __post_init__(self):
        if len(self.xs) != len(self.ys) or not self.xs:
            raise ValueError("need at least one knot and matching values")
        if any(b <= a for a, b in zip(self.xs, self.xs[1:])):
            raise ValueError("knots must be strictly increasing")

    @property
    def slopes(self) -> np.ndarray:
        """Slope on each of the len(xs)+1 pieces, left tail first."""
        x, y = np.array(self.xs), np.array(self.ys)
        inner = np.diff(y) / np.diff(x) if len(x) > 1 else np.zeros(0)
        return np.concatenate([[self.left_slope], inner, [self.right_slope]])

    def __call__(self, t):
        t = np.asarray(t, dtype=np.float64)
        x, y = np.array(self.xs), np.array(self.ys)
        out = np.interp(t, x, y)
        out = np.where(t < x[0], y[0] + self.left_slope * (t - x[0]), out)
        out = np.where(t > x[-1], y[-1] + self.right_slope * (t - x[-1]), out)
        return out if out.ndim else float(out)

    def right_derivative(self, t: float) -> float:
        return float(self.slopes[np.searchsorted(self.xs, t, side="right")])

    def left_derivative(self, t: float) -> float:
        return float(self.slopes[np.searchsorted(self.xs, t, side="left")])

    def shifted(self, c: float) -> "PiecewiseLinear":
        return PiecewiseLinear(self.xs, tuple(v + c for v in self.ys), self.left_slope, self.right_slope)

    def simplified(self, tol: float = 1e-13) -> "PiecewiseLinear":
        s = self.slopes
        keep = [i for i in range(len(self.xs)) if abs(s[i + 1] - s[i]) > tol * max(1.0, abs(s[i]), abs(s[i + 1]))]
        if not keep:
            keep = [0]
        return PiecewiseLinear(tuple(self.xs[i] for i in keep), tuple(self.ys[i] for i in keep),
                               self.left_slope, self.right_slope)

    def to_dict(self) -> dict:
        return {"xs": list(self.xs), "ys": list(self.ys), "left_slope": self.left_slope,
                "right_slope": self.right_slope}


def _crossings(f: PiecewiseLinear, g: PiecewiseLinear, knots: np.ndarray) -> list[float]:
    """Points where f - g changes sign strictly, between knots and in the two tails."""
    d = np.asarray(f(knots)) - np.asarray(g(knots))
    out = []
    for i in range(len(knots) - 1):
        if d[i] * d[i + 1] < 0:
            out.append(knots[i] - d[i] * (knots[i + 1] - knots[i]) / (d[i + 1] - d[i]))
    ls = f.left_slope - g.left_slope
    if ls != 0 and -d[0] / ls < 0:        # root of d[0] + ls*(t-x0) lies left of x0
        out.append(knots[0] - d[0] / ls)
    rs = f.right_slope - g.right_slope
    if rs != 0 and -d[-1] / rs > 0:
        out.append(knots[-1] - d[-1] / rs)
    return out


def pl_max(f: PiecewiseLinear, g: PiecewiseLinear) -> PiecewiseLinear:
    knots = np.unique(np.concatenate([f.xs, g.xs]))
    knots = np.unique(np.concatenate([knots, _crossings(f, g, knots)]))
    vals = np.maximum(f(knots), g(knots))
    # far out the steeper function wins
    left, right = min(f.left_slope, g.left_slope), max(f.right_slope, g.right_slope)
    return PiecewiseLinear(tuple(knots.tolist()), tuple(vals.tolist()), left, right).simplified()


def sup_distance(f: PiecewiseLinear, g: PiecewiseLinear) -> float:
    if abs(f.left_slope - g.left_slope) > 1e-15 or abs(f.right_slope - g.right_slope) > 1e-15:
        return math.inf
    knots = np.unique(np.concatenate([f.xs, g.xs]))
    return float(np.max(np.abs(np.asarray(f(knots)) - np.asarray(g(knots)))))


class PiecewiseLinearConvex(PiecewiseLinear):
    """Convex, lam_lip-Lipschitz PL function."""

    def __init__(self, xs, ys, left_slope, right_slope, lam_lip: float):
        super().__init__(tuple(float(x) for x in xs), tuple(float(y) for y in ys), float(left_slope),
                         float(right_slope))
        object.__setattr__(self, "lam_lip", float(lam_lip))
        s = self.slopes
        if np.any(np.diff(s) < -1e-12 * max(1.0, lam_lip)):
            raise ValueError("slopes must be nondecreasing")
        if np.any(np.abs(s) > lam_lip * (1 + 1e-12)):
            raise ValueError("slope exceeds the Lipschitz constant")

    @classmethod
    def from_slopes(cls, breakpoints, slopes, lam_lip: float, anchor: float = 0.0) -> "PiecewiseLinearConvex":
        """len(slopes) = len(breakpoints)+1; `anchor` is the value at the first breakpoint."""
        bp = np.asarray(breakpoints, dtype=np.float64)
        sl = np.asarray(slopes, dtype=np.float64)
        if len(sl) != len(bp) + 1:
            raise ValueError("need one more slope than breakpoints")
        if len(bp) == 0:
            return cls((0.0,), (anchor,), sl[0], sl[0], lam_lip)
        ys = anchor + np.concatenate([[0.0], np.cumsum(sl[1:-1] * np.diff(bp))])
        return cls(bp, ys, sl[0], sl[-1], lam_lip)

    @classmethod
    def from_pl(cls, f: PiecewiseLinear, lam_lip: float) -> "PiecewiseLinearConvex":
        return cls(f.xs, f.ys, f.left_slope, f.right_slope, lam_lip)

    @classmethod
    def abs_function(cls, lam: float) -> "PiecewiseLinearConvex":
        return cls.from_slopes([0.0], [-lam, lam], lam)

    @classmethod
    def linear(cls, slope: float, lam_lip: float, intercept: float = 0.0) -> "PiecewiseLinearConvex":
        return cls((0.0,), (intercept,), slope, slope, lam_lip)

    @property
    def jumps(self) -> np.ndarray:
        return np.diff(self.slopes)

    def to_dict(self) -> dict:
        d = super().to_dict()
        d["lam_lip"] = self.lam_lip
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "PiecewiseLinearConvex":
        d = json.loads(text)
        return cls(d["xs"], d["ys"], d["left_slope"], d["right_slope"], d["lam_lip"])


def random_convex(rng: np.random.Generator, lam: float, n_breaks: int | None = None,
                  spread: float = 5.0) -> PiecewiseLinearConvex:
    k = int(rng.integers(1, 8)) if n_breaks is None else n_breaks
    bp = np.sort(rng.uniform(-spread, spread, k))
    bp = np.unique(bp)
    sl = np.sort(rng.uniform(-lam, lam, len(bp) + 1))
    return PiecewiseLinearConvex.from_slopes(bp, sl, lam, anchor=float(rng.normal()))


# ---------------------------------------------------------------- interval sets


@dataclass(frozen=True)
class IntervalSet:
    """Finite union of disjoint closed intervals, sorted; degenerate points allowed."""

    intervals: tuple[tuple[float, float], ...]

    def __post_init__(self):
        prev = None
        for a, b in self.intervals:
            if b < a or (prev is not None and a <= prev):
                raise ValueError("intervals must be closed, sorted and disjoint")
            prev = b

    @classmethod
    def empty(cls) -> "IntervalSet":
        return cls(())

    @classmethod
    def from_intervals(cls, items) -> "IntervalSet":
        """Union of arbitrary closed intervals (merging overlaps and touching ends)."""
        items = sorted((float(a), float(b)) for a, b in items if b >= a)
        out: list[list[float]] = []
        for a, b in items:
            if out and a <= out[-1][1]:
                out[-1][1] = max(out[-1][1], b)
            else:
                out.append([a, b])
        return cls(tuple((a, b) for a, b in out))

    @property
    def measure(self) -> float:
        return float(sum(b - a for a, b in self.intervals))

    def __contains__(self, t: float) -> bool:
        return any(a <= t <= b for a, b in self.intervals)

    def __len__(self) -> int:
        return len(self.intervals)

    def to_json(self) -> str:
        return json.dumps([list(iv) for iv in self.intervals])

    @classmethod
    def from_json(cls, text: str) -> "IntervalSet":
        return cls(tuple((float(a), float(b)) for a, b in json.loads(text)))


def gaussian_measure(s: IntervalSet, sigma2: float = 1.0) -> float:
    """N(0, sigma2) mass of the set."""
    if sigma2 <= 0:
        raise ValueError("variance must be positive")
    sd = math.sqrt(sigma2)
    total = 0.0
    for a, b in s.intervals:
        lo, hi = a / sd, b / sd
        if lo >= 0:   # upper tail: subtract small numbers for accuracy
            total += float(ndtr(-lo) - ndtr(-hi))
        else:
            total += float(ndtr(hi) - ndtr(lo))
    return total


def centered_interval_measure(alpha: float, sigma2: float = 1.0) -> float:
    """Largest Gaussian mass of any set with Lebesgue measure alpha."""
    return gaussian_measure(IntervalSet(((-alpha / 2, alpha / 2),)), sigma2)


# ---------------------------------------------------------------- stability sets


def stab_outer(g: PiecewiseLinearConvex, delta: float, r: float) -> IntervalSet:
    """{t : g'(t + a) - g'(t - a) >= delta/2}, a = 4r/delta, right/left derivatives respectively.

    The slope increase over the closed window [t-a, t+a] is the sum of the jumps it contains,
    so the set is a closed union of intervals found from the events b_j +- a.
    """
    if delta <= 0 or r <= 0:
        raise ValueError("delta and r must be positive")
    a = 4.0 * r / delta
    bp = np.array(g.xs)
    jumps = g.jumps
    mask = jumps > 0
    bp, jumps = bp[mask], jumps[mask]
    if len(bp) == 0:
        return IntervalSet.empty()
    need = delta / 2.0

    def window(t: float) -> float:
        return float(jumps[(bp >= t - a) & (bp <= t + a)].sum())

    events = np.unique(np.concatenate([bp - a, bp + a]))
    pieces: list[tuple[float, float]] = []
    for e in events:
        if window(e) >= need:
            pieces.append((e, e))
    for lo, hi in zip(events, events[1:]):
        if window(0.5 * (lo + hi)) >= need:
            pieces.append((lo, hi))
    return IntervalSet.from_intervals(pieces)


def stab_measure_bound(lam: float, delta: float, r: float) -> float:
    """floor(4 lam/delta) intervals of length 16 r/delta."""
    return math.floor(4.0 * lam / delta) * 16.0 * r / delta


@dataclass
class Witness:
    g1: PiecewiseLinearConvex
    t: float
    slope_gap: float
    sup_distance: float

    def verify(self, g: PiecewiseLinearConvex, lam: float, delta: float, r: float, tol: float = 1e-9) -> bool:
        s = self.g1.slopes
        convex = bool(np.all(np.diff(s) >= -tol))
        lipschitz = bool(np.all(np.abs(s) <= lam + tol))
        tube = sup_distance(g, self.g1) <= r + tol
        smooth_at_t = abs(self.g1.right_derivative(self.t) - self.g1.left_derivative(self.t)) <= tol
        gap = abs(self.g1.right_derivative(self.t) - reference_derivative(g, self.t)) > delta
        return convex and lipschitz and tube and smooth_at_t and gap


def reference_derivative(g: PiecewiseLinear, t: float) -> float:
    """g'(t), taken as the midpoint of the one-sided derivatives at a kink."""
    return 0.5 * (g.left_derivative(t) + g.right_derivative(t))


def _line(t: float, value: float, slope: float) -> PiecewiseLinear:
    return PiecewiseLinear((t,), (value,), slope, slope)


def _max_excess(g: PiecewiseLinearConvex, t: float, mu: float) -> float:
    """sup_s [mu (s - t) - (g(s) - g(t))], finite when mu lies within g's tail slopes."""
    if mu < g.left_slope - 1e-15 or mu > g.right_slope + 1e-15:
        return math.inf
    knots = np.concatenate([np.array(g.xs), [t]])
    return float(np.max(mu * (knots - t) - (np.asarray(g(knots)) - g(t))))


def stab_witness(g: PiecewiseLinearConvex, t: float, delta: float, r: float,
                 margin: float = 1e-9) -> Witness | None:
    """A member of the r-tube around g whose derivative at t differs from g's by more than delta.

    Construction: g1 = max(g - r, line through (t, g(t) + c) with slope mu), mu pushed past the
    reference derivative by delta (+ margin) and kept inside g's tail slopes and [-lam, lam].
    The line must stay below g + r everywhere and strictly above g - r at t.
    """
    lam = g.lam_lip
    gt = float(g(t))
    ref = reference_derivative(g, t)
    for mu in (ref + delta + margin, ref - delta - margin):
        if abs(mu) > lam:
            continue
        D = _max_excess(g, t, mu)
        if not D < 2.0 * r:
            continue
        c = -0.5 * D                       # midpoint of the admissible offsets (-r, r - D]
        if c <= -r:
            continue
        raw = pl_max(g.shifted(-r), _line(t, gt + c, mu))
        try:
            g1 = PiecewiseLinearConvex.from_pl(raw, lam)
        except ValueError:
            continue
        w = Witness(g1, t, g1.right_derivative(t) - ref, sup_distance(g, g1))
        if w.verify(g, lam, delta, r):
            return w
    return None


# ---------------------------------------------------------------- Gaussian tail constants


def _corollary_constant() -> float:
    """sup_{u >= 1} -log(2 Phi(-u/2)) / u^2: exp(-C u^2) <= 1 - gamma([-u/2, u/2]) for u >= 1."""
    f = lambda u: -(math.log(2.0) + float(log_ndtr(-u / 2.0))) / (u * u)
    grid = np.linspace(1.0, 60.0, 6000)
    vals = np.array([f(u) for u in grid])
    i = int(np.argmax(vals))
    if i == 0:
        return float(vals[0])
    res = optimize.minimize_scalar(lambda u: -f(u), bounds=(grid[max(i - 1, 0)], grid[i + 1]), method="bounded")
    return float(max(vals[i], -res.fun))


GAUSS_TAIL_CONSTANT = _corollary_constant()
COROLLARY_CONSTANT = 4096.0 * GAUSS_TAIL_CONSTANT   # (4 lam/delta * 16 r/delta)^2 <= 4096 (lam r/delta^2)^2


def corollary_floor(lam: float, delta: float, r: float, sigma2: float) -> float:
    """Lower bound exp(-C' lam^2 r^2 / (sigma^2 delta^4)) on the Gaussian mass outside the stability set.

    Requires r >= sigma * delta^2 / lam.
    """
    sigma = math.sqrt(sigma2)
    if r < sigma * delta**2 / lam:
        raise ValueError("needs r >= sigma * delta^2 / lam")
    return math.exp(-COROLLARY_CONSTANT * (lam * r) ** 2 / (sigma2 * delta**4))


def corollary_floor_tight(lam: float, delta: float, r: float, sigma2: float) -> float:
    """Same bound through alpha = floor(4 lam/delta) 16 r/delta directly."""
    alpha = stab_measure_bound(lam, delta, r)
    sigma = math.sqrt(sigma2)
    return math.exp(-GAUSS_TAIL_CONSTANT * max(alpha, sigma) ** 2 / sigma2)


# ---------------------------------------------------------------- class G step functions


@dataclass(frozen=True)
class StepFunction:
    """values[j] on [edges[j], edges[j+1]), zero outside [edges[0], edges[-1])."""

    edges: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        if len(self.edges) != len(self.values) + 1:
            raise ValueError("need one more edge than values")
        if any(b <= a for a, b in zip(self.edges, self.edges[1:])):
            raise ValueError("edges must be strictly increasing")
        if not all(math.isfinite(v) for v in self.values):
            raise ValueError("values must be finite")

    @classmethod
    def zero(cls) -> "StepFunction":
        return cls((0.0, 1.0), (0.0,))

    def __call__(self, t):
        t = np.asarray(t, dtype=np.float64)
        e = np.array(self.edges)
        v = np.concatenate([[0.0], self.values, [0.0]])
        out = v[np.searchsorted(e, t, side="right")]
        return out if out.ndim else float(out)

    def antiderivative_knots(self) -> np.ndarray:
        """Values of int_{-inf}^x g at the edges."""
        return np.concatenate([[0.0], np.cumsum(np.array(self.values) * np.diff(self.edges))])

    def oscillation(self) -> float:
        """sup over intervals I of |int_I g| = max - min of the antiderivative (including 0 at -inf)."""
        F = self.antiderivative_knots()
        return float(F.max() - F.min())

    def in_class_g(self, tol: float = 1e-12) -> bool:
        return self.oscillation() <= 1.0 + tol

    def to_dict(self) -> dict:
        return {"edges": list(self.edges), "values": list(self.values)}


class ClassGError(ValueError):
    pass


def class_g_gaussian_bound(g: StepFunction) -> float:
    """int g(t) exp(-t^2/2) dt, exact per piece; |result| <= 2 for class members."""
    if not g.in_class_g():
        raise ClassGError(f"interval integrals reach {g.oscillation():.6g} > 1")
    e = np.array(g.edges)
    mass = ndtr(e[1:]) - ndtr(e[:-1])
    return float(SQRT2PI * np.dot(g.values, mass))


CLASS_G_LIMIT = 2.0


def sublevel_floor(delta: float) -> float:
    """int_{a}^inf (2 delta t - 1)/(1 + delta) t exp(-t^2/2) dt, a = 1/(2 delta), in closed form."""
    a = 1.0 / (2.0 * delta)
    ea = math.exp(-a * a / 2.0)
    tail = SQRT2PI * float(ndtr(-a))
    return (2.0 * delta * (a * ea + tail) - ea) / (1.0 + delta)


def sublevel_floor_quad(delta: float) -> float:
    a = 1.0 / (2.0 * delta)
    val, _ = integrate.quad(lambda t: (2 * delta * t - 1) / (1 + delta) * t * math.exp(-t * t / 2), a, np.inf,
                            epsabs=1e-14, epsrel=1e-13)
    return val


def sublevel_gaussian_lower(g: StepFunction, delta: float) -> tuple[float, float]:
    """(int 1{g <= delta} exp(-t^2/2) dt, analytic floor) for class members with g >= -1."""
    if not 0 < delta <= 1:
        raise ValueError("delta must lie in (0, 1]")
    if min(g.values) < -1.0 - 1e-12:
        raise ClassGError("function drops below -1")
    if not g.in_class_g():
        raise ClassGError(f"interval integrals reach {g.oscillation():.6g} > 1")
    e = np.array(g.edges)
    above = np.array(g.values) > delta
    excluded = float(np.sum((ndtr(e[1:]) - ndtr(e[:-1]))[above]))
    return SQRT2PI * (1.0 - excluded), sublevel_floor(delta)


def random_class_g(rng: np.random.Generator, lower: float | None = None, pieces: int | None = None) -> StepFunction:
    """Random step function rescaled into the class (and kept >= lower when given)."""
    k = int(rng.integers(1, 12)) if pieces is None else pieces
    edges = np.sort(rng.uniform(-4, 4, k + 1))
    edges = np.unique(edges)
    if len(edges) < 2:
        edges = np.array([-1.0, 1.0])
    vals = rng.uniform(-3, 3, len(edges) - 1)
    if lower is not None:
        vals = np.maximum(vals, lower)
    g = StepFunction(tuple(edges), tuple(vals))
    osc = g.oscillation()
    if osc > 1:
        g = StepFunction(g.edges, tuple(np.array(vals) / osc))
    return g


# ---------------------------------------------------------------- normal quantile


def normal_quantile_t_delta(delta: float, tol: float = 1e-12) -> float:
    """Smallest t with P(N(0,1) > t) <= 1 - exp(-1/delta^2), i.e. log Phi(t) >= -1/delta^2."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    target = -1.0 / delta**2
    lo, hi = -1.0, 1.0
    while float(log_ndtr(lo)) >= target:
        lo *= 2.0
    while float(log_ndtr(hi)) < target:
        hi *= 2.0
    while hi - lo > tol * max(1.0, abs(lo)):
        mid = 0.5 * (lo + hi)
        if float(log_ndtr(mid)) >= target:
            hi = mid
        else:
            lo = mid
    return hi
