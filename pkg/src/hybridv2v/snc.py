"""Stochastic network calculus primitives.

Piecewise-linear cumulative curves, non-increasing tail (violation
probability) bounds, and moment-generating-function arrival envelopes,
together with the convolution and deviation operators the channel models
are assembled from. Everything here is a pure function of its inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Curve",
    "TailBound",
    "StochasticArrival",
    "UnstableSystem",
    "NonConvergent",
    "MismatchedTheta",
    "minplus_convolve",
    "convolve_tailbounds",
    "stieltjes_convolve",
    "horizontal_deviation",
    "aggregate_arrivals",
    "poisson_arrival",
]

_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


class UnstableSystem(Exception):
    """Long-run arrival rate exceeds what the service curve can drain."""


class NonConvergent(Exception):
    """Step-halving refinement failed to settle within tolerance."""


class MismatchedTheta(Exception):
    """Envelopes with different MGF parameters cannot be summed."""


class Curve:
    """Piecewise-linear non-decreasing curve through explicit breakpoints.

    Defined for every t >= 0 by interpolation between breakpoints and by
    extrapolation of the final segment beyond the last one. The first
    breakpoint must sit at t = 0.
    """

    def __init__(self, breakpoints: Iterable[Sequence[float]]):
        pts = [(float(t), float(v)) for t, v in breakpoints]
        if not pts:
            raise ValueError("curve needs at least one breakpoint")
        times = np.array([p[0] for p in pts], dtype=float)
        values = np.array([p[1] for p in pts], dtype=float)
        if times[0] != 0.0:
            raise ValueError("first breakpoint must sit at t=0")
        if times.size > 1 and np.any(np.diff(times) <= 0.0):
            raise ValueError("breakpoint times must be strictly increasing")
        if values[0] < 0.0 or (values.size > 1 and np.any(np.diff(values) < 0.0)):
            raise ValueError("values must be non-negative and non-decreasing")
        self.times = times
        self.values = values

    @classmethod
    def linear(cls, rate: float, offset: float = 0.0) -> "Curve":
        if rate < 0.0:
            raise ValueError("rate must be non-negative")
        if rate == 0.0:
            return cls([(0.0, offset)])
        return cls([(0.0, offset), (1.0, offset + rate)])

    @property
    def final_slope(self) -> float:
        if self.times.size < 2:
            return 0.0
        return float((self.values[-1] - self.values[-2])
                     / (self.times[-1] - self.times[-2]))

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        out = np.interp(t, self.times, self.values)
        if self.times.size > 1:
            beyond = t > self.times[-1]
            if np.any(beyond):
                extrap = self.values[-1] + (t - self.times[-1]) * self.final_slope
                out = np.where(beyond, extrap, out)
        return out if out.ndim else float(out)

    def first_times_at(self, levels):
        """Earliest t with value(t) >= level, per level; inf when unreachable."""
        levels = np.asarray(levels, dtype=float)
        out = np.empty(levels.shape, dtype=float)
        flat = levels.ravel()
        res = out.ravel()
        vs, ts = self.values, self.times
        slope = self.final_slope
        idx = np.searchsorted(vs, flat, side="left")
        for k, (lvl, i) in enumerate(zip(flat, idx)):
            if i == 0:
                res[k] = 0.0
            elif i < vs.size:
                res[k] = ts[i - 1] + (lvl - vs[i - 1]) / (vs[i] - vs[i - 1]) \
                    * (ts[i] - ts[i - 1])
            elif lvl <= vs[-1]:
                res[k] = ts[-1]
            elif slope > 0.0:
                res[k] = ts[-1] + (lvl - vs[-1]) / slope
            else:
                res[k] = np.inf
        return out if out.ndim else float(out)

    def __repr__(self):
        pts = ", ".join(f"({t:g}, {v:g})" for t, v in zip(self.times, self.values))
        return f"Curve([{pts}])"


@dataclass(frozen=True)
class TailBound:
    """Non-increasing violation-probability bound x -> [0, 1].

    ``evaluator`` is the raw bound and must accept numpy arrays. Values are
    clamped to [0, 1], and forced to 1 at and below ``support_floor``.
    """

    evaluator: Callable
    support_floor: float = 0.0

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        raw = np.clip(np.asarray(self.evaluator(x), dtype=float), 0.0, 1.0)
        out = np.where(x <= self.support_floor, 1.0, raw)
        return out if out.ndim else float(out)

    @classmethod
    def exponential(cls, scale: float) -> "TailBound":
        if scale <= 0.0:
            raise ValueError("scale must be positive")
        return cls(lambda x, s=scale: np.exp(-np.asarray(x, dtype=float) / s),
                   support_floor=0.0)

    @classmethod
    def step(cls, at: float = 0.0) -> "TailBound":
        """Unit step: 1 up to ``at``, 0 beyond (a deterministic bound)."""
        return cls(lambda x: np.zeros_like(np.asarray(x, dtype=float)),
                   support_floor=at)

    @classmethod
    def from_samples(cls, xs, probs) -> "TailBound":
        """Interpolate a sampled non-increasing bound (log-linear in x)."""
        xs = np.asarray(xs, dtype=float)
        probs = np.asarray(probs, dtype=float)
        if xs.size != probs.size or xs.size < 2:
            raise ValueError("need matching sample arrays of length >= 2")
        if np.any(np.diff(xs) <= 0.0):
            raise ValueError("sample grid must increase strictly")

        def evaluator(x, xs=xs, ps=probs):
            return np.interp(np.asarray(x, dtype=float), xs, ps,
                             left=ps[0], right=ps[-1])

        return cls(evaluator, support_floor=-np.inf)


@dataclass(frozen=True)
class StochasticArrival:
    """MGF arrival envelope: E exp(theta A(s,t)) <= exp(theta (rho (t-s) + sigma))."""

    rho: float
    sigma: float
    theta: float

    def __post_init__(self):
        if self.theta <= 0.0:
            raise ValueError("theta must be positive")
        if self.rho < 0.0 or self.sigma < 0.0:
            raise ValueError("rho and sigma must be non-negative")


def poisson_arrival(rate: float, theta: float, increment: float = 1.0) -> StochasticArrival:
    """Envelope of a Poisson packet process; ``increment`` is work per packet."""
    if rate < 0.0:
        raise ValueError("rate must be non-negative")
    rho = rate * np.expm1(theta * increment) / theta
    return StochasticArrival(rho=float(rho), sigma=0.0, theta=float(theta))


def aggregate_arrivals(arrivals: Sequence[StochasticArrival]) -> StochasticArrival:
    """Sum independent envelopes sharing one MGF parameter."""
    if not arrivals:
        raise ValueError("nothing to aggregate")
    theta = arrivals[0].theta
    for env in arrivals[1:]:
        if env.theta != theta:
            raise MismatchedTheta(
                f"cannot aggregate envelopes at theta={env.theta} and theta={theta}")
    return StochasticArrival(rho=float(sum(e.rho for e in arrivals)),
                             sigma=float(sum(e.sigma for e in arrivals)),
                             theta=theta)


def _minplus_at(a: Curve, b: Curve, t: float) -> float:
    # For piecewise-linear a and b the map tau -> a(tau) + b(t - tau) is
    # piecewise linear with kinks only at breakpoints of a and at t minus
    # breakpoints of b, so minimizing over that candidate set is exact.
    cands = np.concatenate([a.times, t - b.times, [0.0, t]])
    cands = np.clip(cands, 0.0, t)
    return float(np.min(a(cands) + b(t - cands)))


def minplus_convolve(a: Curve, b: Curve) -> Curve:
    """Min-plus convolution: (a convolve b)(t) = inf over splits of a + b.

    Exact at its own breakpoints. The initial grid holds all pairwise
    breakpoint sums; midpoints are inserted adaptively wherever the active
    minimizer switches between grid points, so interpolation error is
    driven below fp noise.
    """
    sums = (a.times[:, None] + b.times[None, :]).ravel()
    span = float(max(sums.max(), 1.0))
    grid = np.unique(np.concatenate([sums, [span + 1.0, 2.0 * span + 2.0]]))
    vals = np.array([_minplus_at(a, b, t) for t in grid])
    for _ in range(60):
        mids = 0.5 * (grid[:-1] + grid[1:])
        exact = np.array([_minplus_at(a, b, t) for t in mids])
        lin = 0.5 * (vals[:-1] + vals[1:])
        bad = np.abs(exact - lin) > 1e-12 * np.maximum(1.0, np.abs(exact))
        if not bad.any():
            break
        grid = np.unique(np.concatenate([grid, mids[bad]]))
        vals = np.array([_minplus_at(a, b, t) for t in grid])
    vals = np.maximum.accumulate(vals)  # absorb fp noise only
    return Curve(zip(grid, vals))


def convolve_tailbounds(f: TailBound, g: TailBound, x: float,
                        grid_steps: int = 10_000) -> float:
    """min(1, inf over 0 <= u <= x of f(u) + g(x - u)).

    Deterministic grid search at step x/grid_steps followed by one local
    golden-section refinement around the grid argmin. An identically-zero
    bound certifies its event never happens and absorbs the composition.
    Points just past each support floor join the grid so the jump there
    cannot be stepped over.
    """
    x = float(x)
    if float(f(0.0)) == 0.0 or float(g(0.0)) == 0.0:
        # non-increasing and zero at the origin means zero everywhere
        return 0.0
    if x <= 0.0:
        return min(1.0, float(f(0.0)) + float(g(x)))
    us = np.linspace(0.0, x, grid_steps + 1)
    tiny = 1e-9 * max(1.0, x)
    extra = []
    for cand in (f.support_floor, f.support_floor + tiny,
                 x - g.support_floor, x - g.support_floor - tiny):
        if np.isfinite(cand) and 0.0 < cand < x:
            extra.append(cand)
    if extra:
        us = np.unique(np.concatenate([us, extra]))
    vals = f(us) + g(x - us)
    i = int(np.argmin(vals))
    best = float(vals[i])
    lo = us[max(i - 1, 0)]
    hi = us[min(i + 1, us.size - 1)]

    def h(u):
        return float(f(u)) + float(g(x - u))

    a, b = lo, hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = h(c), h(d)
    for _ in range(48):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = h(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = h(d)
    best = min(best, fc, fd)
    return min(1.0, best)


def _default_window(b: TailBound) -> tuple:
    hi = 1.0
    while hi < 1e18:
        # the tail must be nearly exhausted, not merely flat: a plateau at 1
        # ahead of a distant knee is flat over any two octaves
        if float(b(hi)) <= 1e-13 \
                and abs(float(b(hi)) - float(b(2.0 * hi))) < 1e-13 \
                and abs(float(b(hi)) - float(b(4.0 * hi))) < 1e-13:
            break
        hi *= 2.0
    return (0.0, 2.0 * hi)


def stieltjes_convolve(a: TailBound, b: TailBound, x: float,
                       window: tuple | None = None, tol: float = 1e-6,
                       max_depth: int = 22, start_cells: int = 64) -> float:
    """Riemann-Stieltjes convolution: integral of a(x - y) against |db|(y).

    ``b`` is read as a function of bounded variation on a finite truncation
    window; its total-variation measure weighs the midpoint values of the
    integrand. Cell counts double until two successive refinements agree
    within ``tol``; NonConvergent is raised if ``max_depth`` is exhausted.
    """
    x = float(x)
    y0, y1 = window if window is not None else _default_window(b)
    if not (np.isfinite(y0) and np.isfinite(y1)) or y1 <= y0:
        raise ValueError("truncation window must be finite and increasing")

    def midpoint_sum(cells: int) -> float:
        edges = np.linspace(y0, y1, cells + 1)
        weights = np.abs(np.diff(b(edges)))
        mids = 0.5 * (edges[:-1] + edges[1:])
        return float(np.sum(a(x - mids) * weights))

    cells = start_cells
    prev = midpoint_sum(cells)
    for _ in range(max_depth):
        cells *= 2
        cur = midpoint_sum(cells)
        if abs(cur - prev) <= tol * max(1.0, abs(cur)):
            return cur
        prev = cur
    raise NonConvergent(
        f"stieltjes refinement still moving by {abs(cur - prev):.3e} "
        f"after {max_depth} halvings")


def horizontal_deviation(alpha: Curve, beta: Curve, x: float,
                         grid_steps: int = 10_000) -> float:
    """sup over t >= 0 of the time beta needs to catch alpha(t) + x."""
    x = float(x)
    if beta.final_slope < alpha.final_slope - 1e-12:
        raise UnstableSystem(
            f"service rate {beta.final_slope:g} below arrival rate "
            f"{alpha.final_slope:g}")
    t_end = float(max(alpha.times[-1], beta.times[-1], 1.0)) + 1.0
    ts = np.unique(np.concatenate([
        np.linspace(0.0, t_end, grid_steps + 1), alpha.times, beta.times]))
    catch = beta.first_times_at(alpha(ts) + x)
    if np.any(~np.isfinite(catch)):
        raise UnstableSystem("offset arrivals exceed the service curve forever")
    devs = np.maximum(catch - ts, 0.0)
    i = int(np.argmax(devs))
    best = float(devs[i])

    def h(t):
        c = float(beta.first_times_at(np.array([alpha(t) + x]))[0])
        if not np.isfinite(c):
            raise UnstableSystem("offset arrivals exceed the service curve forever")
        return max(c - t, 0.0)

    a, b = ts[max(i - 1, 0)], ts[min(i + 1, ts.size - 1)]
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = h(c), h(d)
    for _ in range(48):
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = h(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = h(d)
    return max(best, fc, fd)
