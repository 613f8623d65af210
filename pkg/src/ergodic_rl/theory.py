"""Closed-form reference policies and the sigmoid indifference-point fit."""

from __future__ import annotations

import csv
import enum
import io
import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
from scipy.special import expit

from .environments import DomainError, PortfolioConfig, ToyConfig
from .nn import ShapeError


class DegenerateConfigurationError(ValueError):
    pass


class FitDegenerateError(ValueError):
    pass


class IndifferenceOutOfRange(UserWarning):
    pass


def _check_unit(name: str, value: float) -> float:
    if not 0.0 <= value <= 1.0:
        warnings.warn(f"{name} = {value:.6g} lies outside [0, 1]", IndifferenceOutOfRange, stacklevel=3)
    return value


def indifference_expected_toy(r1: float, r2: float, r_safe: float) -> float:
    """Probability of the worst outcome at which safe and risky have equal expected factor."""
    if r1 == r2:
        raise DegenerateConfigurationError("r1 == r2: risky action carries no risk")
    return _check_unit("p_E", (r_safe - r2) / (r1 - r2))


def indifference_time_toy(r1: float, r2: float, r_safe: float) -> float:
    """Probability at which safe and risky have equal time-average (log) growth."""
    if min(r1, r2, r_safe) <= 0:
        raise DomainError("all factors must be positive for log growth")
    if r1 == r2:
        raise DegenerateConfigurationError("r1 == r2: risky action carries no risk")
    return _check_unit("p_T", (math.log(r_safe) - math.log(r2)) / (math.log(r1) - math.log(r2)))


def kelly_objective(f, p, r_win: float, r_loss: float):
    """Expected log growth per round when a fraction ``f`` is bet."""
    f = np.asarray(f, dtype=float)
    up = 1 + f * (r_win - 1)
    down = 1 + f * (r_loss - 1)
    if np.any(up <= 0) or np.any(down <= 0):
        raise DomainError("log argument must be positive; reduce f")
    g = p * np.log(up) + (1 - p) * np.log(down)
    return float(g) if g.ndim == 0 else g


class KellyFraction(NamedTuple):
    value: float
    unclamped: float


def kelly_fraction(p, r_win: float, r_loss: float) -> KellyFraction:
    """Growth-optimal fraction, clamped to the action space [0, 1]."""
    if r_win == 1 or r_loss == 1:
        raise DegenerateConfigurationError("r_win and r_loss must differ from 1")
    if not r_win > 1 > r_loss > 0:
        raise DomainError(f"need r_win > 1 > r_loss > 0, got {r_win}, {r_loss}")
    p = np.asarray(p, dtype=float)
    raw = (p * (r_win - r_loss) + r_loss - 1) / ((r_win - 1) * (1 - r_loss))
    clamped = np.clip(raw, 0.0, 1.0)
    if raw.ndim == 0:
        return KellyFraction(float(clamped), float(raw))
    return KellyFraction(clamped, raw)


def ev_threshold_portfolio(r_win: float, r_loss: float) -> float:
    """Win probability above which the expected return of the bet exceeds 1."""
    if r_win == r_loss:
        raise DegenerateConfigurationError("r_win == r_loss")
    return (1 - r_loss) / (r_win - r_loss)


@dataclass(frozen=True)
class SigmoidParams:
    k: float
    p0: float


def sigmoid_eval(params: SigmoidParams, p):
    out = expit(params.k * (np.asarray(p, dtype=float) - params.p0))
    return float(out) if out.ndim == 0 else out


@dataclass
class PolicyCurve:
    """Policy output over an increasing grid of probabilities.

    ``values`` is P(safe) for the toy model and the invested fraction for the
    portfolio.  Spread statistics are optional and only present for curves
    aggregated over several agents.
    """

    grid: np.ndarray
    values: np.ndarray
    label: str = ""
    mean: Optional[np.ndarray] = None
    median: Optional[np.ndarray] = None
    q25: Optional[np.ndarray] = None
    q75: Optional[np.ndarray] = None
    n: Optional[np.ndarray] = None

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.grid.shape != self.values.shape or self.grid.ndim != 1:
            raise ShapeError("grid and values must be 1-d arrays of equal length")
        if np.any(np.diff(self.grid) <= 0):
            raise ValueError("grid must be strictly increasing")
        if np.any(self.values < 0) or np.any(self.values > 1):
            raise ValueError("policy values must lie in [0, 1]")

    def to_csv(self, path=None, experiment: Optional[str] = None, M: int = 0) -> str:
        """Serialise in the ``policy_curve.csv`` schema."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(POLICY_CURVE_COLUMNS)
        write_curve_rows(w, self, experiment or self.label, M)
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


POLICY_CURVE_COLUMNS = ["experiment", "M", "p", "mean", "median", "q25", "q75", "n_converged"]


def fmt(x) -> str:
    return f"{float(x):.12g}"


def write_curve_rows(writer, curve: PolicyCurve, experiment: str, M: int):
    def col(arr):
        return curve.values if arr is None else arr

    n = curve.n if curve.n is not None else np.zeros(len(curve.grid), dtype=int)
    for i, p in enumerate(curve.grid):
        writer.writerow(
            [
                experiment,
                int(M),
                fmt(p),
                fmt(col(curve.mean)[i]),
                fmt(col(curve.median)[i]),
                fmt(col(curve.q25)[i]),
                fmt(col(curve.q75)[i]),
                int(n[i]),
            ]
        )


class SigmoidFit(NamedTuple):
    params: SigmoidParams
    residual: float

    @property
    def valid(self) -> bool:
        return self.params.k > 0


_K_MAX = 1e4


def _sse(k, p0, x, y):
    r = sigmoid_eval(SigmoidParams(k, p0), x) - y
    return float(r @ r)


def sigmoid_fit(curve, values=None, max_iter: int = 100, tol: float = 1e-10) -> SigmoidFit:
    """Least-squares fit of ``1 / (1 + exp(-k (p - p0)))``.

    Accepts a :class:`PolicyCurve` or ``(grid, values)``.  A coarse grid search
    over ``k`` in [1, 200] (log spaced) and ``p0`` over the hull of the grid
    seeds a damped Gauss-Newton refinement, so the result is deterministic and
    independent of the input ordering.
    """
    if isinstance(curve, PolicyCurve):
        x, y = curve.grid, curve.values
    else:
        x, y = np.asarray(curve, dtype=float), np.asarray(values, dtype=float)
    order = np.argsort(x, kind="stable")
    x, y = x[order], y[order]
    if x.size < 4:
        raise FitDegenerateError("need at least 4 points to fit a sigmoid")
    if np.ptp(y) == 0:
        raise FitDegenerateError("constant curve: steepness is unidentifiable")

    ks = np.geomspace(1.0, 200.0, 64)
    p0s = np.linspace(x[0], x[-1], 201)
    pred = expit(ks[:, None, None] * (x[None, None, :] - p0s[None, :, None]))
    sse = ((pred - y) ** 2).sum(axis=-1)
    i, j = np.unravel_index(np.argmin(sse), sse.shape)
    k, p0 = float(ks[i]), float(p0s[j])
    best = _sse(k, p0, x, y)

    for _ in range(max_iter):
        s = sigmoid_eval(SigmoidParams(k, p0), x)
        r = s - y
        ds = s * (1 - s)
        J = np.column_stack([ds * (x - p0), -ds * k])
        step, *_ = np.linalg.lstsq(J, -r, rcond=None)
        t = 1.0
        improved = False
        while t > 1e-6:
            k_new = min(k + t * step[0], _K_MAX)
            p_new = p0 + t * step[1]
            cand = _sse(k_new, p_new, x, y)
            if cand <= best:
                improved = True
                break
            t *= 0.5
        if not improved:
            break
        delta = max(abs(k_new - k) / max(1.0, abs(k)), abs(p_new - p0))
        k, p0, best = k_new, p_new, cand
        if delta < tol:
            break
    return SigmoidFit(SigmoidParams(k, p0), best)


def policy_mse(curve_a: PolicyCurve, curve_b: PolicyCurve) -> float:
    if curve_a.grid.shape != curve_b.grid.shape or not np.allclose(curve_a.grid, curve_b.grid, rtol=0, atol=1e-12):
        raise ShapeError("policy curves are defined on different grids")
    d = curve_a.values - curve_b.values
    return float(np.mean(d * d))


class PolicyKind(enum.Enum):
    EXPECTED_VALUE_TOY = "ev_toy"
    TIME_GROWTH_TOY = "time_toy"
    EXPECTED_VALUE_PORTFOLIO = "ev_portfolio"
    KELLY_PORTFOLIO = "kelly_portfolio"


@dataclass(frozen=True)
class TheoreticalPolicy:
    kind: PolicyKind
    config: object

    def __post_init__(self):
        toy = self.kind in (PolicyKind.EXPECTED_VALUE_TOY, PolicyKind.TIME_GROWTH_TOY)
        want = ToyConfig if toy else PortfolioConfig
        if not isinstance(self.config, want):
            raise TypeError(f"{self.kind.name} needs a {want.__name__}")

    def threshold(self) -> float:
        c = self.config
        if self.kind is PolicyKind.EXPECTED_VALUE_TOY:
            return indifference_expected_toy(c.r1, c.r2, c.r_safe)
        if self.kind is PolicyKind.TIME_GROWTH_TOY:
            return indifference_time_toy(c.r1, c.r2, c.r_safe)
        return ev_threshold_portfolio(c.r_win, c.r_loss)

    def __call__(self, p):
        p = np.asarray(p, dtype=float)
        c = self.config
        if self.kind is PolicyKind.KELLY_PORTFOLIO:
            return kelly_fraction(p, c.r_win, c.r_loss).value
        t = self.threshold()
        if self.kind is PolicyKind.EXPECTED_VALUE_PORTFOLIO:
            return np.where(p >= t, 1.0, 0.0)
        # toy: probability of choosing safe, a hard step at the indifference point
        return np.where(p > t, 1.0, np.where(p < t, 0.0, 0.5))


def theoretical_curve(policy: TheoreticalPolicy, grid) -> PolicyCurve:
    grid = np.asarray(grid, dtype=float)
    return PolicyCurve(grid, np.asarray(policy(grid), dtype=float), label=policy.kind.value)


def default_grid(n: int = 21) -> np.ndarray:
    return np.round(np.linspace(0.0, 1.0, n), 12)
