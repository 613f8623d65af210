"""Self-contained SVG charts rendered from the sweep CSVs.

Output is a pure function of the input rows: coordinates are printed with a
fixed number of decimals and nothing time- or platform-dependent is
embedded, so rendering the same CSV twice gives identical bytes.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence
from xml.sax.saxutils import escape

import numpy as np

from .environments import PortfolioConfig, ToyConfig
from .experiments import INDIFFERENCE_COLUMNS, MSE_COLUMNS
from .theory import (
    POLICY_CURVE_COLUMNS,
    PolicyKind,
    TheoreticalPolicy,
    ev_threshold_portfolio,
    indifference_expected_toy,
    indifference_time_toy,
)

CHART_KINDS = ("policy-curve", "indifference-vs-M", "mse-vs-M")
PALETTE = ("#1f5fa8", "#c0392b", "#2e8b57", "#8e44ad", "#d68910")


class ReportError(RuntimeError):
    pass


def read_table(path, columns: Sequence[str]) -> list[dict]:
    """Rows of a CSV whose header must contain ``columns``; empty files are errors."""
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            header = reader.fieldnames
            rows = list(reader)
    except OSError as exc:
        raise ReportError(f"cannot read {path}: {exc.strerror}") from None
    if not header:
        raise ReportError(f"{path} is empty")
    missing = [c for c in columns if c not in header]
    if missing:
        raise ReportError(f"{path} is missing column(s): {', '.join(missing)}")
    if not rows:
        raise ReportError(f"{path} has a header but no rows")
    return rows


def _num(x: str) -> float:
    return float(x) if x not in ("", "nan") else math.nan


@dataclass
class Axes:
    """Maps data coordinates to a fixed-size SVG canvas."""

    x_range: tuple
    y_range: tuple
    width: int = 640
    height: int = 420
    left: int = 64
    right: int = 20
    top: int = 44
    bottom: int = 52

    def px(self, x: float, y: float) -> tuple:
        x0, x1 = self.x_range
        y0, y1 = self.y_range
        u = (x - x0) / (x1 - x0)
        v = (y - y0) / (y1 - y0)
        return (
            self.left + u * (self.width - self.left - self.right),
            self.height - self.bottom - v * (self.height - self.top - self.bottom),
        )


def _pts(ax: Axes, xs, ys) -> str:
    out = []
    for x, y in zip(xs, ys):
        if math.isfinite(x) and math.isfinite(y):
            px, py = ax.px(x, y)
            out.append(f"{px:.2f},{py:.2f}")
    return " ".join(out)


class Svg:
    def __init__(self, ax: Axes, title: str, x_label: str, y_label: str):
        self.ax = ax
        self.items = []
        self.legend = []
        self._frame(title, x_label, y_label)

    def _frame(self, title, x_label, y_label):
        ax = self.ax
        x0, y0 = ax.px(ax.x_range[0], ax.y_range[0])
        x1, y1 = ax.px(ax.x_range[1], ax.y_range[1])
        self.items.append(f'<rect x="{x0:.2f}" y="{y1:.2f}" width="{x1 - x0:.2f}" height="{y0 - y1:.2f}" fill="none" stroke="#333" stroke-width="1"/>')
        for t in _ticks(*ax.x_range):
            px, _ = ax.px(t, ax.y_range[0])
            self.items.append(f'<line x1="{px:.2f}" y1="{y0:.2f}" x2="{px:.2f}" y2="{y0 + 5:.2f}" stroke="#333"/>')
            self.items.append(f'<text x="{px:.2f}" y="{y0 + 18:.2f}" font-size="11" text-anchor="middle">{_label(t)}</text>')
        for t in _ticks(*ax.y_range):
            _, py = ax.px(ax.x_range[0], t)
            self.items.append(f'<line x1="{x0:.2f}" y1="{py:.2f}" x2="{x1:.2f}" y2="{py:.2f}" stroke="#e3e3e3"/>')
            self.items.append(f'<text x="{x0 - 6:.2f}" y="{py + 4:.2f}" font-size="11" text-anchor="end">{_label(t)}</text>')
        self.items.append(f'<text x="{ax.width / 2:.2f}" y="24" font-size="15" text-anchor="middle">{escape(title)}</text>')
        self.items.append(f'<text x="{(x0 + x1) / 2:.2f}" y="{ax.height - 12:.2f}" font-size="12" text-anchor="middle">{escape(x_label)}</text>')
        cy = (y0 + y1) / 2
        self.items.append(f'<text x="16" y="{cy:.2f}" font-size="12" text-anchor="middle" transform="rotate(-90 16 {cy:.2f})">{escape(y_label)}</text>')

    def band(self, xs, lo, hi, color, label=None):
        pts = _pts(self.ax, list(xs) + list(xs)[::-1], list(hi) + list(lo)[::-1])
        self.items.append(f'<polygon points="{pts}" fill="{color}" fill-opacity="0.2" stroke="none"/>')
        if label:
            self.legend.append((label, color, "band"))

    def line(self, xs, ys, color, label=None, dash=None, markers=False):
        d = f' stroke-dasharray="{dash}"' if dash else ""
        self.items.append(f'<polyline points="{_pts(self.ax, xs, ys)}" fill="none" stroke="{color}" stroke-width="2"{d}/>')
        if markers:
            for x, y in zip(xs, ys):
                if math.isfinite(x) and math.isfinite(y):
                    px, py = self.ax.px(x, y)
                    self.items.append(f'<circle cx="{px:.2f}" cy="{py:.2f}" r="3" fill="{color}"/>')
        if label:
            self.legend.append((label, color, dash or "solid"))

    def vline(self, x, color, label=None):
        ax = self.ax
        if not ax.x_range[0] <= x <= ax.x_range[1]:
            return
        self.line([x, x], list(ax.y_range), color, label, dash="2 3")

    def hline(self, y, color, label=None):
        ax = self.ax
        if not ax.y_range[0] <= y <= ax.y_range[1]:
            return
        self.line(list(ax.x_range), [y, y], color, label, dash="2 3")

    def render(self) -> str:
        ax = self.ax
        lx = ax.left + 10
        ly = ax.top + 14
        leg = []
        for i, (label, color, style) in enumerate(self.legend):
            y = ly + 16 * i
            if style == "band":
                leg.append(f'<rect x="{lx}" y="{y - 6}" width="18" height="10" fill="{color}" fill-opacity="0.2"/>')
            else:
                d = "" if style == "solid" else f' stroke-dasharray="{style}"'
                leg.append(f'<line x1="{lx}" y1="{y}" x2="{lx + 18}" y2="{y}" stroke="{color}" stroke-width="2"{d}/>')
            leg.append(f'<text x="{lx + 24}" y="{y + 4}" font-size="11">{escape(label)}</text>')
        body = "\n".join(self.items + leg)
        return (
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{ax.width}" height="{ax.height}" '
            f'viewBox="0 0 {ax.width} {ax.height}" font-family="sans-serif">\n'
            f'<rect width="100%" height="100%" fill="white"/>\n{body}\n</svg>\n'
        )


def _ticks(lo: float, hi: float, n: int = 5) -> list:
    span = hi - lo
    raw = span / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw), default=raw)
    start = math.ceil(lo / step - 1e-9) * step
    out = []
    t = start
    while t <= hi + 1e-9 * span:
        out.append(round(t, 10))
        t += step
    return out


def _label(t: float) -> str:
    return f"{t:g}"


def _padded(lo: float, hi: float) -> tuple:
    if not (math.isfinite(lo) and math.isfinite(hi)):
        return (0.0, 1.0)
    if hi - lo < 1e-12:
        pad = 0.5 if lo == 0 else abs(lo) * 0.1
        return (lo - pad, hi + pad)
    pad = 0.05 * (hi - lo)
    return (lo - pad, hi + pad)


@dataclass(frozen=True)
class Overlay:
    """Reward settings used to draw the theoretical reference curves."""

    toy: ToyConfig = ToyConfig()
    portfolio: PortfolioConfig = PortfolioConfig()


def _write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write(text)
    return path


def policy_curve_svgs(policy_csv, overlay: Optional[Overlay] = None) -> dict:
    """One chart per ``(experiment, M)``: mean and median with an IQR band plus theory."""
    rows = read_table(policy_csv, POLICY_CURVE_COLUMNS)
    overlay = overlay or Overlay()
    groups: dict = {}
    for r in rows:
        groups.setdefault((r["experiment"], int(r["M"])), []).append(r)
    out = {}
    fine = np.linspace(0.0, 1.0, 401)
    for (experiment, M), grp in groups.items():
        grp.sort(key=lambda r: float(r["p"]))
        p = [float(r["p"]) for r in grp]
        col = {k: [_num(r[k]) for r in grp] for k in ("mean", "median", "q25", "q75")}
        toy = experiment.startswith("toy")
        y_label = "P(safe)" if toy else "invested fraction f"
        fig = Svg(Axes((0.0, 1.0), (-0.02, 1.02)), f"{experiment}, M = {M}", "p", y_label)
        fig.band(p, col["q25"], col["q75"], PALETTE[0], "interquartile range")
        fig.line(p, col["median"], PALETTE[0], "median", markers=True)
        fig.line(p, col["mean"], PALETTE[4], "mean", dash="5 3")
        if toy:
            fig.vline(indifference_expected_toy(overlay.toy.r1, overlay.toy.r2, overlay.toy.r_safe), PALETTE[1], "p_E (expected value)")
            fig.vline(indifference_time_toy(overlay.toy.r1, overlay.toy.r2, overlay.toy.r_safe), PALETTE[2], "p_T (time average)")
        else:
            pc = overlay.portfolio
            ev = TheoreticalPolicy(PolicyKind.EXPECTED_VALUE_PORTFOLIO, pc)(fine)
            kelly = TheoreticalPolicy(PolicyKind.KELLY_PORTFOLIO, pc)(fine)
            fig.line(fine, ev, PALETTE[1], "expected-value policy", dash="4 3")
            fig.line(fine, kelly, PALETTE[2], "Kelly fraction", dash="4 3")
            fig.vline(ev_threshold_portfolio(pc.r_win, pc.r_loss), PALETTE[1])
        out[(experiment, M)] = fig.render()
    return out


def indifference_svg(indifference_csv) -> str:
    rows = sorted(read_table(indifference_csv, INDIFFERENCE_COLUMNS), key=lambda r: int(r["M"]))
    M = [float(r["M"]) for r in rows]
    p0 = [_num(r["p0"]) for r in rows]
    p_E = _num(rows[0]["p_E"])
    p_T = _num(rows[0]["p_T"])
    vals = [v for v in p0 + [p_E, p_T] if math.isfinite(v)]
    fig = Svg(Axes(_padded(min(M), max(M)), _padded(min(vals), max(vals))), "Fitted indifference point", "M", "p0")
    fig.line(M, p0, PALETTE[0], "fitted p0", markers=True)
    fig.hline(p_E, PALETTE[1], "p_E (expected value)")
    fig.hline(p_T, PALETTE[2], "p_T (time average)")
    return fig.render()


def mse_svg(mse_csv) -> str:
    rows = sorted(read_table(mse_csv, MSE_COLUMNS), key=lambda r: int(r["M"]))
    M = [float(r["M"]) for r in rows]
    ev = [_num(r["mse_ev"]) for r in rows]
    kelly = [_num(r["mse_kelly"]) for r in rows]
    vals = [v for v in ev + kelly if math.isfinite(v)] or [0.0, 1.0]
    fig = Svg(Axes(_padded(min(M), max(M)), _padded(0.0, max(vals))), "Distance of the learned policy to theory", "M", "MSE")
    fig.line(M, ev, PALETTE[1], "vs expected-value policy", markers=True)
    fig.line(M, kelly, PALETTE[2], "vs Kelly fraction", markers=True)
    return fig.render()


def render_reports(in_dir, out_dir, overlay: Optional[Overlay] = None) -> list:
    """Render every chart whose source CSV exists in ``in_dir``.

    All charts are built in memory first, so a bad input leaves no partial
    output behind.
    """
    in_dir, out_dir = Path(in_dir), Path(out_dir)
    charts = {}
    src = in_dir / "policy_curve.csv"
    if src.exists():
        for (experiment, M), text in policy_curve_svgs(src, overlay).items():
            charts[f"policy_curve_{experiment}_M{M}.svg"] = text
    if (in_dir / "indifference.csv").exists():
        charts["indifference_vs_M.svg"] = indifference_svg(in_dir / "indifference.csv")
    if (in_dir / "mse_report.csv").exists():
        charts["mse_vs_M.svg"] = mse_svg(in_dir / "mse_report.csv")
    if not charts:
        raise ReportError(f"no policy_curve.csv, indifference.csv or mse_report.csv in {in_dir}")
    return [_write(out_dir / name, text) for name, text in sorted(charts.items())]
