"""Command line entry point: ``ergodic-rl <command>`` or ``python -m ergodic_rl``.

Exit codes: 0 success, 1 runtime or domain failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
import warnings
from dataclasses import replace
from pathlib import Path

from . import actor_critic as ac
from . import dqn
from .config import ConfigError, LoadedConfig, dump_config, load, parse_config_text, profile_config
from .environments import DomainError, ergodicity_diagnostic, random_source
from .experiments import (
    ExperimentKind,
    extract_indifference,
    run_full_policy_experiment,
    run_portfolio_sweep,
    run_toy_sweep,
    compute_mse_report,
    portfolio_theory_curves,
)
from .nn import InvalidConfigurationError
from .report import Overlay, ReportError, render_reports
from .theory import (
    DegenerateConfigurationError,
    IndifferenceOutOfRange,
    default_grid,
    ev_threshold_portfolio,
    fmt,
    indifference_expected_toy,
    indifference_time_toy,
    kelly_fraction,
)

log = logging.getLogger("ergodic_rl")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _common(p: argparse.ArgumentParser, out_default=None):
    p.add_argument("--config", metavar="PATH", help="config file layered over the chosen profile")
    p.add_argument("--out", metavar="DIR", default=out_default, help="output directory")
    p.add_argument("--seed", type=int, help="base seed (sweeps) or agent seed (single runs)")
    p.add_argument("--profile", choices=("paper", "desk"), default="desk", help="bundled settings to start from")
    p.add_argument("--verbose", action="store_true", help="debug logging and per-episode training logs")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ergodic-rl",
        description="Expected-value versus time-average learning in multiplicative environments.",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("theory", help="closed-form indifference points and Kelly fractions")
    _common(p)
    p.add_argument("--model", choices=("toy", "portfolio", "both"), default="both")
    p.add_argument("--r1", type=float, help="toy: worst risky factor")
    p.add_argument("--r2", type=float, help="toy: best risky factor")
    p.add_argument("--r-safe", type=float, help="toy: safe factor")
    p.add_argument("--r-win", type=float, help="portfolio: winning factor")
    p.add_argument("--r-loss", type=float, help="portfolio: losing factor")
    p.add_argument("--grid", type=int, default=21, help="number of p grid points for the Kelly table")

    p = sub.add_parser("train-dqn", help="train one deep Q-learning agent on the toy model")
    _common(p)
    p.add_argument("--p", type=float, default=0.5, help="probability of the worst risky outcome")
    p.add_argument("--M", type=int, default=1, help="rounds per episode")
    p.add_argument("--episodes", type=int)
    p.add_argument("--log-every", type=int, default=0, help="log every k-th episode (with --out)")

    p = sub.add_parser("train-ac", help="train one actor-critic agent on the portfolio problem")
    _common(p)
    p.add_argument("--p", type=float, default=0.5, help="win probability")
    p.add_argument("--M", type=int, default=1, help="rounds per episode")
    p.add_argument("--episodes", type=int)
    p.add_argument("--log-every", type=int, default=0, help="log every k-th episode (with --out)")

    p = sub.add_parser("sweep", help="train populations over the (p, M) grid")
    _common(p, out_default="results")
    p.add_argument("--kind", choices=("toy", "portfolio"), default="toy")

    p = sub.add_parser("full-policy", help="train agents that observe p and learn a whole policy curve")
    _common(p, out_default="results")

    p = sub.add_parser("diagnose", help="time-average versus ensemble-average growth of the risky gamble")
    _common(p)
    p.add_argument("--p", type=float, default=0.5)
    p.add_argument("--T", type=int, help="rounds per trajectory")
    p.add_argument("--n", type=int, help="number of trajectories")

    p = sub.add_parser("report", help="render SVG charts from sweep CSVs")
    _common(p, out_default="results")
    p.add_argument("--in", dest="in_dir", metavar="DIR", help="directory holding the CSVs (default: --out)")
    return parser


def _load(args, kind: ExperimentKind) -> LoadedConfig:
    cfg = load(kind, args.profile, args.config)
    if args.seed is not None:
        cfg = replace(cfg, sweep=replace(cfg.sweep, base_seed=args.seed))
    return cfg


def _load_any(args) -> LoadedConfig:
    """User config layered over the toy profile; ``experiment.kind`` is ignored."""
    base = profile_config(ExperimentKind.TOY_DQN, args.profile)
    if not args.config:
        return base
    path = Path(args.config)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config_text(text, str(path), base)


def _flag_env(config, **values):
    try:
        return replace(config, **values)
    except (DomainError, InvalidConfigurationError) as exc:
        raise ConfigError(str(exc)) from None


def _out_dir(args) -> Path | None:
    if args.out is None:
        return None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write(path: Path, text: str):
    with open(path, "w", newline="") as fh:
        fh.write(text)
    log.info("wrote %s", path)


def cmd_theory(args) -> int:
    rows = []
    if args.model in ("toy", "both"):
        toy = _load_any(args).sweep.toy if args.config else None
        r1 = args.r1 if args.r1 is not None else (toy.r1 if toy else 0.5)
        r2 = args.r2 if args.r2 is not None else (toy.r2 if toy else 2.0)
        rs = args.r_safe if args.r_safe is not None else (toy.r_safe if toy else 1.2)
        p_e = indifference_expected_toy(r1, r2, rs)
        p_t = indifference_time_toy(r1, r2, rs)
        print(f"toy       r1={r1:g} r2={r2:g} r_safe={rs:g}")
        print(f"  p_E = {p_e:.6f}   (expected value: safe preferred for p > p_E)")
        print(f"  p_T = {p_t:.6f}   (time average: safe preferred for p > p_T)")
        rows += [("toy", "p_E", "", fmt(p_e)), ("toy", "p_T", "", fmt(p_t))]
    if args.model in ("portfolio", "both"):
        pc = _load_any(args).sweep.portfolio if args.config else None
        rw = args.r_win if args.r_win is not None else (pc.r_win if pc else 3.0)
        rl = args.r_loss if args.r_loss is not None else (pc.r_loss if pc else 0.2)
        p_e = ev_threshold_portfolio(rw, rl)
        grid = default_grid(args.grid)
        kf = kelly_fraction(grid, rw, rl)
        print(f"portfolio r_win={rw:g} r_loss={rl:g}")
        print(f"  p_E = {p_e:.6f}   (expected value: invest everything for p > p_E)")
        print("       p      f*  f*(unclamped)")
        for p, f, raw in zip(grid, kf.value, kf.unclamped):
            print(f"  {p:6.3f}  {f:6.4f}  {raw:9.4f}")
        rows.append(("portfolio", "p_E", "", fmt(p_e)))
        rows += [("portfolio", "kelly_fraction", fmt(p), fmt(f)) for p, f in zip(grid, kf.value)]
    out = _out_dir(args)
    if out is not None:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model", "quantity", "p", "value"])
        w.writerows(rows)
        _write(out / "theory.csv", buf.getvalue())
    return EXIT_OK


def _single_seed(args, cfg: LoadedConfig) -> int:
    return args.seed if args.seed is not None else cfg.sweep.base_seed


def cmd_train_dqn(args) -> int:
    cfg = _load(args, ExperimentKind.TOY_DQN)
    env = _flag_env(cfg.sweep.toy, p=args.p, M=args.M)
    hp = _flag_env(cfg.sweep.dqn_hp, episodes=args.episodes or cfg.sweep.episodes)
    hp = replace(hp, feature=hp.feature_for(env.M))
    seed = _single_seed(args, cfg)
    out = _out_dir(args)
    log_every = args.log_every or (100 if args.verbose and out else 0)
    res = dqn.train_population(env, [env.p], [seed], hp, log_every=log_every)
    if res.diverged_at[0] >= 0:
        raise dqn.TrainingDivergedError(int(res.diverged_at[0]))
    pi = float(res.pi_safe[0])
    print(f"p={env.p:g} M={env.M} episodes={hp.episodes} lr={hp.learning_rate:g} feature={hp.feature} seed={seed}")
    print(f"pi_safe = {pi:.4f}")
    if out is not None:
        _write(out / "train_dqn.csv", f"p,M,episodes,learning_rate,feature,seed,pi_safe\n{fmt(env.p)},{env.M},{hp.episodes},{fmt(hp.learning_rate)},{hp.feature},{seed},{fmt(pi)}\n")
        if res.log:
            _write(out / "dqn_log.csv", res.log)
    return EXIT_OK


def cmd_train_ac(args) -> int:
    cfg = _load(args, ExperimentKind.PORTFOLIO_AC)
    env = _flag_env(cfg.sweep.portfolio, p=args.p, M=args.M)
    hp = _flag_env(cfg.sweep.ac_hp, episodes=args.episodes or cfg.sweep.episodes)
    seed = _single_seed(args, cfg)
    out = _out_dir(args)
    log_every = args.log_every or (100 if args.verbose and out else 0)
    res = ac.train_population(env, [env.p], [seed], hp, log_every=log_every)
    if res.diverged_at[0] >= 0:
        raise ac.TrainingDivergedError(int(res.diverged_at[0]))
    f = float(res.fraction[0])
    kelly = kelly_fraction(env.p, env.r_win, env.r_loss).value
    ev = 1.0 if env.p >= ev_threshold_portfolio(env.r_win, env.r_loss) else 0.0
    print(f"p={env.p:g} M={env.M} episodes={hp.episodes} lr_actor={hp.lr_actor:g} lr_critic={hp.lr_critic:g} "
          f"normalize_returns={str(hp.normalize_returns).lower()} seed={seed}")
    print(f"f_hat = {f:.4f}   (Kelly {kelly:.4f}, expected value {ev:.0f})")
    if out is not None:
        _write(out / "train_ac.csv", f"p,M,episodes,seed,f_hat,kelly,expected_value\n{fmt(env.p)},{env.M},{hp.episodes},{seed},{fmt(f)},{fmt(kelly)},{fmt(ev)}\n")
        if res.log:
            _write(out / "ac_log.csv", res.log)
    return EXIT_OK


def _incomplete(result) -> list:
    return [M for M in result.m_values if not result.complete(M).all()]


def cmd_sweep(args) -> int:
    kind = ExperimentKind.TOY_DQN if args.kind == "toy" else ExperimentKind.PORTFOLIO_AC
    cfg = _load(args, kind)
    out = _out_dir(args)
    s = cfg.sweep
    _write(out / "effective_config.cfg", dump_config(cfg))
    if kind is ExperimentKind.TOY_DQN:
        result = run_toy_sweep(s)
        p_e = indifference_expected_toy(s.toy.r1, s.toy.r2, s.toy.r_safe)
        p_t = indifference_time_toy(s.toy.r1, s.toy.r2, s.toy.r_safe)
        ind = extract_indifference(result, p_e, p_t)
        _write(out / "policy_curve.csv", result.to_csv())
        _write(out / "indifference.csv", ind.to_csv())
        print(f"p_E = {p_e:.4f}  p_T = {p_t:.4f}")
        for M, row in ind.rows.items():
            if row.params is None:
                print(f"  M={M:<3d} fit failed: {row.error}")
            else:
                print(f"  M={M:<3d} p0 = {row.params.p0:.4f}  k = {row.params.k:.3g}  residual = {row.residual:.3g}")
    else:
        result = run_portfolio_sweep(s)
        ev, kelly = portfolio_theory_curves(s.portfolio, result.p_grid)
        mse = compute_mse_report(result, ev, kelly)
        _write(out / "policy_curve.csv", result.to_csv())
        _write(out / "mse_report.csv", mse.to_csv())
        for M in result.m_values:
            print(f"  M={M:<3d} MSE_EV = {mse.mse_ev[M]:.4f}  MSE_Kelly = {mse.mse_kelly[M]:.4f}")
    bad = _incomplete(result)
    if bad:
        print(f"error: more than 20% of agents diverged in some cells for M = {bad}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_full_policy(args) -> int:
    cfg = _load(args, ExperimentKind.PORTFOLIO_FULL_POLICY)
    out = _out_dir(args)
    _write(out / "effective_config.cfg", dump_config(cfg))
    res = run_full_policy_experiment(cfg.sweep)
    _write(out / "policy_curve.csv", res.sweep.to_csv())
    _write(out / "mse_report.csv", res.mse.to_csv())
    for M in res.sweep.m_values:
        med = res.sweep.aggregates[M]["median"]
        print(f"  M={M:<3d} f(0) = {med[0]:.3f}  f(1) = {med[-1]:.3f}  "
              f"MSE_EV = {res.mse.mse_ev[M]:.4f}  MSE_Kelly = {res.mse.mse_kelly[M]:.4f}")
    bad = _incomplete(res.sweep)
    if bad:
        print(f"error: more than 20% of agents diverged for M = {bad}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_diagnose(args) -> int:
    cfg = _load_any(args)
    toy = _flag_env(cfg.sweep.toy, p=args.p)
    settings = _flag_env(cfg.diagnose, **{k: v for k, v in (("T", args.T), ("n", args.n)) if v is not None})
    seed = args.seed if args.seed is not None else cfg.sweep.base_seed
    d = ergodicity_diagnostic(toy, settings.T, settings.n, random_source(seed))
    print(f"always-risky gamble: p={toy.p:g} r1={toy.r1:g} r2={toy.r2:g}  T={settings.T} n={settings.n} seed={seed}")
    print("                      estimate     std.err   closed form")
    print(f"  time average    {d.time_avg_growth:12.6f} {d.time_avg_se:11.6f} {d.time_avg_theory:13.6f}")
    print(f"  ensemble average{d.ensemble_avg_growth:12.6f} {d.ensemble_avg_se:11.6f} {d.ensemble_avg_theory:13.6f}")
    print(f"  (sample mean of W_T over the n paths gives {d.naive_ensemble_growth:.6f}; it is dominated by the luckiest path)")
    out = _out_dir(args)
    if out is not None:
        _write(out / "diagnose.csv",
               "quantity,estimate,std_err,closed_form\n"
               f"time_average,{fmt(d.time_avg_growth)},{fmt(d.time_avg_se)},{fmt(d.time_avg_theory)}\n"
               f"ensemble_average,{fmt(d.ensemble_avg_growth)},{fmt(d.ensemble_avg_se)},{fmt(d.ensemble_avg_theory)}\n"
               f"naive_ensemble_average,{fmt(d.naive_ensemble_growth)},nan,{fmt(d.ensemble_avg_theory)}\n")
    return EXIT_OK


def cmd_report(args) -> int:
    in_dir = Path(args.in_dir or args.out)
    overlay = Overlay()
    if args.config:
        cfg = _load_any(args)
        overlay = Overlay(cfg.sweep.toy, cfg.sweep.portfolio)
    paths = render_reports(in_dir, Path(args.out), overlay)
    for p in paths:
        print(p)
    return EXIT_OK


COMMANDS = {
    "theory": cmd_theory,
    "train-dqn": cmd_train_dqn,
    "train-ac": cmd_train_ac,
    "sweep": cmd_sweep,
    "full-policy": cmd_full_policy,
    "diagnose": cmd_diagnose,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse: 0 for --help, 2 for usage errors
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    warnings.simplefilter("always", IndifferenceOutOfRange)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DegenerateConfigurationError, DomainError, ReportError, dqn.TrainingDivergedError,
            ac.TrainingDivergedError, ArithmeticError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
