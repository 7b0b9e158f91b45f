"""Command-line front end.

Every subcommand resolves an :class:`AnalysisConfig` from defaults, an
optional ``key = value`` config file and command-line flags (flags win), then
writes key-value reports and two-column plot data under ``--out``.

Exit status: 0 success, 2 parse or configuration error, 3 solver failure,
4 reproduction mismatch.
"""

from __future__ import annotations

import argparse
import hashlib
import math
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .bellmodel import (
    TSIRELSON,
    JointDistribution,
    SettingsDistribution,
    bell_function,
    bell_value,
    conditional_extreme_points,
    in_convex_hull,
    nonsignaling_check,
    pr_box,
    semidirect,
    standard_model,
)
from .certify import adaptive_run, static_run
from .datasets import NAMES, embedded_dataset
from .extract import (
    BitFileSource,
    ExtractorError,
    GeneratorSeedSource,
    SeedExhausted,
    run_protocol_p,
    run_protocol_q,
)
from .fileio import (
    ParseError,
    format_kv,
    ingest_trials,
    read_counts,
    read_distribution,
    read_kv,
    write_bits,
    write_columns,
    write_kv,
    write_pef,
    write_trials,
)
from .mlfit import FitError, FrequencyTable, ml_project
from .pefopt import (
    InfeasibleError,
    SolverError,
    asymptotic_gain_rate,
    log_prob_rate,
    optimize_pef,
)
from .simulate import RNG_ALGORITHM, SpotCheckConfig, break_even, sample_spotcheck_trials, sample_trials

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_MISMATCH = 0, 2, 3, 4

COMMANDS = ("fit", "rates", "certify", "breakeven", "biassweep", "extract", "simulate", "reproduce")


class ConfigError(ValueError):
    pass


def _floats(text) -> tuple[float, ...]:
    if isinstance(text, (tuple, list)):
        return tuple(float(v) for v in text)
    return tuple(float(v) for v in str(text).split(",") if v.strip())


def _models(text) -> tuple[str, ...]:
    if isinstance(text, (tuple, list)):
        return tuple(text)
    out = tuple(v.strip().upper() for v in str(text).split(",") if v.strip())
    if not out or any(m not in ("LR", "NS", "Q") for m in out):
        raise ConfigError(f"model must be LR, NS or Q (comma list allowed), got {text!r}")
    return out


def _opt_path(text):
    return None if text in (None, "", "none") else str(text)


def _opt_float(text):
    return None if text in (None, "", "none") else float(text)


@dataclass(frozen=True)
class AnalysisConfig:
    """Resolved settings for one command."""

    model: tuple[str, ...] = ("Q",)
    bias: float = 0.0
    beta: tuple[float, ...] = ()
    eps_h: float = 1e-6
    eps_x: float = 1e-6
    split: float = 0.3
    mode: str = "split"
    estimator: str = "final"
    seed: int = 0
    out: str = "."
    dataset: str = "atoms"
    trials: str | None = None
    counts: str | None = None
    distribution: str | None = None
    n: int = 100_000
    r: float = 1.0
    cadence: int = 50_000
    warmup: int = 10_000
    bias_grid: tuple[float, ...] = (0.0, 0.01, 0.02, 0.03, 0.04, 0.05)
    sigma_h: float | None = None
    protocol: str = "Q"
    seed_file: str | None = None
    banked_file: str | None = None
    publish_settings: bool = False

    def __post_init__(self):
        if not 0.0 < self.split < 1.0:
            raise ConfigError("split must lie in (0, 1)")
        if self.mode not in ("split", "adaptive"):
            raise ConfigError("mode must be 'split' or 'adaptive'")
        if self.estimator not in ("final", "runningmax"):
            raise ConfigError("estimator must be 'final' or 'runningmax'")
        if not 0.0 < self.eps_h < 1.0 or not 0.0 < self.eps_x < 1.0:
            raise ConfigError("eps_h and eps_x must lie in (0, 1)")
        if self.bias < 0 or self.bias >= 0.25:
            raise ConfigError("bias must lie in [0, 0.25)")
        if any(b <= 0 for b in self.beta):
            raise ConfigError("powers must be positive")
        if self.dataset not in NAMES:
            raise ConfigError(f"dataset must be one of {', '.join(NAMES)}")
        if self.protocol.upper() not in ("P", "Q"):
            raise ConfigError("protocol must be P or Q")
        for p in (self.trials, self.counts, self.distribution, self.seed_file, self.banked_file):
            if p is not None and not Path(p).is_file():
                raise ConfigError(f"file not found: {p}")

    def digest(self) -> str:
        text = "\n".join(f"{k}={v!r}" for k, v in sorted(asdict(self).items()))
        return hashlib.sha256(text.encode()).hexdigest()[:16]


_CONVERT = {
    "model": _models, "bias": float, "beta": _floats, "eps_h": float, "eps_x": float, "split": float,
    "mode": str, "estimator": str, "seed": int, "out": str, "dataset": str, "trials": _opt_path,
    "counts": _opt_path, "distribution": _opt_path, "n": lambda v: int(float(v)), "r": float,
    "cadence": int, "warmup": int,
    "bias_grid": _floats, "sigma_h": _opt_float, "protocol": lambda v: str(v).upper(),
    "seed_file": _opt_path, "banked_file": _opt_path,
    "publish_settings": lambda v: v if isinstance(v, bool) else str(v).lower() in ("1", "true", "yes"),
}


def resolve_config(flags: dict, config_path=None) -> AnalysisConfig:
    """Defaults, then the config file, then explicit flags."""
    merged: dict = {}
    if config_path is not None:
        for k, v in read_kv(config_path).items():
            key = k.replace("-", "_")
            if key not in _CONVERT:
                raise ConfigError(f"unknown config key {k!r}")
            merged[key] = v
    merged.update({k: v for k, v in flags.items() if v is not None and k in _CONVERT})
    try:
        values = {k: _CONVERT[k](v) for k, v in merged.items()}
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return AnalysisConfig(**values)


# -- shared helpers -----------------------------------------------------------------


def _header(cfg: AnalysisConfig, command: str) -> dict:
    return {"command": command, "version": __version__, "config_hash": cfg.digest(), "seed": cfg.seed,
            "rng": RNG_ALGORITHM}


def _outdir(cfg: AnalysisConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _frequencies(cfg: AnalysisConfig):
    """Frequency table and trials (if any) from the configured source."""
    if cfg.trials is not None:
        trials, freq = ingest_trials(cfg.trials)
        return freq, trials, f"trials:{cfg.trials}"
    if cfg.counts is not None:
        return read_counts(cfg.counts), None, f"counts:{cfg.counts}"
    if cfg.distribution is not None:
        table = read_distribution(cfg.distribution).table
        return FrequencyTable.from_distribution(table * 0.25), None, f"distribution:{cfg.distribution}"
    table = embedded_dataset(cfg.dataset).table
    return FrequencyTable.from_distribution(table * 0.25), None, f"dataset:{cfg.dataset}"


def _fit_kind(kind: str) -> str:
    return "NS" if kind == "LR" else kind


def _target(cfg: AnalysisConfig, kind: str, freq: FrequencyTable) -> JointDistribution:
    fit = ml_project(freq, _fit_kind(kind))
    return JointDistribution(fit.cond.table * fit.settings_freqs[:, None])


def _default_betas(cfg: AnalysisConfig) -> tuple[float, ...]:
    return cfg.beta or tuple(float(b) for b in np.logspace(-4, -1, 13))


def _best_beta(model, rho, n: int, eps_h: float, betas) -> tuple[float, float]:
    """Power maximizing the expected net log2-prob over ``n`` trials, with that value."""
    best = (betas[0], -math.inf)
    for beta in betas:
        net = n * log_prob_rate(optimize_pef(model, rho, beta), beta, rho) - math.log2(1.0 / eps_h) / beta
        if net > best[1]:
            best = (beta, net)
    return best


# -- commands -----------------------------------------------------------------------


def cmd_fit(cfg: AnalysisConfig) -> int:
    freq, _, source = _frequencies(cfg)
    out = _outdir(cfg)
    for kind in cfg.model:
        fit = ml_project(freq, _fit_kind(kind))
        rep = _header(cfg, "fit") | {"source": source, "model": kind, "objective": fit.objective,
                                       "kkt_residual": fit.kkt_residual}
        for z, (x, y) in enumerate(((0, 0), (1, 0), (0, 1), (1, 1))):
            rep[f"p(.|{x}{y})"] = " ".join(f"{v:.15f}" for v in fit.cond.table[z])
        write_kv(out / f"fit_{kind}.txt", rep)
        print(format_kv(rep), end="")
    return EXIT_OK


def cmd_rates(cfg: AnalysisConfig) -> int:
    freq, trials, source = _frequencies(cfg)
    out = _outdir(cfg)
    betas = _default_betas(cfg)
    kappa = math.log2(1.0 / cfg.eps_h)
    for kind in cfg.model:
        model = standard_model(kind, cfg.bias)
        rho = _target(cfg, kind, freq)
        rates = np.array([log_prob_rate(optimize_pef(model, rho, b), b, rho) for b in betas])
        net = rates - kappa / (cfg.n * np.array(betas))
        gain = asymptotic_gain_rate(model, rho)
        with open(out / f"rates_{kind}.csv", "w", encoding="utf-8") as fh:
            fh.write("# beta,log2_prob_rate,net_rate\n")
            for b, r, v in zip(betas, rates, net):
                fh.write(f"{b:.10g},{r:.10g},{v:.10g}\n")
        write_columns(out / f"rates_{kind}_logprob.dat", betas, rates, "beta,log2_prob_rate")
        write_columns(out / f"rates_{kind}_net.dat", betas, net, "beta,net_rate")
        rep = _header(cfg, "rates") | {"source": source, "model": kind, "bias": cfg.bias, "gain_rate": gain,
                                         "n_for_net": cfg.n, "rows": len(betas)}
        write_kv(out / f"rates_{kind}.txt", rep)
        print(format_kv(rep), end="")
    return EXIT_OK


def _net_curve(trials, F, eps_h: float, points: int = 1000):
    steps = F.log_values[trials.settings_index(F.n_settings), trials.c] / math.log(2.0)
    path = np.cumsum(steps)
    idx = np.unique(np.linspace(0, len(path) - 1, min(points, len(path))).astype(int))
    return idx + 1, (path[idx] - math.log2(1.0 / eps_h)) / F.power


def cmd_certify(cfg: AnalysisConfig) -> int:
    if cfg.trials is None:
        raise ConfigError("certify needs --trials")
    trials, _ = ingest_trials(cfg.trials)
    out = _outdir(cfg)
    for kind in cfg.model:
        model = standard_model(kind, cfg.bias)
        rep = _header(cfg, "certify") | {"source": f"trials:{cfg.trials}", "model": kind, "mode": cfg.mode}
        if cfg.mode == "split":
            n_train = max(1, int(round(cfg.split * len(trials))))
            train, test = trials[:n_train], trials[n_train:]
            if len(test) == 0:
                raise ConfigError("split leaves no analysis trials")
            rho = _target(cfg, kind, train.frequency_table())
            beta, expected = _best_beta(model, rho, len(test), cfg.eps_h, _default_betas(cfg))
            F = optimize_pef(model, rho, beta)
            result = static_run(test, F, cfg.eps_h)
            write_pef(out / f"certify_{kind}.pef", F)
            xs, ys = _net_curve(test, F, cfg.eps_h)
            write_columns(out / f"certify_{kind}_net.dat", xs, ys, "trials,net_log2_prob")
            rep |= {"training_trials": n_train, "analysis_trials": len(test), "beta": beta,
                    "expected_net_log2_prob": expected}
        else:
            beta = cfg.beta[0] if cfg.beta else 1e-2
            result = adaptive_run(trials, model, beta, cfg.eps_h, cfg.cadence, cfg.warmup).report
            rep |= {"beta": beta, "cadence": cfg.cadence, "warmup": cfg.warmup}
        rep |= {"eps_h": cfg.eps_h, "estimator": cfg.estimator} | result.as_dict()
        log2_u = result.log2_u_final if cfg.estimator == "final" else result.log2_u_runningmax
        rep["min_entropy_bits"] = max(0.0, -log2_u)
        write_kv(out / f"certify_{kind}.txt", rep)
        print(format_kv(rep), end="")
    return EXIT_OK


def cmd_breakeven(cfg: AnalysisConfig) -> int:
    freq, _, source = _frequencies(cfg)
    out = _outdir(cfg)
    kappa = math.log2(1.0 / cfg.eps_h)
    rows = []
    for kind in cfg.model:
        cond = ml_project(freq, _fit_kind(kind)).cond
        res = break_even(kind, cond, kappa, eps_x=cfg.eps_x)
        rows.append((kind, res))
        rep = _header(cfg, "breakeven") | {"source": source, "model": kind, "eps_h": cfg.eps_h, "kappa": kappa,
                                             "n_c": res.n_c, "beta": res.beta, "r": res.r, "sigma": res.sigma,
                                             "objective": res.objective, "settings_entropy": res.settings_entropy,
                                             "n_c_extractor": res.n_c_extractor, "eps_x": cfg.eps_x}
        write_kv(out / f"breakeven_{kind}.txt", rep)
        print(format_kv(rep), end="")
    with open(out / "breakeven.csv", "w", encoding="utf-8") as fh:
        fh.write("# model,eps_h,n_c,beta,r,sigma,n_c_extractor\n")
        for kind, res in rows:
            fh.write(f"{kind},{cfg.eps_h:g},{res.n_c:.8g},{res.beta:.6g},{res.r:.6g},{res.sigma:.8g},"
                     f"{res.n_c_extractor:.8g}\n")
    return EXIT_OK


def bias_sweep(kind: str, rho, grid) -> np.ndarray:
    return np.array([asymptotic_gain_rate(standard_model(kind, b), rho) for b in grid])


def cmd_biassweep(cfg: AnalysisConfig) -> int:
    freq, _, source = _frequencies(cfg)
    out = _outdir(cfg)
    for kind in cfg.model:
        fit = ml_project(freq, _fit_kind(kind))
        rho = semidirect(fit.cond, SettingsDistribution.uniform())
        gains = bias_sweep(kind, rho, cfg.bias_grid)
        write_columns(out / f"biassweep_{kind}.dat", cfg.bias_grid, gains, "bias,gain_rate")
        rep = _header(cfg, "biassweep") | {"source": source, "model": kind}
        rep |= {f"gain(b={b:g})": g for b, g in zip(cfg.bias_grid, gains)}
        write_kv(out / f"biassweep_{kind}.txt", rep)
        print(format_kv(rep), end="")
    return EXIT_OK


def cmd_simulate(cfg: AnalysisConfig) -> int:
    freq, _, source = _frequencies(cfg)
    out = _outdir(cfg)
    cond = freq.conditional()
    if cfg.r < 1.0:
        trials = sample_spotcheck_trials(cond, SpotCheckConfig(cfg.r), cfg.n, cfg.seed)
    else:
        trials = sample_trials(cond, SettingsDistribution.uniform(), cfg.n, cfg.seed)
    write_trials(out / "trials.csv", trials)
    rep = _header(cfg, "simulate") | {"source": source, "n": cfg.n, "r": cfg.r, "file": out / "trials.csv"}
    write_kv(out / "simulate.txt", rep)
    print(format_kv(rep), end="")
    return EXIT_OK


def cmd_extract(cfg: AnalysisConfig) -> int:
    if cfg.sigma_h is None:
        raise ConfigError("extract needs --sigma-h")
    out = _outdir(cfg)
    kind = cfg.model[0]
    model = standard_model(kind, cfg.bias)
    if cfg.trials is not None:
        trials, _ = ingest_trials(cfg.trials)
        n_train = max(1, int(round(cfg.split * len(trials))))
        rho = _target(cfg, kind, trials[:n_train].frequency_table())
        trials = trials[n_train:]
        source = f"trials:{cfg.trials}"
    else:
        cond = embedded_dataset(cfg.dataset)
        trials = sample_trials(cond, SettingsDistribution.uniform(), cfg.n, cfg.seed)
        rho = semidirect(cond, SettingsDistribution.uniform())
        source = f"simulated:{cfg.dataset}"
    beta = cfg.beta[0] if cfg.beta else _best_beta(model, rho, len(trials), cfg.eps_h, _default_betas(cfg))[0]
    F = optimize_pef(model, rho, beta)
    seeds = BitFileSource(cfg.seed_file) if cfg.seed_file else GeneratorSeedSource(cfg.seed)
    if cfg.protocol == "Q":
        res = run_protocol_q(trials, F, cfg.sigma_h, cfg.eps_h, cfg.eps_x, seeds, estimator=cfg.estimator)
    else:
        banked = BitFileSource(cfg.banked_file) if cfg.banked_file else GeneratorSeedSource(cfg.seed + 1)
        res = run_protocol_p(trials, F, cfg.sigma_h, cfg.eps_h, cfg.eps_x, seeds, banked,
                             estimator=cfg.estimator, publish_settings=cfg.publish_settings)
    info = res.as_dict()
    write_bits(out / "output_bits.txt", res.output)
    write_bits(out / "seed_bits.txt", res.seed)
    info.pop("output")
    rep = _header(cfg, "extract") | {"source": source, "model": kind, "beta": beta} | info
    write_kv(out / "extract.txt", rep)
    print(format_kv(rep), end="")
    return EXIT_OK


# -- reproduction -------------------------------------------------------------------


@dataclass(frozen=True)
class Check:
    name: str
    value: float
    expected: float
    tol: float
    passed: bool


def _check(name, value, expected, tol) -> Check:
    return Check(name, float(value), float(expected), float(tol), abs(value - expected) <= tol)


def reproduction_checks(include_breakeven: bool = True) -> list[Check]:
    """Numbers regenerated from the embedded tables, compared with stored expectations."""
    checks = []
    uniform = SettingsDistribution.uniform()
    q_points = [p.table for p in conditional_extreme_points("Q")]
    for name in NAMES:
        cond = embedded_dataset(name)
        checks.append(_check(f"{name}_nonsignaling_violation", nonsignaling_check(cond).max_violation, 0.0, 1e-9))
        checks.append(_check(f"{name}_in_Q", float(in_convex_hull(cond.table, q_points, 1e-9)), 1.0, 0.0))
    chsh = bell_function("CHSH")
    checks.append(_check("tsirelson_max", max(bell_value(chsh, v) for v in q_points), TSIRELSON, 1e-12))
    checks.append(_check("pr_box_chsh", bell_value(chsh, pr_box((0, 0, 0, 1))), 0.25, 0.0))
    rho = semidirect(embedded_dataset("atoms"), uniform)
    for kind, expected in (("NS", 0.088), ("Q", 0.191)):
        model = standard_model(kind)
        lp = asymptotic_gain_rate(model, rho, "LP")
        sweep = asymptotic_gain_rate(model, rho, "beta_sweep")
        checks.append(_check(f"atoms_gain_{kind}_lp", lp, expected, 2e-3))
        checks.append(_check(f"atoms_gain_{kind}_sweep", sweep, expected, 2e-3))
    gains = bias_sweep("Q", rho, (0.0, 0.01, 0.02, 0.03, 0.04, 0.05))
    checks.append(Check("atoms_Q_gain_bias_0.05_below", gains[-1], 1e-3, 0.0, gains[-1] < 1e-3))
    checks.append(Check("atoms_Q_gain_bias_0.01_above", gains[1], 0.05, 0.0, gains[1] > 0.05))
    if include_breakeven:
        kappa = math.log2(1e6)
        cond = embedded_dataset("atoms")
        for kind, n_c, sigma in (("NS", 5177642, 0.060561), ("Q", 2667562, 0.108035)):
            res = break_even(kind, cond, kappa)
            checks.append(_check(f"breakeven_{kind}_n_c", res.n_c, n_c, 0.01 * n_c))
            checks.append(_check(f"breakeven_{kind}_sigma", res.sigma, sigma, 0.005 * sigma))
    return checks


def cmd_reproduce(cfg: AnalysisConfig) -> int:
    out = _outdir(cfg)
    checks = reproduction_checks()
    rep = _header(cfg, "reproduce")
    for c in checks:
        rep[c.name] = f"{'PASS' if c.passed else 'FAIL'} value={c.value:.10g} expected={c.expected:.10g} tol={c.tol:g}"
    rep["all_passed"] = all(c.passed for c in checks)
    write_kv(out / "reproduce.txt", rep)
    print(format_kv(rep), end="")
    return EXIT_OK if rep["all_passed"] else EXIT_MISMATCH


_HANDLERS = {
    "fit": cmd_fit, "rates": cmd_rates, "certify": cmd_certify, "breakeven": cmd_breakeven,
    "biassweep": cmd_biassweep, "extract": cmd_extract, "simulate": cmd_simulate, "reproduce": cmd_reproduce,
}


_HELP = {
    "fit": "maximum-likelihood projection of the data onto the model",
    "rates": "log2-prob and net rates over a grid of powers",
    "certify": "certify a trial file (training split or adaptive)",
    "breakeven": "spot-checking break-even analysis",
    "biassweep": "asymptotic gain rate versus settings bias",
    "extract": "run protocol P or Q end to end",
    "simulate": "write a simulated trial file",
    "reproduce": "regenerate embedded-dataset numbers and compare",
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value file; flags override it")
    common.add_argument("--model", help="LR, NS or Q; comma list for several")
    common.add_argument("--bias", help="settings bias b")
    common.add_argument("--beta", help="power or comma list of powers")
    common.add_argument("--eps-h", dest="eps_h", help="probability-estimation error bound")
    common.add_argument("--eps-x", dest="eps_x", help="extractor error bound")
    common.add_argument("--split", help="training fraction in (0, 1)")
    common.add_argument("--mode", choices=("split", "adaptive"), help="certify strategy")
    common.add_argument("--estimator", choices=("final", "runningmax"))
    common.add_argument("--seed", help="simulation and seed-source seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--dataset", help=f"embedded table: {', '.join(NAMES)}")
    common.add_argument("--trials", help="trial file (x,y,a,b[,t] lines)")
    common.add_argument("--counts", help="count file (x,y,a,b,count lines)")
    common.add_argument("--distribution", help="4x4 conditional table file (uniform settings assumed)")
    common.add_argument("--n", help="number of trials")
    common.add_argument("--r", help="spot-check test probability for simulate")
    common.add_argument("--cadence", help="adaptive refit cadence")
    common.add_argument("--warmup", help="adaptive warmup length")
    common.add_argument("--bias-grid", dest="bias_grid", help="comma list of biases")
    common.add_argument("--sigma-h", dest="sigma_h", help="min-entropy target in bits")
    common.add_argument("--protocol", help="P or Q")
    common.add_argument("--seed-file", dest="seed_file", help="bit file of extractor seed bits")
    common.add_argument("--banked-file", dest="banked_file", help="bit file of banked bits")
    common.add_argument("--publish-settings", dest="publish_settings", action="store_const", const=True,
                        help="publish the settings string with protocol P outputs")
    parser = argparse.ArgumentParser(prog="probest", description="Probability estimation for Bell-test randomness.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=_HELP[name])
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    try:
        cfg = resolve_config(flags, args.config)
        return _HANDLERS[args.command](cfg)
    except (ConfigError, ParseError, FileNotFoundError, ExtractorError, SeedExhausted) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, InfeasibleError, FitError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
