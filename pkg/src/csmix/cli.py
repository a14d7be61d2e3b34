"""Command-line front end.

Three subcommands read an INI-style config with dotted section names::

    csmix fit CONFIG DATA [DESIGN]
    csmix simulate CONFIG
    csmix robustness CONFIG

Exit codes: 0 success, 1 a claimed limit failed its tolerance, 2 invalid
input, 3 sampler failure, 4 quadrature failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .distributions import (
    DEFAULT_TRAVEL_TIME,
    OneSidedLogPareto,
    SymmetricLogPareto,
    ThinTail,
)
from .exceptions import CSMError, DomainError, NumericalError, QuadratureError, SamplerError
from .model import Dataset, PriorConfig
from .robustness import (
    DEFAULT_OMEGA_GRID,
    LimitReport,
    bias_term,
    bias_term_spread,
    likelihood_limit_report,
    scaled_variance_limit,
)
from .sampler import ModelKind, SamplerConfig, run_chain
from .simulation import METRIC_COLUMNS, ScenarioSpec, aggregate_rows, run_replication

logger = logging.getLogger("csmix")

EXIT_OK = 0
EXIT_CLAIM = 1
EXIT_INPUT = 2
EXIT_SAMPLER = 3
EXIT_QUADRATURE = 4

FLOAT_FMT = "{:.17g}"

# every recognised key with its default; echoed into the output directory
DEFAULTS = {
    "run": {"seed": "0", "output_dir": "out"},
    "prior": {"gamma": "1", "a0": "0.05", "b0_beta": "1", "nu0": "", "s0_scale": "",
              "beta_var": "100"},
    "sampler": {"n_iter": "2000", "burn_in": "1000", "thin": "1", "model_kind": "CSM",
                "c0": "1e-8", "delta": "1", "nu_init": "5", "nu_step": "0.3"},
    "sampler.hmc": {"travel_time": repr(DEFAULT_TRAVEL_TIME), "events": "1"},
    "simulate.scenario": {"kind": "graphical", "scenario": "1", "n": "200", "p": "5",
                          "q": "0", "phi_star": "0.4", "shift": "10"},
    "simulate.study": {"replications": "1", "methods": "CSM, Gaussian", "targets": "",
                       "alpha": "0.05"},
    "robustness.grid": {"omega": ", ".join(repr(w) for w in DEFAULT_OMEGA_GRID)},
    "robustness.model": {"sigma11": "1", "sigma12": "0.9", "sigma22": "1", "mean1": "0",
                         "mean2": "0", "y2": "1", "d_sign": "1", "t2_values": "1.5, 10"},
    "robustness.families": {"gamma": "1", "symmetric": "yes", "spike_phi": "0.3",
                            "one_sided": "yes", "thin_tail": "yes", "thin_c": "0",
                            "thin_c_prime": "1", "nonconstant_tol": "0.1",
                            "limit_tol": "0.05"},
    "robustness.limits": {"enabled": "yes", "omega": "1e6, 1e100, 1e300",
                          "abs_tol": "0.01", "sv_sigma1": "1", "sv_sigma2": "2",
                          "sv_omega": "1e6", "sv_rel_tol": "0.02"},
}


class InputError(CSMError):
    """Malformed configuration or input file."""


# ---------------------------------------------------------------------------
# config
# ---------------------------------------------------------------------------

class RunConfig:
    """Parsed config with defaults filled in and typed accessors."""

    def __init__(self, path):
        self.path = Path(path)
        if not self.path.is_file():
            raise InputError(f"config file not found: {self.path}")
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        parser.read_dict(DEFAULTS)
        try:
            with open(self.path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except configparser.Error as exc:
            raise InputError(f"{self.path}: {exc}") from exc
        unknown = [s for s in parser.sections() if s not in DEFAULTS]
        if unknown:
            raise InputError(f"{self.path}: unknown section(s) {unknown}")
        for section in parser.sections():
            extra = set(parser[section]) - set(DEFAULTS[section])
            if extra:
                raise InputError(f"{self.path}: unknown key(s) {sorted(extra)} in [{section}]")
        self.parser = parser

    def get(self, section, key, cast=str):
        raw = self.parser.get(section, key).strip()
        try:
            if cast is bool:
                return self.parser.getboolean(section, key)
            if cast is int:
                val = float(raw)
                if val != int(val):
                    raise ValueError
                return int(val)
            return cast(raw)
        except ValueError:
            raise InputError(f"[{section}] {key} = {raw!r} is not a valid {cast.__name__}") from None

    def floats(self, section, key):
        raw = self.parser.get(section, key).strip()
        if not raw:
            return []
        try:
            return [float(tok) for tok in raw.replace(";", ",").split(",") if tok.strip()]
        except ValueError:
            raise InputError(f"[{section}] {key} = {raw!r} is not a list of numbers") from None

    def words(self, section, key):
        raw = self.parser.get(section, key)
        return [tok.strip() for tok in raw.split(",") if tok.strip()]

    @property
    def output_dir(self):
        out = Path(self.get("run", "output_dir"))
        return out if out.is_absolute() else self.path.parent / out

    def echo(self, dest):
        with open(dest, "w", encoding="utf-8") as fh:
            self.parser.write(fh)

    def sampler_config(self, model_kind=None):
        try:
            return SamplerConfig(
                n_iter=self.get("sampler", "n_iter", int),
                burn_in=self.get("sampler", "burn_in", int),
                thin=self.get("sampler", "thin", int),
                seed=self.get("run", "seed", int),
                c0=self.get("sampler", "c0", float),
                delta=self.get("sampler", "delta", float),
                hmc_travel_time=self.get("sampler.hmc", "travel_time", float),
                hmc_events=self.get("sampler.hmc", "events", int),
                model_kind=model_kind or self.get("sampler", "model_kind"),
                nu_init=self.get("sampler", "nu_init", float),
                nu_step=self.get("sampler", "nu_step", float),
            )
        except DomainError as exc:
            raise InputError(f"[sampler] {exc}") from exc

    def prior_config(self, p, q):
        gamma = self.get("prior", "gamma", float)
        nu_raw = self.parser.get("prior", "nu0").strip()
        nu0 = float(p) if not nu_raw else self.get("prior", "nu0", float)
        s_raw = self.parser.get("prior", "s0_scale").strip()
        s0 = 1.0 / (nu0 + p + 1.0) if not s_raw else self.get("prior", "s0_scale", float)
        try:
            return PriorConfig(
                b0=np.zeros(q),
                B0=self.get("prior", "beta_var", float) * np.eye(q),
                nu0=nu0,
                S0=s0 * np.eye(p),
                a0=self.get("prior", "a0", float),
                b0_beta=self.get("prior", "b0_beta", float),
                gamma=gamma,
            )
        except CSMError as exc:
            raise InputError(f"[prior] {exc}") from exc


# ---------------------------------------------------------------------------
# csv io
# ---------------------------------------------------------------------------

def _fmt(x):
    if isinstance(x, str):
        return x
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return FLOAT_FMT.format(float(x))


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def read_data_csv(path):
    """Read a ``y1,...,yp`` CSV into an ``(n, p)`` array."""
    path = Path(path)
    if not path.is_file():
        raise InputError(f"data file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise InputError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    expected = [f"y{k + 1}" for k in range(len(header))]
    if header != expected:
        raise InputError(f"{path}:1: header must be {','.join(expected)}, got {','.join(header)}")
    data = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise InputError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            vals = [float(c) for c in row]
        except ValueError:
            raise InputError(f"{path}:{lineno}: non-numeric field in {row}") from None
        if not all(math.isfinite(v) for v in vals):
            raise InputError(f"{path}:{lineno}: non-finite value")
        data.append(vals)
    if not data:
        raise InputError(f"{path}: no data rows")
    return np.array(data)


def read_design_csv(path, n, p):
    """Read a long-format design CSV (``i,row_k,col_j,value``, 1-based) into ``(n, p, q)``."""
    path = Path(path)
    if not path.is_file():
        raise InputError(f"design file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or [h.strip() for h in rows[0]] != ["i", "row_k", "col_j", "value"]:
        raise InputError(f"{path}:1: header must be i,row_k,col_j,value")
    entries = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 4:
            raise InputError(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
        try:
            i, k, j = (int(c) for c in row[:3])
            v = float(row[3])
        except ValueError:
            raise InputError(f"{path}:{lineno}: malformed entry {row}") from None
        if not (1 <= i <= n and 1 <= k <= p and j >= 1) or not math.isfinite(v):
            raise InputError(f"{path}:{lineno}: index or value out of range in {row}")
        entries.append((lineno, i - 1, k - 1, j - 1, v))
    if not entries:
        raise InputError(f"{path}: no design entries")
    q = 1 + max(e[3] for e in entries)
    X = np.zeros((n, p, q))
    seen = set()
    for lineno, i, k, j, v in entries:
        if (i, k, j) in seen:
            raise InputError(f"{path}:{lineno}: duplicate entry for ({i + 1},{k + 1},{j + 1})")
        seen.add((i, k, j))
        X[i, k, j] = v
    return X


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _prepare_output(cfg):
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    cfg.echo(out / "config_used.ini")
    return out


def cmd_fit(config_path, data_path, design_path=None):
    cfg = RunConfig(config_path)
    y = read_data_csv(data_path)
    n, p = y.shape
    X = read_design_csv(design_path, n, p) if design_path else None
    try:
        dataset = Dataset(y, X)
    except DomainError as exc:
        raise InputError(str(exc)) from exc
    prior = cfg.prior_config(p, dataset.q)
    config = cfg.sampler_config()
    out = _prepare_output(cfg)
    chain = run_chain(dataset, prior, config)

    names, draws = chain.flat_draws()
    write_csv(out / "draws.csv", names, draws)
    summary = []
    if draws.shape[0]:
        q025, q975 = np.quantile(draws, [0.025, 0.975], axis=0)
        sd = draws.std(axis=0, ddof=1) if draws.shape[0] > 1 else np.zeros(len(names))
        for j, name in enumerate(names):
            summary.append((name, draws[:, j].mean(), sd[j], q025[j], q975[j]))
    write_csv(out / "summary.csv", ("parameter", "mean", "sd", "q025", "q975"), summary)
    if chain.z_freq is not None:
        write_csv(out / "zprob.csv", [f"y{k + 1}" for k in range(p)], chain.z_freq)
    logger.info("fit: %d stored draws in %.2fs -> %s", chain.n_draws,
                chain.metadata["wall_clock_s"], out)
    return EXIT_OK


def _scenario(cfg):
    sec = "simulate.scenario"
    try:
        return ScenarioSpec(
            kind=cfg.get(sec, "kind"),
            n=cfg.get(sec, "n", int),
            p=cfg.get(sec, "p", int),
            q=cfg.get(sec, "q", int),
            phi_star=cfg.get(sec, "phi_star", float),
            scenario=cfg.get(sec, "scenario", int),
            shift=cfg.get(sec, "shift", float),
            seed=cfg.get("run", "seed", int),
        )
    except DomainError as exc:
        raise InputError(f"[{sec}] {exc}") from exc


def cmd_simulate(config_path):
    cfg = RunConfig(config_path)
    spec = _scenario(cfg)
    n_rep = cfg.get("simulate.study", "replications", int)
    if n_rep < 1:
        raise InputError("[simulate.study] replications must be positive")
    try:
        methods = [ModelKind.parse(m) for m in cfg.words("simulate.study", "methods")]
    except DomainError as exc:
        raise InputError(f"[simulate.study] {exc}") from exc
    if not methods:
        raise InputError("[simulate.study] methods is empty")
    targets = cfg.words("simulate.study", "targets") or None
    if targets and not set(targets) <= {"beta", "sigma", "omega"}:
        raise InputError("[simulate.study] targets must be among beta, sigma, omega")
    if targets and "beta" in targets and spec.kind.value == "graphical":
        raise InputError("[simulate.study] graphical studies have no beta target")
    alpha = cfg.get("simulate.study", "alpha", float)
    if not 0 < alpha < 1:
        raise InputError("[simulate.study] alpha must lie in (0, 1)")
    config = cfg.sampler_config()
    p, q = spec.p, spec.q if spec.kind.value == "regression" else 0
    prior = cfg.prior_config(p, q)
    out = _prepare_output(cfg)

    rows = []
    for rep in range(n_rep):
        rep_rows, _ = run_replication(spec, methods, config, replication=rep, prior=prior,
                                      alpha=alpha, targets=targets)
        rows.extend(rep_rows)
        logger.info("simulate: replication %d/%d done", rep + 1, n_rep)
    rows.extend(aggregate_rows(rows))
    write_csv(out / "metrics.csv", METRIC_COLUMNS,
              [[r[c] for c in METRIC_COLUMNS] for r in rows])
    return EXIT_OK


def _robustness_inputs(cfg):
    sec = "robustness.model"
    s11, s12, s22 = (cfg.get(sec, k, float) for k in ("sigma11", "sigma12", "sigma22"))
    sigma = np.array([[s11, s12], [s12, s22]])
    mean = np.array([cfg.get(sec, "mean1", float), cfg.get(sec, "mean2", float)])
    d_sign = cfg.get(sec, "d_sign", int)
    if d_sign not in (1, -1):
        raise InputError(f"[{sec}] d_sign must be 1 or -1")
    t2_values = cfg.floats(sec, "t2_values")
    if len(t2_values) < 2 or min(abs(t) for t in t2_values) < 1:
        raise InputError(f"[{sec}] t2_values needs at least two entries with |t2| >= 1")
    return sigma, mean, cfg.get(sec, "y2", float), d_sign, t2_values


def cmd_robustness(config_path):
    cfg = RunConfig(config_path)
    grid = cfg.floats("robustness.grid", "omega")
    if not grid:
        raise InputError("[robustness.grid] omega grid is empty")
    if any(b <= a for a, b in zip(grid, grid[1:])) or grid[0] <= 1:
        raise InputError("[robustness.grid] omega must be increasing and above one")
    sigma, mean, y2, d_sign, t2_values = _robustness_inputs(cfg)
    fam = "robustness.families"
    gamma = cfg.get(fam, "gamma", float)
    limit_tol = cfg.get(fam, "limit_tol", float)
    spread_tol = cfg.get(fam, "nonconstant_tol", float)
    try:
        convergent, nonconstant = [], []
        if cfg.get(fam, "symmetric", bool):
            convergent.append(("symmetric", SymmetricLogPareto(gamma)))
        spike = cfg.parser.get(fam, "spike_phi").strip()
        if spike:
            convergent.append(("spike_mixture", SymmetricLogPareto(gamma, phi=float(spike))))
        if cfg.get(fam, "one_sided", bool):
            nonconstant.append(("one_sided", OneSidedLogPareto(gamma)))
        if cfg.get(fam, "thin_tail", bool):
            nonconstant.append(("thin_tail", ThinTail(cfg.get(fam, "thin_c", float),
                                                      cfg.get(fam, "thin_c_prime", float))))
    except (DomainError, ValueError) as exc:
        raise InputError(f"[{fam}] {exc}") from exc
    out = _prepare_output(cfg)

    rows, claims = [], []
    c = np.array([mean[0], y2])
    d = np.array([float(d_sign), 0.0])
    for name, spec in convergent:
        rep = likelihood_limit_report(c, d, None, None, sigma, spec, grid)
        rows.extend(rep.rows(name))
        ok = rep.max_rel_err_at_tail < limit_tol and bool(np.all(np.diff(rep.rel_errors) < 0))
        claims.append((name, "converges", rep.max_rel_err_at_tail, ok))
    for name, spec in nonconstant:
        table, spread = bias_term_spread(t2_values, mean, sigma, y2, d_sign, grid, spec)
        for t2, vals in zip(t2_values, table):
            rows.extend(LimitReport(grid, vals, None).rows(f"{name}:A(t2={t2:g})"))
        claims.append((name, "depends_on_t2", spread, spread > spread_tol))

    lim = "robustness.limits"
    if cfg.get(lim, "enabled", bool):
        lgrid = cfg.floats(lim, "omega")
        if not lgrid:
            raise InputError(f"[{lim}] omega grid is empty")
        atol = cfg.get(lim, "abs_tol", float)
        indep = np.array([[sigma[0, 0], 0.0], [0.0, sigma[1, 1]]])
        unit = np.array([[1.0, 0.0], [0.0, sigma[1, 1]]])
        for name, spec, S in (("one_sided_limit", OneSidedLogPareto(gamma), indep),
                              ("thin_tail_limit", ThinTail(cfg.get(fam, "thin_c", float), 1.0),
                               unit)):
            vals = [bias_term(t2_values[0], mean, S, y2, d_sign, w, spec) for w in lgrid]
            ref = 0.5 if name == "one_sided_limit" else math.sqrt(2.0 / math.pi)
            rep = LimitReport(lgrid, vals, ref)
            rows.extend(rep.rows(name))
            err = abs(vals[-1] - ref)
            claims.append((name, f"abs_err<={atol:g}", err, err <= atol))
        s1, s2 = cfg.get(lim, "sv_sigma1", float), cfg.get(lim, "sv_sigma2", float)
        sv_omega = cfg.get(lim, "sv_omega", float)
        num, ana = scaled_variance_limit(s1, s2, gamma, sv_omega)
        rep = LimitReport([sv_omega], [num], ana)
        rows.extend(rep.rows("scaled_variance"))
        rel_tol = cfg.get(lim, "sv_rel_tol", float)
        claims.append(("scaled_variance", f"rel_err<={rel_tol:g}", rep.max_rel_err_at_tail,
                       rep.max_rel_err_at_tail <= rel_tol))

    write_csv(out / "limits.csv", ("family", "omega", "value", "reference", "rel_err"), rows)
    write_csv(out / "claims.csv", ("family", "claim", "statistic", "ok"),
              [(n, cl, st, "true" if ok else "false") for n, cl, st, ok in claims])
    failed = [n for n, _, _, ok in claims if not ok]
    if failed:
        logger.error("robustness: claims failed for %s", ", ".join(failed))
        return EXIT_CLAIM
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="csmix", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    fit = sub.add_parser("fit", help="run the sampler on a data CSV")
    fit.add_argument("config")
    fit.add_argument("data")
    fit.add_argument("design", nargs="?")
    sim = sub.add_parser("simulate", help="run a simulation study")
    sim.add_argument("config")
    rob = sub.add_parser("robustness", help="numerical likelihood-limit checks")
    rob.add_argument("config")
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "fit":
            return cmd_fit(args.config, args.data, args.design)
        if args.command == "simulate":
            return cmd_simulate(args.config)
        return cmd_robustness(args.config)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SamplerError as exc:
        print(f"sampler error at sweep {exc.iteration}: {exc}", file=sys.stderr)
        return EXIT_SAMPLER
    except QuadratureError as exc:
        print(f"quadrature error: {exc}", file=sys.stderr)
        return EXIT_QUADRATURE
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_SAMPLER
    except CSMError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
