"""Synthetic data generators and posterior evaluation metrics.

Two designs are covered.  The graphical design draws zero-mean normal
vectors with a banded precision matrix and shifts a few randomly chosen
cells of contaminated rows.  The regression design draws equi-correlated
covariates, a sparse coefficient vector and AR(1)-type errors, and shifts
one cell of each contaminated row.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from ._validation import as_float_array
from .exceptions import DomainError, UnsupportedOperationError
from .model import Dataset, PriorConfig
from .sampler import ChainOutput, ModelKind, SamplerConfig, run_chain

__all__ = [
    "StudyKind",
    "ScenarioSpec",
    "MetricReport",
    "banded_precision",
    "equicorrelation",
    "regression_coefficients",
    "gen_graphical",
    "gen_regression",
    "interval_score",
    "compute_metrics",
    "outlier_probabilities",
    "outlier_counts",
    "edge_detection",
    "run_replication",
    "aggregate_rows",
    "METRIC_COLUMNS",
]

METRIC_COLUMNS = ("replication", "method", "target", "mse", "cp", "al", "is")


class StudyKind(str, enum.Enum):
    GRAPHICAL = "graphical"
    REGRESSION = "regression"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise DomainError(f"unknown study kind {value!r}") from None


@dataclass(frozen=True)
class ScenarioSpec:
    """Settings of one synthetic data design.

    Parameters
    ----------
    kind : {"graphical", "regression"}
    n, p : int
    phi_star : float
        Probability that a row is contaminated.
    scenario : {1, 2, 3}
        Graphical only: shift 1 cell, 2 cells, or ``1 + Poisson(1)`` cells
        (capped at ``p``) per contaminated row.
    q : int
        Regression only: number of covariates.
    shift : float
        Offset added to every contaminated cell.
    seed : int
    """

    kind: StudyKind
    n: int
    p: int
    phi_star: float
    scenario: int = 1
    q: int = 0
    shift: float = 10.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", StudyKind.parse(self.kind))
        for name in ("n", "p", "q", "scenario", "seed"):
            val = getattr(self, name)
            if isinstance(val, bool) or int(val) != val:
                raise DomainError(f"{name} must be an integer, got {val!r}")
            object.__setattr__(self, name, int(val))
        if self.n < 1 or self.p < 1:
            raise DomainError("n and p must be positive")
        if not 0.0 <= self.phi_star <= 1.0:
            raise DomainError(f"phi_star must lie in [0, 1], got {self.phi_star!r}")
        if not math.isfinite(self.shift):
            raise DomainError("shift must be finite")
        if self.kind is StudyKind.GRAPHICAL and self.scenario not in (1, 2, 3):
            raise DomainError("scenario must be 1, 2 or 3")
        if self.kind is StudyKind.GRAPHICAL and self.scenario == 2 and self.p < 2:
            raise DomainError("scenario 2 needs p >= 2")
        if self.kind is StudyKind.REGRESSION and self.q < 1:
            raise DomainError("regression designs need q >= 1")

    @classmethod
    def graphical(cls, scenario, n, p, phi_star, shift=10.0, seed=0):
        return cls(StudyKind.GRAPHICAL, n, p, phi_star, scenario=scenario, shift=shift,
                   seed=seed)

    @classmethod
    def regression(cls, n, p, q, phi_star, shift=10.0, seed=0):
        return cls(StudyKind.REGRESSION, n, p, phi_star, q=q, shift=shift, seed=seed)

    def with_seed(self, seed):
        return replace(self, seed=int(seed))


@dataclass
class MetricReport:
    """Accuracy and interval summaries over the scalar entries of one target.

    ``per_parameter`` maps each metric name to an array over the entries.
    """

    mse: float
    cp: float
    al: float
    is_score: float
    per_parameter: dict = field(default_factory=dict)

    def as_row(self):
        return {"mse": self.mse, "cp": self.cp, "al": self.al, "is": self.is_score}


# ---------------------------------------------------------------------------
# generators
# ---------------------------------------------------------------------------

def banded_precision(p):
    """Unit diagonal, 0.5 on the first and 0.25 on the second off-diagonal."""
    omega = np.eye(p)
    for k in range(p - 1):
        omega[k, k + 1] = omega[k + 1, k] = 0.5
    for k in range(p - 2):
        omega[k, k + 2] = omega[k + 2, k] = 0.25
    return omega


def equicorrelation(q, rho=0.3):
    return (1.0 - rho) * np.eye(q) + rho * np.ones((q, q))


def regression_coefficients(q):
    """Sparse truth with entries 1, 2, 3 and 6 nonzero (1-based), padded with zeros."""
    beta = np.zeros(q)
    for idx, val in ((0, 0.5), (1, 1.0), (2, -1.0), (5, 0.5)):
        if idx < q:
            beta[idx] = val
    return beta


def _cells_per_row(spec, rng):
    if spec.scenario == 1 or spec.kind is StudyKind.REGRESSION:
        return 1
    if spec.scenario == 2:
        return 2
    return min(1 + int(rng.poisson(1.0)), spec.p)


def _contaminate(y, spec, rng):
    n, p = y.shape
    mask = np.zeros((n, p), dtype=bool)
    rows = rng.random(n) < spec.phi_star
    for i in np.flatnonzero(rows):
        cols = rng.choice(p, size=_cells_per_row(spec, rng), replace=False)
        mask[i, cols] = True
    return y + spec.shift * mask, mask


def gen_graphical(spec):
    """Draw a contaminated graphical-model dataset.

    Returns
    -------
    dataset : Dataset
        Without designs.
    omega : ndarray, shape (p, p)
        True precision matrix.
    mask : ndarray of bool, shape (n, p)
        Shifted cells.
    """
    if spec.kind is not StudyKind.GRAPHICAL:
        raise DomainError("gen_graphical needs a graphical ScenarioSpec")
    omega = banded_precision(spec.p)
    try:
        np.linalg.cholesky(omega)
    except np.linalg.LinAlgError:
        raise DomainError(f"the banded precision is not positive definite at p={spec.p}") from None
    rng = np.random.default_rng(spec.seed)
    cov = np.linalg.inv(omega)
    y = rng.multivariate_normal(np.zeros(spec.p), 0.5 * (cov + cov.T), size=spec.n,
                                method="cholesky")
    y, mask = _contaminate(y, spec, rng)
    return Dataset(y), omega, mask


def gen_regression(spec):
    """Draw a contaminated multivariate regression dataset.

    Every coordinate shares the coefficient vector: ``X_i`` is ``p x q``
    with rows drawn independently from ``N_q(0, R(0.3))``.

    Returns
    -------
    dataset : Dataset
    truth : tuple of (beta, sigma)
    mask : ndarray of bool, shape (n, p)
    """
    if spec.kind is not StudyKind.REGRESSION:
        raise DomainError("gen_regression needs a regression ScenarioSpec")
    n, p, q = spec.n, spec.p, spec.q
    rng = np.random.default_rng(spec.seed)
    beta = regression_coefficients(q)
    idx = np.arange(p)
    sigma = 0.6 ** np.abs(idx[:, None] - idx[None, :])
    X = rng.multivariate_normal(np.zeros(q), equicorrelation(q), size=(n, p),
                                method="cholesky")
    eps = rng.multivariate_normal(np.zeros(p), sigma, size=n, method="cholesky")
    y = X @ beta + eps
    y, mask = _contaminate(y, spec, rng)
    return Dataset(y, X), (beta, sigma), mask


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def interval_score(lower, upper, x, alpha=0.05):
    """Interval score of ``[lower, upper]`` for the value ``x``, elementwise.

    Examples
    --------
    >>> float(interval_score(0.0, 1.0, 2.0, 0.05))
    41.0
    """
    lower, upper, x = (np.asarray(v, dtype=float) for v in (lower, upper, x))
    below = np.maximum(lower - x, 0.0)
    above = np.maximum(x - upper, 0.0)
    return (upper - lower) + (2.0 / alpha) * (below + above)


def _target_draws(chain, target):
    target = str(target).lower()
    if target == "beta":
        return chain.beta
    p = chain.sigma.shape[1]
    iu = np.triu_indices(p)
    if target == "sigma":
        return chain.sigma[:, iu[0], iu[1]]
    if target == "omega":
        return chain.precision[:, iu[0], iu[1]]
    raise DomainError(f"unknown target {target!r}; expected beta, sigma or omega")


def _target_truth(truth, target):
    truth = as_float_array(truth, "truth")
    if str(target).lower() == "beta":
        return truth.reshape(-1)
    if truth.ndim != 2 or truth.shape[0] != truth.shape[1]:
        raise DomainError("matrix targets need a square truth")
    iu = np.triu_indices(truth.shape[0])
    return truth[iu]


def compute_metrics(chain, truth, alpha=0.05, target="omega"):
    """MSE, coverage, interval length and interval score of one target.

    Parameters
    ----------
    chain : ChainOutput
    truth : array_like
        A vector for ``target="beta"``, otherwise a square matrix whose
        upper triangle (diagonal included) is scored.
    alpha : float
        Intervals are the equal-tailed ``1 - alpha`` posterior intervals.
    target : {"omega", "sigma", "beta"}

    Returns
    -------
    MetricReport
    """
    if not isinstance(chain, ChainOutput) or chain.n_draws == 0:
        raise DomainError("chain must be a non-empty ChainOutput")
    if not 0.0 < alpha < 1.0:
        raise DomainError("alpha must lie in (0, 1)")
    draws = _target_draws(chain, target)
    x = _target_truth(truth, target)
    if draws.shape[1] != x.shape[0]:
        raise DomainError(f"truth has {x.shape[0]} entries but draws have {draws.shape[1]}")
    post_mean = draws.mean(axis=0)
    lo, hi = np.quantile(draws, [alpha / 2.0, 1.0 - alpha / 2.0], axis=0)
    sq = (post_mean - x) ** 2
    cover = (lo <= x) & (x <= hi)
    length = hi - lo
    score = interval_score(lo, hi, x, alpha)
    return MetricReport(
        mse=float(sq.mean()),
        cp=float(cover.mean()),
        al=float(length.mean()),
        is_score=float(score.mean()),
        per_parameter={"sq_err": sq, "covered": cover, "length": length,
                       "interval_score": score, "lower": lo, "upper": hi},
    )


def outlier_probabilities(chain):
    """Posterior probability that each cell is flagged as an outlier."""
    if chain.z_freq is None:
        raise UnsupportedOperationError(
            f"{chain.model_kind.value} chains carry no outlier indicators")
    return np.clip(chain.z_freq, 0.0, 1.0)


def outlier_counts(zprob, threshold=0.5):
    """Number of cells per coordinate whose outlier probability exceeds ``threshold``."""
    zprob = as_float_array(zprob, "zprob", ndim=2)
    return np.sum(zprob > threshold, axis=0)


def edge_detection(chain, level=0.95):
    """Edges of the precision matrix whose credible interval excludes zero.

    Parameters
    ----------
    chain : ChainOutput
    level : float in (0, 1]
        Credible level of the equal-tailed interval.  ``level = 1`` is the
        whole real line, so nothing is ever flagged.

    Returns
    -------
    dict
        ``{(k, k2): +1 or -1}`` for ``k < k2``, signed by the posterior mean.
    """
    if not 0.0 < level <= 1.0:
        raise DomainError("level must lie in (0, 1]")
    if chain.n_draws == 0:
        raise DomainError("chain has no draws")
    if level >= 1.0:
        return {}
    prec = chain.precision
    p = prec.shape[1]
    tail = 0.5 * (1.0 - level)
    edges = {}
    for k in range(p):
        for k2 in range(k + 1, p):
            vals = prec[:, k, k2]
            lo, hi = np.quantile(vals, [tail, 1.0 - tail])
            if lo > 0.0 or hi < 0.0:
                edges[(k, k2)] = int(np.sign(vals.mean()))
    return edges


# ---------------------------------------------------------------------------
# replications
# ---------------------------------------------------------------------------

def _replication_seed(seed, replication, salt=0):
    return int(np.random.SeedSequence([int(seed), int(replication), int(salt)])
               .generate_state(1)[0])


def run_replication(spec, methods: Sequence, config: SamplerConfig, replication=0,
                    prior: Optional[PriorConfig] = None, alpha=0.05, targets=None):
    """Generate one dataset and score every method on it.

    Data and chain seeds are derived from ``(spec.seed, replication)`` so
    replications are independent and individually reproducible.

    Returns
    -------
    rows : list of dict
        Keys as in :data:`METRIC_COLUMNS`.
    extras : dict
        ``{"dataset", "truth", "mask", "chains"}``.
    """
    data_spec = spec.with_seed(_replication_seed(spec.seed, replication))
    if spec.kind is StudyKind.GRAPHICAL:
        dataset, omega, mask = gen_graphical(data_spec)
        truths = {"omega": omega}
        default_targets = ("omega",)
    else:
        dataset, (beta, sigma), mask = gen_regression(data_spec)
        truths = {"beta": beta, "sigma": sigma, "omega": np.linalg.inv(sigma)}
        default_targets = ("beta", "sigma")
    targets = tuple(targets) if targets else default_targets
    if prior is None:
        prior = PriorConfig.default(dataset.p, dataset.q)
    rows, chains = [], {}
    for j, method in enumerate(methods):
        kind = ModelKind.parse(method)
        cfg = replace(config, model_kind=kind,
                      seed=_replication_seed(config.seed, replication, salt=j + 1))
        chain = run_chain(dataset, prior, cfg)
        chains[kind.value] = chain
        for target in targets:
            rep = compute_metrics(chain, truths[target], alpha=alpha, target=target)
            rows.append({"replication": replication, "method": kind.value,
                         "target": target, **rep.as_row()})
    return rows, {"dataset": dataset, "truth": truths, "mask": mask, "chains": chains}


def aggregate_rows(rows):
    """Mean of every metric per ``(method, target)``, labelled ``replication="mean"``."""
    groups = {}
    for row in rows:
        groups.setdefault((row["method"], row["target"]), []).append(row)
    out = []
    for (method, target), grp in groups.items():
        agg = {"replication": "mean", "method": method, "target": target}
        for key in ("mse", "cp", "al", "is"):
            agg[key] = float(np.mean([r[key] for r in grp]))
        out.append(agg)
    return out
