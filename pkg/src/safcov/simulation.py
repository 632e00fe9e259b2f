"""Monte Carlo lab: true-covariance designs, panel draws, estimator studies.

Three families of population covariance matrices are provided —

- ``uniform``: unit diagonal, off-diagonals ``eta * U(0, 1)``;
- ``sparse``: unit diagonal, off-diagonals nonzero with probability p,
  values ``U(0, 0.2)``;
- ``spiked``: a uniform-design noise part plus four diagonal spikes of
  sizes ``N**a_k`` (two strong, two weak by default), together with the
  implied 4-column loading representation

— along with i.i.d. panel draws (Gaussian or rescaled Student-t with 5
degrees of freedom) and a replication driver that scores any set of
registered estimators against the truth.

Replication streams are counter-derived from ``(seed, rep)`` so results
are byte-identical for any worker count.
"""

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import DegenerateInput, NotPositiveDefinite
from .linalg import (
    frobenius_norm,
    spectral_norm,
    symmetrize,
    weighted_quadratic_norm,
)
from . import registry

__all__ = [
    "SimulationDesign",
    "ReplicationScore",
    "gen_uniform_design",
    "gen_sparse_design",
    "gen_spiked_design",
    "generate_design",
    "draw_panel",
    "factor_strength_exponents",
    "run_study",
    "summarize_study",
    "study_table",
]

#: Lowest admissible eigenvalue of a generated design; draws below it
#: are rejected and redrawn with the next seed.
_DESIGN_MIN_EIG = 1e-6
_MAX_REDRAWS = 100

#: Stride between replication-level redraw seeds of the population
#: matrix, keeping them disjoint from panel streams.
_REDRAW_STRIDE = 100003

_DESIGN_KINDS = ("uniform", "sparse", "spiked")
_DISTRIBUTIONS = ("gaussian", "student_t5")


@dataclass(frozen=True)
class SimulationDesign:
    """One Monte Carlo cell: a design family plus its dimensions.

    Parameters
    ----------
    kind : {"uniform", "sparse", "spiked"}
        Population covariance family.
    N, T : int
        Cross-section size and panel length.
    eta : float
        Off-diagonal level of the uniform/spiked designs.
    p : float
        Nonzero probability of the sparse design, in (0, 1).
    seed : int
        Root seed; the population matrix and every replication stream
        derive from it.
    dist : {"gaussian", "student_t5"}
        Panel sampling distribution.
    exponents : tuple of float
        Spike-size exponents of the spiked design (``r_k = N**a_k``).
    """

    kind: str
    N: int
    T: int
    eta: float = 0.0
    p: float = 0.1
    seed: int = 0
    dist: str = "gaussian"
    exponents: tuple = (1.0, 1.0, 0.8, 0.5)

    def __post_init__(self):
        if self.kind not in _DESIGN_KINDS:
            raise ValueError(f"unknown design kind {self.kind!r}; "
                             f"expected one of {_DESIGN_KINDS}")
        if self.N < 1 or self.T < 2:
            raise ValueError("need N >= 1 and T >= 2")
        if self.kind == "sparse" and not 0.0 < self.p < 1.0:
            raise ValueError("sparse design needs p in (0, 1)")
        if self.eta < 0:
            raise ValueError("eta must be nonnegative")
        if self.dist not in _DISTRIBUTIONS:
            raise ValueError(f"unknown distribution {self.dist!r}; "
                             f"expected one of {_DISTRIBUTIONS}")


@dataclass
class ReplicationScore:
    """Losses of one estimator on one replication.

    ``frobenius_loss`` is the squared Frobenius distance to the truth
    (the convention of the study tables); ``spectral_loss`` and
    ``weighted_loss`` are the operator norm and the dimension-scaled
    quadratic norm of the error.  ``error`` carries the failure message
    when the estimator raised, in which case the losses are NaN.
    """

    rep: int
    estimator_id: str
    frobenius_loss: float = np.nan
    spectral_loss: float = np.nan
    weighted_loss: float = np.nan
    wall_time: float = 0.0
    error: str = None


def _draw_pd(maker, seed):
    """Rejection sampling: redraw with incremented seed until PD."""
    s = int(seed)
    for _ in range(_MAX_REDRAWS):
        A = maker(s)
        if np.linalg.eigvalsh(A).min() > _DESIGN_MIN_EIG:
            return A
        s += 1
    raise DegenerateInput(
        f"no positive definite draw within {_MAX_REDRAWS} seed increments")


def gen_uniform_design(N, eta, seed):
    """Unit-diagonal matrix with off-diagonals ``eta * U(0, 1)``.

    Upper off-diagonals are drawn i.i.d. and mirrored; draws whose
    smallest eigenvalue is not safely positive are rejected and redrawn
    with the next seed.
    """
    if eta < 0:
        raise ValueError("eta must be nonnegative")

    def maker(s):
        rng = np.random.default_rng(s)
        A = np.eye(N)
        iu = np.triu_indices(N, 1)
        A[iu] = eta * rng.uniform(size=iu[0].size)
        return symmetrize(A + A.T - np.diag(np.diag(A)))

    return _draw_pd(maker, seed)


def gen_sparse_design(N, p, seed):
    """Unit-diagonal matrix with sparse ``U(0, 0.2)`` off-diagonals.

    Each upper off-diagonal is nonzero with probability ``p``; nonzero
    values are uniform on (0, 0.2).  Mirrored; PD enforced by seeded
    redraws.
    """
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie in (0, 1)")

    def maker(s):
        rng = np.random.default_rng(s)
        A = np.eye(N)
        iu = np.triu_indices(N, 1)
        mask = rng.uniform(size=iu[0].size) < p
        values = rng.uniform(0.0, 0.2, size=iu[0].size)
        A[iu] = np.where(mask, values, 0.0)
        return symmetrize(A + A.T - np.diag(np.diag(A)))

    return _draw_pd(maker, seed)


def gen_spiked_design(N, eta, seed, exponents=(1.0, 1.0, 0.8, 0.5)):
    """Spiked covariance: uniform-design noise plus diagonal spikes.

    Spike ``k`` adds ``r_k = N**exponents[k]`` to the k-th diagonal
    entry.  With the default exponents the first two factors are strong
    and the last two weak.

    Returns
    -------
    Sigma : (N, N) ndarray
        The spiked covariance matrix.
    Lambda_true : (N, len(exponents)) ndarray
        Implied loading representation, column k equal to
        ``sqrt(r_k) e_k``; used by alignment tests.
    """
    if N < len(exponents) + 1:
        raise DegenerateInput(
            f"need N >= {len(exponents) + 1} for {len(exponents)} spikes")
    Sigma_u = gen_uniform_design(N, eta, seed)
    spikes = np.array([float(N) ** a for a in exponents])
    Sigma = Sigma_u.copy()
    Sigma[np.arange(spikes.size), np.arange(spikes.size)] += spikes
    Lambda_true = np.zeros((N, spikes.size))
    Lambda_true[np.arange(spikes.size), np.arange(spikes.size)] = np.sqrt(spikes)
    return Sigma, Lambda_true


def generate_design(design, seed=None):
    """Population matrix (and loadings, spiked only) of a design cell."""
    seed = design.seed if seed is None else seed
    if design.kind == "uniform":
        return gen_uniform_design(design.N, design.eta, seed), None
    if design.kind == "sparse":
        return gen_sparse_design(design.N, design.p, seed), None
    Sigma, Lambda_true = gen_spiked_design(design.N, design.eta, seed,
                                           design.exponents)
    return Sigma, Lambda_true


def draw_panel(Sigma_true, T, seed, dist="gaussian"):
    """Draw T i.i.d. columns from the given population covariance.

    Gaussian draws factor the covariance once and transform standard
    normals.  ``student_t5`` uses the Gaussian scale mixture of the
    t-distribution with 5 degrees of freedom, rescaled so the marginal
    variances still equal the diagonal of ``Sigma_true``.

    Returns an (N, T) panel; the same seed yields byte-identical output.
    """
    Sigma_true = np.asarray(Sigma_true, dtype=np.float64)
    if dist not in _DISTRIBUTIONS:
        raise ValueError(f"unknown distribution {dist!r}")
    try:
        L = np.linalg.cholesky(Sigma_true)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(
            f"population covariance is not positive definite: {exc}") from exc
    rng = np.random.default_rng(seed)
    Z = rng.standard_normal((Sigma_true.shape[0], T))
    if dist == "student_t5":
        g = rng.chisquare(5.0, size=T)
        # t5 variance is 5/3; the 3/5 factor restores unit scale.
        Z = Z * np.sqrt((5.0 / g) * (3.0 / 5.0))[None, :]
    return L @ Z


def factor_strength_exponents(Lambda_true):
    """Strength exponents ``log pi_k(L'L) / log N`` of a loading matrix.

    ``pi_k`` are the descending eigenvalues of the r x r Gram matrix;
    exponents near 1 mean strong factors, smaller values weak ones.
    """
    Lambda_true = np.asarray(Lambda_true, dtype=np.float64)
    N = Lambda_true.shape[0]
    gram = Lambda_true.T @ Lambda_true
    values = np.sort(np.linalg.eigvalsh(symmetrize(gram)))[::-1]
    values = np.maximum(values, np.finfo(float).tiny)
    return np.log(values) / np.log(N)


def _score_one_rep(design, Sigma_fixed, estimator_ids, rep):
    """Score every estimator on the replication's fresh panel."""
    if Sigma_fixed is None:
        Sigma_true, _ = generate_design(
            design, design.seed + (rep + 1) * _REDRAW_STRIDE)
    else:
        Sigma_true = Sigma_fixed
    X = draw_panel(Sigma_true, design.T, (design.seed, rep), design.dist)
    context = {"sigma_true": Sigma_true}
    scores = []
    for estimator_id in estimator_ids:
        start = time.perf_counter()
        try:
            matrix, is_precision = registry.estimate(estimator_id, X, context)
            if is_precision:
                matrix = np.linalg.inv(matrix)
            delta = matrix - Sigma_true
            score = ReplicationScore(
                rep=rep,
                estimator_id=estimator_id,
                frobenius_loss=frobenius_norm(delta) ** 2,
                spectral_loss=spectral_norm(delta),
                weighted_loss=weighted_quadratic_norm(delta, Sigma_true),
                wall_time=time.perf_counter() - start,
            )
        except Exception as exc:  # per-cell failure, never fatal
            score = ReplicationScore(
                rep=rep,
                estimator_id=estimator_id,
                wall_time=time.perf_counter() - start,
                error=f"{type(exc).__name__}: {exc}",
            )
        scores.append(score)
    return scores


def run_study(design, estimators, reps, *, redraw_sigma=False, jobs=1):
    """Replicate a design cell and score each estimator every time.

    Parameters
    ----------
    design : SimulationDesign
        The cell to simulate.  By default the population matrix is
        drawn once from ``design.seed`` and shared by all replications;
        ``redraw_sigma=True`` draws a fresh one per replication from a
        derived seed.
    estimators : sequence of str
        Registry ids; unknown ids raise ``KeyError`` up front.
    reps : int
        Number of replications.
    jobs : int
        Worker processes; results are byte-identical for any value
        because every replication owns a counter-derived stream.

    Returns
    -------
    pandas.DataFrame
        Tidy per-replication table with one row per (rep, estimator):
        squared-Frobenius / spectral / weighted losses, wall time, and
        an ``error`` column that is non-null where an estimator failed.
    """
    estimator_ids = list(estimators)
    if not estimator_ids:
        raise ValueError("need at least one estimator id")
    for estimator_id in estimator_ids:
        registry.require_known(estimator_id)
    if reps < 1:
        raise ValueError("need at least one replication")

    Sigma_fixed = None
    if not redraw_sigma:
        Sigma_fixed, _ = generate_design(design)

    if jobs == 1:
        per_rep = [_score_one_rep(design, Sigma_fixed, estimator_ids, rep)
                   for rep in range(reps)]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            per_rep = list(pool.map(
                _score_one_rep,
                [design] * reps,
                [Sigma_fixed] * reps,
                [estimator_ids] * reps,
                range(reps),
            ))

    rows = [vars(score) for scores in per_rep for score in scores]
    return pd.DataFrame(rows)


def summarize_study(scores):
    """Aggregate a tidy score table per estimator.

    Returns mean / median / standard error of the squared-Frobenius
    loss over successful replications, mean secondary losses, mean wall
    time, and the failure count, one row per estimator in first-seen
    order.
    """
    scores = pd.DataFrame(scores)
    rows = []
    for estimator_id in scores["estimator_id"].unique():
        block = scores[scores["estimator_id"] == estimator_id]
        ok = block[block["error"].isna()]
        n_ok = len(ok)
        loss = ok["frobenius_loss"].to_numpy()
        rows.append({
            "estimator_id": estimator_id,
            "mean_frobenius": loss.mean() if n_ok else np.nan,
            "median_frobenius": np.median(loss) if n_ok else np.nan,
            "stderr_frobenius": (loss.std(ddof=1) / np.sqrt(n_ok)
                                 if n_ok > 1 else np.nan),
            "mean_spectral": ok["spectral_loss"].mean() if n_ok else np.nan,
            "mean_weighted": ok["weighted_loss"].mean() if n_ok else np.nan,
            "mean_wall_time": block["wall_time"].mean(),
            "n_ok": n_ok,
            "n_failed": int(block["error"].notna().sum()),
        })
    return pd.DataFrame(rows)


def study_table(summary, title=None):
    """Aligned text rendering of a study summary (one estimator per row)."""
    summary = pd.DataFrame(summary)
    body = summary.to_string(
        index=False,
        float_format=lambda v: f"{v:.4f}",
    )
    if title:
        return f"{title}\n{body}"
    return body
