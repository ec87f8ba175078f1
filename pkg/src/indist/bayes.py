"""Bayesian and likelihood-ratio validation of photon indistinguishability.

Hypotheses are ``Q`` (indistinguishable) and ``P`` (distinguishable); partial
indistinguishability is modelled by the mixture ``H(x) = x Q + (1 - x) P``.
Event streams may mix several inputs: every event carries its own ``(q, p)``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from numpy.typing import NDArray
from scipy import optimize
from scipy.special import expit

from ._parallel import child_rng, pmap
from .errors import ConvergenceError, ValidationError
from .interference import (
    COLL,
    CollisionPolicy,
    Distribution,
    Label,
    ModeConfig,
    all_input_probabilities,
    as_policy,
    enumerate_outputs,
    is_collision_free,
)

DEFAULT_CAP = 700.0
DEFAULT_GRID = 2001
STAGE_A_EPS = 1e-6


@dataclass(frozen=True)
class EventRecord:
    input: ModeConfig
    output: Label


class Favored(str, enum.Enum):
    Q = "Q"
    P = "P"


# -- hypothesis families -------------------------------------------------------------


@dataclass(frozen=True)
class HypothesisFamily:
    """``Q`` and ``P`` for each of several inputs over one shared label list.

    ``q[k, l]`` / ``p[k, l]`` are the probabilities of ``labels[l]`` for
    ``inputs[k]``; ``weights`` is the input-selection distribution.
    """

    inputs: tuple
    labels: tuple
    q: NDArray[np.float64]
    p: NDArray[np.float64]
    weights: NDArray[np.float64]

    def __post_init__(self):
        q = np.atleast_2d(np.asarray(self.q, dtype=float))
        p = np.atleast_2d(np.asarray(self.p, dtype=float))
        k, n_lab = len(self.inputs), len(self.labels)
        if q.shape != (k, n_lab) or p.shape != (k, n_lab):
            raise ValidationError("probability tables do not match inputs x labels")
        w = np.full(k, 1.0 / k) if self.weights is None else np.asarray(self.weights, dtype=float)
        if w.shape != (k,) or np.any(w < 0) or not np.isclose(w.sum(), 1.0):
            raise ValidationError("input weights must be a probability vector")
        object.__setattr__(self, "inputs", tuple(tuple(c) for c in self.inputs))
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "_in_index", {c: i for i, c in enumerate(self.inputs)})
        object.__setattr__(self, "_lab_index", {lab: i for i, lab in enumerate(self.labels)})

    @classmethod
    def from_pairs(cls, pairs: Sequence[tuple[Distribution, Distribution]], inputs=None, weights=None):
        """Build from ``(Q, P)`` distribution pairs sharing one label list."""
        pairs = list(pairs)
        labels = pairs[0][0].labels
        for Q, P in pairs:
            if Q.labels != labels or P.labels != labels:
                raise ValidationError("all distributions must share one label list")
        if inputs is None:
            inputs = [(k,) for k in range(len(pairs))]
        return cls(tuple(inputs), labels, np.array([Q.probs for Q, _ in pairs]), np.array([P.probs for _, P in pairs]), weights)

    @classmethod
    def from_unitary(cls, U, n: int, policy=CollisionPolicy.WITH_COLLISIONS, inputs=None, weights=None, collision_free=False):
        """Per-input hypotheses for interferometer ``U``.

        With ``collision_free`` both hypotheses are conditioned on outcomes
        with at most one photon per mode (the heralded subspace).
        """
        policy = as_policy(policy)
        if collision_free:
            policy = CollisionPolicy.WITH_COLLISIONS
        inputs, q, p = all_input_probabilities(U, n, policy, inputs)
        labels = enumerate_outputs(n, np.asarray(U).shape[0], policy)
        if collision_free:
            keep = np.array([is_collision_free(lab) for lab in labels])
            q, p = q[:, keep], p[:, keep]
            labels = [lab for lab, k in zip(labels, keep) if k]
            mq, mp = q.sum(axis=1, keepdims=True), p.sum(axis=1, keepdims=True)
            if np.any(mq <= 0) or np.any(mp <= 0):
                raise ValidationError("an input has no collision-free outcomes")
            q, p = q / mq, p / mp
        return cls(tuple(inputs), tuple(labels), q, p, weights)

    def mixture(self, x: float) -> NDArray[np.float64]:
        return x * self.q + (1.0 - x) * self.p

    def pair(self, k: int = 0) -> tuple[Distribution, Distribution]:
        return Distribution(self.labels, self.q[k]), Distribution(self.labels, self.p[k])

    def index_events(self, events: Sequence[EventRecord]) -> tuple[NDArray, NDArray]:
        """Input and label indices of each event."""
        try:
            ki = np.array([self._in_index[tuple(e.input)] for e in events], dtype=int)
        except KeyError as exc:
            raise ValidationError(f"event input {exc.args[0]} is not part of the configuration") from None
        try:
            li = np.array([self._lab_index[e.output if e.output == COLL else tuple(e.output)] for e in events], dtype=int)
        except KeyError as exc:
            raise ValidationError(f"event output {exc.args[0]} is not a label of the configuration") from None
        return ki, li

    def lookup(self, events: Sequence[EventRecord]) -> tuple[NDArray, NDArray]:
        """Per-event ``(q_i, p_i)``."""
        ki, li = self.index_events(events)
        return self.q[ki, li], self.p[ki, li]

    def sample(self, rng: np.random.Generator, count: int, x: float):
        """Draw ``count`` events from ``H(x)``; returns input and label indices."""
        return _sample_mixture(rng, count, self.weights, self.q, self.p, x)


def _inverse_cdf(rows: NDArray, u: NDArray) -> NDArray:
    """Label index for uniforms ``u`` given per-event probability rows."""
    cdf = np.cumsum(rows, axis=1)
    cdf /= cdf[:, -1:]
    idx = (cdf <= u[:, None]).sum(axis=1)
    return np.minimum(idx, rows.shape[1] - 1)


def _crn_draws(rng: np.random.Generator, count: int, weights, q, p):
    """Common random numbers for mixture sampling at any ``x``.

    Returns input index, the mixture selector ``u`` and the labels the event
    would take if drawn from ``Q`` or from ``P``; at mixing weight ``x`` the
    event is the ``Q`` draw when ``u < x``.
    """
    k = rng.choice(len(weights), size=count, p=weights)
    u = rng.random(count)
    lq = _inverse_cdf(q[k], rng.random(count))
    lp = _inverse_cdf(p[k], rng.random(count))
    return k, u, lq, lp


def _sample_mixture(rng, count, weights, q, p, x):
    k, u, lq, lp = _crn_draws(rng, count, weights, q, p)
    return k, np.where(u < x, lq, lp)


# -- binary test ----------------------------------------------------------------------


def log_ratio_terms(q: NDArray, p: NDArray, cap: float = DEFAULT_CAP) -> NDArray:
    """``log(q_i / p_i)`` with infinite terms saturated at ``+-cap``."""
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    if np.any((q <= 0) & (p <= 0)):
        raise ValidationError("event has zero probability under both hypotheses")
    with np.errstate(divide="ignore"):
        t = np.log(q) - np.log(p)
    return np.clip(t, -cap, cap)


def log_likelihood_ratio(
    events: Sequence,
    q_of: Callable,
    p_of: Callable,
    cap: float = DEFAULT_CAP,
    full_output: bool = False,
):
    """``log R = sum_i log(q_i / p_i)``, clipped to ``[-cap, cap]``.

    Outcomes impossible under one hypothesis drive ``log R`` to the cap; with
    ``full_output`` a ``(log_r, saturated)`` tuple is returned.
    """
    q = np.array([q_of(e) for e in events], dtype=float)
    p = np.array([p_of(e) for e in events], dtype=float)
    total = float(log_ratio_terms(q, p, cap).sum()) if len(events) else 0.0
    saturated = abs(total) >= cap or bool(np.any((q <= 0) | (p <= 0)))
    total = float(np.clip(total, -cap, cap))
    return (total, saturated) if full_output else total


def posterior_q(log_r) -> NDArray:
    """``Pr(Q | data) = R / (1 + R)`` under equal priors."""
    return expit(log_r)


@dataclass(frozen=True)
class ConfidenceCurve:
    n_events: NDArray[np.int64]
    p_conf: NDArray[np.float64]
    pr_ind_q: NDArray[np.float64]  # mean Pr(Q|N) on Q-generated data
    pr_dis_p: NDArray[np.float64]  # mean Pr(P|N) on P-generated data


def _as_family(hyp) -> HypothesisFamily:
    if isinstance(hyp, HypothesisFamily):
        return hyp
    Q, P = hyp
    return HypothesisFamily.from_pairs([(Q, P)])


def _noisy(rng, probs, noise):
    if noise <= 0:
        return probs
    out = np.clip(probs + noise * probs * rng.standard_normal(probs.shape), 0.0, None)
    return out / out.sum(axis=-1, keepdims=True)


def confidence_curve(
    hyp,
    max_events: int,
    num_trials: int,
    seed: int,
    cap: float = DEFAULT_CAP,
    data_noise: float = 0.0,
    threads: int | None = None,
) -> ConfidenceCurve:
    """Monte Carlo ``P_conf(N) = (Pr_ind(Q|N) + Pr_dis(P|N)) / 2`` for ``N = 0..max_events``.

    ``hyp`` is a ``(Q, P)`` pair or a :class:`HypothesisFamily` (one input per
    event, drawn by the family weights). ``data_noise`` perturbs, per trial,
    the distributions the data are drawn from by relative Gaussian noise; the
    test itself always uses the noiseless ``Q`` and ``P``.
    """
    fam = _as_family(hyp)
    if num_trials < 1:
        raise ValidationError("num_trials must be >= 1")
    terms = log_ratio_terms(np.where(fam.q + fam.p > 0, fam.q, 1.0), np.where(fam.q + fam.p > 0, fam.p, 1.0), cap)

    def trial(i):
        rng = child_rng(seed, i)
        out = []
        for source in (fam.q, fam.p):
            k, lab = _sample_mixture(rng, max_events, fam.weights, _noisy(rng, source, data_noise), source, 1.0)
            log_r = np.concatenate([[0.0], np.cumsum(terms[k, lab])])
            out.append(posterior_q(np.clip(log_r, -cap, cap)))
        return out[0], 1.0 - out[1]

    res = pmap(trial, range(num_trials), threads)
    pr_ind_q = np.mean([r[0] for r in res], axis=0)
    pr_dis_p = np.mean([r[1] for r in res], axis=0)
    return ConfidenceCurve(np.arange(max_events + 1), 0.5 * (pr_ind_q + pr_dis_p), pr_ind_q, pr_dis_p)


# -- posterior on x -----------------------------------------------------------------


@dataclass(frozen=True)
class Posterior:
    grid: NDArray[np.float64]
    weights: NDArray[np.float64]  # density on grid, trapezoid-normalized
    x_est: float
    sigma_est: float
    n_events: int


def _log_likelihood_grid(q, p, grid):
    """``sum_i log(x q_i + (1-x) p_i)`` on ``grid``, grouping identical events."""
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    if q.size == 0:
        return np.zeros_like(grid)
    pairs, counts = np.unique(np.stack([q, p], axis=1), axis=0, return_counts=True)
    h = grid[:, None] * pairs[None, :, 0] + (1.0 - grid[:, None]) * pairs[None, :, 1]
    with np.errstate(divide="ignore"):
        return np.log(h) @ counts.astype(float)


def infer_x_arrays(q, p, grid_size: int = DEFAULT_GRID) -> Posterior:
    """Posterior of ``x`` under a uniform prior given per-event ``(q_i, p_i)``."""
    if grid_size < 2:
        raise ValidationError("grid_size must be >= 2")
    grid = np.linspace(0.0, 1.0, grid_size)
    ll = _log_likelihood_grid(q, p, grid)
    top = np.max(ll)
    if not np.isfinite(top):
        raise ValidationError("events have zero likelihood for every x")
    w = np.exp(ll - top)
    w /= np.trapezoid(w, grid)
    x_est = float(np.trapezoid(grid * w, grid))
    var = float(np.trapezoid((grid - x_est) ** 2 * w, grid))
    return Posterior(grid, w, x_est, float(np.sqrt(max(var, 0.0))), int(np.size(q)))


def infer_x(events: Sequence, q_of: Callable, p_of: Callable, grid_size: int = DEFAULT_GRID) -> Posterior:
    q = np.array([q_of(e) for e in events], dtype=float)
    p = np.array([p_of(e) for e in events], dtype=float)
    return infer_x_arrays(q, p, grid_size)


# -- convex likelihood-ratio test -----------------------------------------------------


def convex_log_ratio(x: float, q, p, favored) -> float:
    """``log R(x)`` of the fixed hypothesis against ``H(x)``.

    Favored ``Q``: ``R = prod q_i / h_i(x)``; favored ``P``: ``R = prod h_i(x) / p_i``.
    """
    favored = Favored(favored)
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    h = x * q + (1.0 - x) * p
    with np.errstate(divide="ignore", invalid="ignore"):
        if favored is Favored.Q:
            # q_i/h_i is exactly 1 at x=1
            t = np.where(q == h, 0.0, np.log(q) - np.log(h))
        else:
            t = np.where(p == h, 0.0, np.log(h) - np.log(p))
    return float(t.sum())


def binary_favored(q, p) -> Favored:
    """Hypothesis chosen by the binary test on these events."""
    return Favored.Q if log_ratio_terms(q, p).sum() > 0 else Favored.P


def convex_lr_stage_a_arrays(q, p, favored=None, eps: float = STAGE_A_EPS) -> float:
    """Threshold ``x_th`` where the fixed-vs-``H(x)`` ratio returns to 1.

    The trivial root (``x = 1`` for ``Q``, ``x = 0`` for ``P``) is excluded by
    searching ``[eps, 1 - eps]``; ``log R(x)`` is convex, so a sign change on
    that bracket isolates the other root.
    """
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    favored = binary_favored(q, p) if favored is None else Favored(favored)

    def f(x):
        # infinite values only matter through their sign
        return float(np.clip(convex_log_ratio(x, q, p, favored), -1e300, 1e300))

    lo, hi = eps, 1.0 - eps
    flo, fhi = f(lo), f(hi)
    if flo == 0 or fhi == 0 or np.sign(flo) == np.sign(fhi):
        raise ConvergenceError(f"log R(x) does not change sign on [{lo}, {hi}]")
    return float(optimize.bisect(f, lo, hi, xtol=1e-12))


def convex_lr_stage_a(events, q_of: Callable, p_of: Callable, favored=None, eps: float = STAGE_A_EPS) -> float:
    q = np.array([q_of(e) for e in events], dtype=float)
    p = np.array([p_of(e) for e in events], dtype=float)
    return convex_lr_stage_a_arrays(q, p, favored, eps)


@dataclass(frozen=True)
class StageBResult:
    interval: tuple[float, float]
    y_primes: NDArray[np.float64]
    y_grid: NDArray[np.float64]
    log_r: NDArray[np.float64]  # (n_repeats, len(y_grid))


def convex_lr_stage_b(
    x_th: float,
    family: HypothesisFamily,
    favored,
    n_sim: int,
    n_repeats: int,
    seed: int,
    y_grid: NDArray | None = None,
    threads: int | None = None,
) -> StageBResult:
    """Interval of ``y'`` where simulated data from ``H(y)`` make ``R' = 1``.

    ``R'`` compares the fixed hypothesis with ``H(x_th)``. Each repeat draws
    one set of common random numbers reused across the ``y`` sweep, so its
    ``log R'(y)`` curve is a deterministic step function; ``y'`` is the first
    zero crossing, linearly interpolated between sweep points.
    """
    if n_sim < 1 or n_repeats < 1:
        raise ValidationError("n_sim and n_repeats must be >= 1")
    favored = Favored(favored)
    y_grid = np.linspace(0.0, 1.0, 1001) if y_grid is None else np.asarray(y_grid, dtype=float)
    h = family.mixture(x_th)
    with np.errstate(divide="ignore"):
        if favored is Favored.Q:
            table = np.log(family.q) - np.log(h)
        else:
            table = np.log(h) - np.log(family.p)
    table = np.clip(np.nan_to_num(table, nan=0.0, neginf=-DEFAULT_CAP, posinf=DEFAULT_CAP), -DEFAULT_CAP, DEFAULT_CAP)

    def repeat(r):
        rng = child_rng(seed, r)
        k, u, lq, lp = _crn_draws(rng, n_sim, family.weights, family.q, family.p)
        tq, tp = table[k, lq], table[k, lp]
        order = np.argsort(u, kind="stable")
        us = u[order]
        gain = np.concatenate([[0.0], np.cumsum((tq - tp)[order])])
        # events with u < y are Q draws
        curve = tp.sum() + gain[np.searchsorted(us, y_grid, side="left")]
        return curve, _first_crossing(y_grid, curve)

    res = pmap(repeat, range(n_repeats), threads)
    log_r = np.array([c for c, _ in res])
    y_primes = np.array([y for _, y in res])
    if np.any(np.isnan(y_primes)):
        raise ConvergenceError("the y sweep does not bracket R' = 1 in every repeat")
    return StageBResult((float(y_primes.min()), float(y_primes.max())), y_primes, y_grid, log_r)


def _first_crossing(x, f) -> float:
    s = np.sign(f)
    idx = np.flatnonzero(s[:-1] * s[1:] <= 0)
    idx = idx[(s[idx] != 0) | (s[idx + 1] != 0)]
    if idx.size == 0:
        return float("nan")
    i = idx[0]
    if f[i] == f[i + 1]:
        return float(x[i])
    return float(x[i] + (x[i + 1] - x[i]) * f[i] / (f[i] - f[i + 1]))


# -- decision threshold under partial distinguishability ---------------------------------


@dataclass(frozen=True)
class ThresholdResult:
    crossing: float
    x_grid: NDArray[np.float64]
    p_conf: NDArray[np.float64]  # mean Pr(Q | n_events) for data drawn from H(x)


def threshold_scan(
    hyp,
    n_events: int,
    num_samples: int,
    seed: int,
    x_grid: NDArray | None = None,
    cap: float = DEFAULT_CAP,
) -> ThresholdResult:
    """Indistinguishability ``x*`` below which the binary test prefers ``P``.

    For data drawn from ``H(x)`` the mean posterior ``Pr(Q | n_events)`` is
    evaluated with common random numbers across ``x``; the crossing of 1/2 is
    bracketed on ``x_grid`` and refined by bisection.
    """
    fam = _as_family(hyp)
    if n_events < 1:
        raise ValidationError("n_events must be >= 1")
    x_grid = np.linspace(0.0, 1.0, 101) if x_grid is None else np.asarray(x_grid, dtype=float)
    terms = log_ratio_terms(np.where(fam.q + fam.p > 0, fam.q, 1.0), np.where(fam.q + fam.p > 0, fam.p, 1.0), cap)
    draws = [_crn_draws(child_rng(seed, i), n_events, fam.weights, fam.q, fam.p) for i in range(num_samples)]
    prepared = []
    for k, u, lq, lp in draws:
        tq, tp = terms[k, lq], terms[k, lp]
        order = np.argsort(u, kind="stable")
        prepared.append((u[order], tp.sum(), np.concatenate([[0.0], np.cumsum((tq - tp)[order])])))

    def p_conf(x):
        vals = [base + gain[np.searchsorted(us, x, side="left")] for us, base, gain in prepared]
        return float(np.mean(posterior_q(np.clip(vals, -cap, cap))))

    curve = np.array([p_conf(x) for x in x_grid])
    above = curve - 0.5
    idx = np.flatnonzero((above[:-1] <= 0) & (above[1:] > 0))
    if idx.size == 0:
        raise ConvergenceError("P_conf(x) does not cross 1/2 on the x grid")
    a, b = x_grid[idx[-1]], x_grid[idx[-1] + 1]
    for _ in range(60):
        mid = 0.5 * (a + b)
        if p_conf(mid) > 0.5:
            b = mid
        else:
            a = mid
    return ThresholdResult(0.5 * (a + b), x_grid, curve)
