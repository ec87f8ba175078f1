"""Scattershot experiments: a random input per event over one interferometer.

Unless collisions are heralded, events are drawn from, and analyzed with,
distributions conditioned on collision-free outcomes.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from ._parallel import child_rng, pmap
from .bayes import DEFAULT_GRID, EventRecord, HypothesisFamily, Posterior, infer_x_arrays
from .errors import ParseError, ValidationError
from .interference import (
    COLL,
    CollisionPolicy,
    as_policy,
    collision_free_inputs,
    format_label,
    is_collision_free,
    parse_label,
)
from .matrices import check_unitary, haar_random


@dataclass(frozen=True)
class ScattershotConfig:
    """Interferometer, photon number and input set of a scattershot run.

    ``collisions`` switches on generation of collision outcomes; by default
    only collision-free outcomes are produced, as when detection heralds at
    most one photon per mode.
    """

    unitary: NDArray[np.complex128]
    n: int
    inputs: tuple | None = None
    x_true: float = 1.0
    policy: CollisionPolicy = CollisionPolicy.WITH_COLLISIONS
    seed: int = 0
    weights: NDArray[np.float64] | None = None
    collisions: bool = False

    def __post_init__(self):
        U = check_unitary(self.unitary)
        m = U.shape[0]
        if not 1 <= self.n <= m:
            raise ValidationError(f"need 1 <= n <= {m}")
        inputs = collision_free_inputs(self.n, m) if self.inputs is None else [tuple(c) for c in self.inputs]
        if not inputs:
            raise ValidationError("the input list is empty")
        if len(set(inputs)) != len(inputs):
            raise ValidationError("inputs must be distinct")
        for c in inputs:
            if len(c) != m or sum(c) != self.n or not is_collision_free(c):
                raise ValidationError(f"input {format_label(c)} is not a collision-free {self.n}-photon input on {m} modes")
        if not 0.0 <= self.x_true <= 1.0:
            raise ValidationError("x_true must lie in [0, 1]")
        object.__setattr__(self, "unitary", U)
        object.__setattr__(self, "inputs", tuple(inputs))
        object.__setattr__(self, "policy", as_policy(self.policy))

    @property
    def m(self) -> int:
        return self.unitary.shape[0]

    def family(self) -> HypothesisFamily:
        return HypothesisFamily.from_unitary(
            self.unitary, self.n, self.policy, list(self.inputs), self.weights, collision_free=not self.collisions
        )


def sample_events(config: ScattershotConfig, count: int, family: HypothesisFamily | None = None) -> list[EventRecord]:
    """``count`` events from ``H(x_true)``, reproducible from ``config.seed``."""
    if count < 0:
        raise ValidationError("count must be >= 0")
    fam = config.family() if family is None else family
    rng = np.random.default_rng(np.random.SeedSequence(int(config.seed)))
    k, lab = fam.sample(rng, count, config.x_true)
    return [EventRecord(fam.inputs[a], fam.labels[b]) for a, b in zip(k, lab)]


# -- event files -------------------------------------------------------------------------

HEADER = "input\toutput"


def dumps_events(events) -> str:
    return HEADER + "\n" + "".join(f"{format_label(e.input)}\t{format_label(e.output)}\n" for e in events)


def loads_events(text: str, n: int | None = None, path=None) -> list[EventRecord]:
    """Parse an event stream; ``n`` defaults to the photon number of the first record."""
    events = []
    m = None
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.startswith("#") or line == HEADER:
            continue
        try:
            a, b = line.split("\t")
            inp, out = parse_label(a), parse_label(b)
        except ValueError as exc:
            raise ParseError(f"malformed event record ({exc})", lineno, path) from None
        if inp == COLL:
            raise ParseError("input cannot be a collision bin", lineno, path)
        if n is None:
            n = sum(inp)
        if m is None:
            m = len(inp)
        if len(inp) != m or (out != COLL and len(out) != m):
            raise ParseError(f"expected {m} modes", lineno, path)
        if sum(inp) != n or (out != COLL and sum(out) != n):
            raise ParseError(f"occupations must sum to n={n}", lineno, path)
        events.append(EventRecord(inp, out))
    return events


def write_events(events, path) -> None:
    Path(path).write_text(dumps_events(events))


def read_events(path, n: int | None = None) -> list[EventRecord]:
    return loads_events(Path(path).read_text(), n, str(path))


# -- analysis ----------------------------------------------------------------------------


@dataclass(frozen=True)
class ScattershotAnalysis:
    posterior: Posterior
    counts: dict  # input -> number of events
    checkpoints: NDArray[np.int64] | None = None
    band: NDArray[np.float64] | None = None  # (2, len(checkpoints)): min and max x_est over reorderings
    final_estimates: NDArray[np.float64] | None = None

    @property
    def x_est(self) -> float:
        return self.posterior.x_est

    @property
    def sigma_est(self) -> float:
        return self.posterior.sigma_est


def analyze(
    events,
    config: ScattershotConfig,
    grid_size: int = DEFAULT_GRID,
    resequence: int = 0,
    checkpoints=None,
    seed: int = 0,
) -> ScattershotAnalysis:
    """Posterior on ``x`` plus per-input counts; ``config.x_true`` is ignored.

    With ``resequence = K`` the stream is reordered ``K`` times and the
    running ``x_est`` is evaluated at ``checkpoints`` to give a variability
    band; every ordering ends at the same estimate.
    """
    fam = config.family()
    events = list(events)
    ki, li = fam.index_events(events) if events else (np.zeros(0, int), np.zeros(0, int))
    post = infer_x_arrays(fam.q[ki, li], fam.p[ki, li], grid_size)
    counts = Counter(fam.inputs[k] for k in ki)
    counts = {c: counts.get(c, 0) for c in fam.inputs}
    if resequence <= 0 or not events:
        return ScattershotAnalysis(post, counts)

    N = len(events)
    checkpoints = _default_checkpoints(N) if checkpoints is None else np.asarray(checkpoints, dtype=int)
    if np.any(checkpoints < 0) or np.any(checkpoints > N):
        raise ValidationError(f"checkpoints must lie in [0, {N}]")
    pair_id = np.ravel_multi_index((ki, li), fam.q.shape)
    uniq, inv = np.unique(pair_id, return_inverse=True)
    grid = np.linspace(0.0, 1.0, grid_size)
    qs, ps = fam.q.ravel()[uniq], fam.p.ravel()[uniq]
    with np.errstate(divide="ignore"):
        log_h = np.log(grid[None, :] * qs[:, None] + (1 - grid[None, :]) * ps[:, None])
    log_h = np.where(np.isfinite(log_h), log_h, -1e300)

    def run(r):
        order = child_rng(seed, r).permutation(N)
        onehot = np.zeros((N + 1, uniq.size))
        onehot[np.arange(1, N + 1), inv[order]] = 1.0
        cum = np.cumsum(onehot, axis=0)[checkpoints]
        ll = cum @ log_h
        w = np.exp(ll - ll.max(axis=1, keepdims=True))
        w /= np.trapezoid(w, grid, axis=1)[:, None]
        return np.trapezoid(grid * w, grid, axis=1)

    traj = np.array(pmap(run, range(resequence)))
    return ScattershotAnalysis(post, counts, checkpoints, np.stack([traj.min(axis=0), traj.max(axis=0)]), traj[:, -1])


def _default_checkpoints(N: int) -> NDArray[np.int64]:
    pts = np.unique(np.round(np.geomspace(1, N, 60)).astype(int)) if N > 1 else np.array([1])
    return np.concatenate([[0], pts])


def dumps_summary(result: ScattershotAnalysis) -> str:
    lines = [
        f"N\t{result.posterior.n_events}",
        f"x_est\t{result.x_est:.17g}",
        f"sigma_est\t{result.sigma_est:.17g}",
    ]
    lines += [f"count\t{format_label(c)}\t{k}" for c, k in result.counts.items()]
    if result.band is not None:
        lines.append("# running estimate band over reorderings")
        lines.append("N\tx_min\tx_max")
        lines += [f"{c}\t{lo:.17g}\t{hi:.17g}" for c, lo, hi in zip(result.checkpoints, *result.band)]
    return "\n".join(lines) + "\n"


def dumps_posterior(post: Posterior) -> str:
    lines = ["x\tdensity"] + [f"{x:.17g}\t{w:.17g}" for x, w in zip(post.grid, post.weights)]
    lines += [f"# x_est\t{post.x_est:.17g}", f"# sigma_est\t{post.sigma_est:.17g}", f"# n_events\t{post.n_events}"]
    return "\n".join(lines) + "\n"


def loads_posterior(text: str, path=None) -> Posterior:
    xs, ws, meta = [], [], {}
    for lineno, line in enumerate(text.splitlines(), 1):
        fields = line.split("\t")
        try:
            if line.startswith("# "):
                meta[fields[0][2:]] = float(fields[1])
            elif line.strip() and fields[0] != "x":
                xs.append(float(fields[0]))
                ws.append(float(fields[1]))
        except (ValueError, IndexError):
            raise ParseError("malformed posterior record", lineno, path) from None
    try:
        return Posterior(np.array(xs), np.array(ws), meta["x_est"], meta["sigma_est"], int(meta.get("n_events", 0)))
    except KeyError as exc:
        raise ParseError(f"missing summary field {exc.args[0]}", None, path) from None


# -- Haar benchmark --------------------------------------------------------------------


def haar_sigma_benchmark(
    m: int,
    n: int,
    x_true: float,
    n_events: int,
    num_unitaries: int = 100,
    seed: int = 0,
    grid_size: int = DEFAULT_GRID,
    threads: int | None = None,
) -> NDArray[np.float64]:
    """``sigma_est`` after ``n_events`` scattershot events for each of ``num_unitaries`` Haar matrices."""

    def one(i):
        rng = child_rng(seed, i)
        cfg = ScattershotConfig(haar_random(m, rng), n, x_true=x_true, seed=int(rng.integers(2**63)))
        return analyze(sample_events(cfg, n_events), cfg, grid_size).sigma_est

    return np.array(pmap(one, range(num_unitaries), threads))
