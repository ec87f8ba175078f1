"""Searching interferometer space for designs with a large TVD."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from ._parallel import child_rng, pmap
from .distance import tvd_rows
from .errors import ParseError, ValidationError
from .interference import CollisionPolicy, all_input_probabilities, as_policy
from .matrices import CircuitParams, fast_circuit, fourier, haar_random, sylvester

DEFAULT_BINS = 100


class Setting(str, enum.Enum):
    """Which TVD statistic summarizes an interferometer."""

    BEST = "best"  # highest TVD over inputs
    AVERAGE = "average"  # mean TVD over all collision-free inputs
    FIXED = "fixed"  # TVD of one given input


def as_setting(setting) -> Setting:
    if isinstance(setting, Setting):
        return setting
    aliases = {"fixed-best": "best", "max": "best", "avg": "average", "mean": "average"}
    s = str(setting).lower()
    try:
        return Setting(aliases.get(s, s))
    except ValueError:
        raise ValidationError(f"unknown setting {setting!r}") from None


def tvd_statistic(U, n: int, policy=CollisionPolicy.WITH_COLLISIONS, setting=Setting.AVERAGE, input_config=None) -> float:
    setting = as_setting(setting)
    if setting is Setting.FIXED:
        if input_config is None:
            raise ValidationError("the fixed setting needs an input configuration")
        _, q, p = all_input_probabilities(U, n, policy, [tuple(input_config)])
        return float(tvd_rows(q, p)[0])
    _, q, p = all_input_probabilities(U, n, policy)
    values = tvd_rows(q, p)
    return float(values.max() if setting is Setting.BEST else values.mean())


@dataclass(frozen=True)
class EnsembleHistogram:
    bin_edges: NDArray[np.float64]
    counts: NDArray[np.int64]
    sample_count: int
    markers: dict = field(default_factory=dict)
    values: NDArray[np.float64] | None = None

    @classmethod
    def from_values(cls, values, markers=None, bins: int = DEFAULT_BINS) -> "EnsembleHistogram":
        values = np.asarray(values, dtype=float)
        edges = np.linspace(0.0, 1.0, bins + 1)
        # clip so round-off just above 1 still lands in the last bin
        counts, _ = np.histogram(np.clip(values, 0.0, 1.0), bins=edges)
        return cls(edges, counts.astype(np.int64), int(values.size), dict(markers or {}), values)

    @property
    def minimum(self) -> float:
        return float(np.min(self.values))

    @property
    def maximum(self) -> float:
        return float(np.max(self.values))

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))


def dumps_histogram(hist: EnsembleHistogram) -> str:
    lines = ["bin_lo\tbin_hi\tcount"]
    e = hist.bin_edges
    lines += [f"{format(e[i], '.17g')}\t{format(e[i + 1], '.17g')}\t{c}" for i, c in enumerate(hist.counts)]
    lines.append(f"# sample_count\t{hist.sample_count}")
    if hist.values is not None and hist.values.size:
        lines.append(f"# min\t{format(hist.minimum, '.17g')}")
        lines.append(f"# max\t{format(hist.maximum, '.17g')}")
    lines += [f"# marker\t{name}\t{format(v, '.17g')}" for name, v in hist.markers.items()]
    return "\n".join(lines) + "\n"


def loads_histogram(text: str, path=None) -> EnsembleHistogram:
    lo, hi, counts, markers = [], [], [], {}
    sample_count = None
    for lineno, line in enumerate(text.splitlines(), 1):
        fields = line.split("\t")
        try:
            if line.startswith("# marker"):
                markers[fields[1]] = float(fields[2])
            elif line.startswith("# sample_count"):
                sample_count = int(fields[1])
            elif not line.strip() or line.startswith("#") or fields[0] == "bin_lo":
                continue
            else:
                a, b, c = fields
                lo.append(float(a))
                hi.append(float(b))
                counts.append(int(c))
        except (ValueError, IndexError):
            raise ParseError("malformed histogram record", lineno, path) from None
    edges = np.array(lo + hi[-1:]) if lo else np.array([0.0, 1.0])
    counts = np.array(counts, dtype=np.int64)
    return EnsembleHistogram(edges, counts, int(counts.sum()) if sample_count is None else sample_count, markers)


# -- ensembles ---------------------------------------------------------------------


@dataclass(frozen=True)
class ScreenResult:
    histogram: EnsembleHistogram
    best_matrix: NDArray[np.complex128]
    best_value: float
    best_index: int


def haar_screen(
    m: int,
    n: int,
    policy=CollisionPolicy.WITH_COLLISIONS,
    setting=Setting.AVERAGE,
    num_samples: int = 10_000,
    seed: int = 0,
    input_config=None,
    threads: int | None = None,
    bins: int = DEFAULT_BINS,
) -> ScreenResult:
    """TVD statistic over Haar-random unitaries.

    Sample ``i`` draws from its own stream derived from ``(seed, i)``, so the
    result does not depend on ``threads``. Markers hold the Sylvester (when
    ``m`` is a power of two) and Fourier values of the same statistic.
    """
    if num_samples < 1:
        raise ValidationError("num_samples must be >= 1")
    policy, setting = as_policy(policy), as_setting(setting)

    def one(i):
        U = haar_random(m, child_rng(seed, i))
        return tvd_statistic(U, n, policy, setting, input_config)

    values = np.array(pmap(one, range(num_samples), threads))
    best = int(np.argmax(values))
    markers = _markers(m, n, policy, setting, input_config)
    return ScreenResult(
        EnsembleHistogram.from_values(values, markers, bins),
        haar_random(m, child_rng(seed, best)),
        float(values[best]),
        best,
    )


def _markers(m, n, policy, setting, input_config) -> dict:
    markers = {}
    if m & (m - 1) == 0:
        markers["sylvester"] = tvd_statistic(sylvester(m.bit_length() - 1), n, policy, setting, input_config)
    markers["fourier"] = tvd_statistic(fourier(m), n, policy, setting, input_config)
    return markers


def random_phase_circuit(p: int, rng: np.random.Generator) -> CircuitParams:
    return CircuitParams.balanced(p, rng.uniform(0.0, 2 * np.pi, size=(p, 2 ** (p - 1))))


def phase_noise_ensemble(
    p: int,
    n: int,
    setting=Setting.AVERAGE,
    num_samples: int = 10_000,
    seed: int = 0,
    policy=CollisionPolicy.WITH_COLLISIONS,
    input_config=None,
    threads: int | None = None,
    bins: int = DEFAULT_BINS,
) -> EnsembleHistogram:
    """TVD statistic of balanced layered circuits with uniform random phases."""
    if num_samples < 1:
        raise ValidationError("num_samples must be >= 1")
    policy, setting = as_policy(policy), as_setting(setting)

    def one(i):
        U = fast_circuit(random_phase_circuit(p, child_rng(seed, i)))
        return tvd_statistic(U, n, policy, setting, input_config)

    values = np.array(pmap(one, range(num_samples), threads))
    return EnsembleHistogram.from_values(values, _markers(2**p, n, policy, setting, input_config), bins)


def phase_noise_sample(p: int, seed: int, index: int):
    """Recreate circuit ``index`` of :func:`phase_noise_ensemble`."""
    return fast_circuit(random_phase_circuit(p, child_rng(seed, index)))


# -- local optimization ---------------------------------------------------------------


def n_unitary_params(m: int) -> int:
    return m * m


def unitary_from_params(x: NDArray, m: int) -> NDArray[np.complex128]:
    """Map ``m**2`` reals onto U(m).

    Two-mode blocks ``[[e^{i phi} cos t, -sin t], [e^{i phi} sin t, cos t]]``
    on every pair ``(i, j)``, ``i < j``, in a triangular order, followed by
    one phase per output mode.
    """
    x = np.asarray(x, dtype=float)
    if x.size != m * m:
        raise ValidationError(f"need {m * m} parameters for U({m})")
    U = np.eye(m, dtype=np.complex128)
    k = 0
    for i in range(m - 1):
        for j in range(i + 1, m):
            theta, phi = x[k], x[k + 1]
            k += 2
            c, s = np.cos(theta), np.sin(theta)
            ri, rj = U[i].copy(), U[j].copy()
            U[i] = np.exp(1j * phi) * c * ri - s * rj
            U[j] = np.exp(1j * phi) * s * ri + c * rj
    return np.exp(1j * x[k:])[:, None] * U


@dataclass(frozen=True)
class OptimizeResult:
    matrix: NDArray[np.complex128]
    value: float
    restart_values: list
    traces: list  # per restart: objective after each accepted move


def compass_search(f, x0, step: float = np.pi / 4, min_step: float = 1e-8, max_evals: int = 20_000):
    """Maximize ``f`` by coordinate pattern search; returns ``(x, fx, trace)``.

    Moves are accepted only on strict improvement, so the trace never decreases.
    """
    x = np.array(x0, dtype=float)
    fx = f(x)
    trace = [fx]
    evals = 1
    while step >= min_step and evals < max_evals:
        improved = False
        for i in range(x.size):
            for sgn in (1.0, -1.0):
                y = x.copy()
                y[i] += sgn * step
                fy = f(y)
                evals += 1
                if fy > fx:
                    x, fx = y, fy
                    trace.append(fx)
                    improved = True
                    break
        if not improved:
            step /= 2
    return x, fx, trace


def local_optimize(
    m: int,
    n: int,
    policy=CollisionPolicy.WITH_COLLISIONS,
    setting=Setting.AVERAGE,
    seed: int = 0,
    restarts: int = 20,
    input_config=None,
    max_evals: int = 20_000,
    threads: int | None = None,
) -> OptimizeResult:
    """Multi-restart derivative-free maximization of the TVD statistic over U(m)."""
    if restarts < 1:
        raise ValidationError("restarts must be >= 1")
    policy, setting = as_policy(policy), as_setting(setting)

    def objective(x):
        return tvd_statistic(unitary_from_params(x, m), n, policy, setting, input_config)

    def run(r):
        x0 = child_rng(seed, r).uniform(0.0, 2 * np.pi, size=m * m)
        return compass_search(objective, x0, max_evals=max_evals)

    runs = pmap(run, range(restarts), threads)
    values = [fx for _, fx, _ in runs]
    best = int(np.argmax(values))
    return OptimizeResult(
        unitary_from_params(runs[best][0], m), float(values[best]), values, [t for _, _, t in runs]
    )


def describe(hist: EnsembleHistogram) -> str:
    parts = [f"samples={hist.sample_count}"]
    if hist.values is not None:
        parts += [f"min={hist.minimum:.4f}", f"mean={hist.mean:.4f}", f"max={hist.maximum:.4f}"]
    parts += [f"{k}={v:.4f}" for k, v in hist.markers.items()]
    return " ".join(parts)

