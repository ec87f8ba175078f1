"""Total variation distance between the two photon-statistics hypotheses."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParseError, ValidationError
from .interference import (
    CollisionPolicy,
    Distribution,
    ModeConfig,
    all_input_probabilities,
    as_policy,
    format_label,
    modes_to_config,
    parse_label,
)


def tvd(P: Distribution, Q: Distribution) -> float:
    """Half the L1 distance between two distributions over the same labels."""
    if P.labels != Q.labels:
        raise ValidationError("distributions have different label lists")
    return float(0.5 * np.abs(P.probs - Q.probs).sum())


def tvd_rows(q, p):
    """Row-wise TVD of probability arrays with the label axis last."""
    return 0.5 * np.abs(np.asarray(q) - np.asarray(p)).sum(axis=-1)


@dataclass(frozen=True)
class TvdReport:
    per_input: dict  # ModeConfig -> float, in input enumeration order
    best_input: ModeConfig
    max_tvd: float
    avg_tvd: float


def _report(inputs, values) -> TvdReport:
    values = np.asarray(values, dtype=float)
    # first maximum in enumeration order == lexicographically smallest mode list
    best = int(np.argmax(values))
    return TvdReport(
        per_input=dict(zip(inputs, values.tolist())),
        best_input=inputs[best],
        max_tvd=float(values[best]),
        avg_tvd=float(values.mean()),
    )


def tvd_report(U, n: int, policy=CollisionPolicy.WITH_COLLISIONS, inputs=None) -> TvdReport:
    """TVD for every collision-free input (or the given ones), with max and mean.

    The mean is unweighted over the inputs considered (all ``C(m, n)`` by default).
    """
    policy = as_policy(policy)
    inputs, q, p = all_input_probabilities(U, n, policy, inputs)
    return _report(inputs, tvd_rows(q, p))


def input_tvds(U, n: int, policy=CollisionPolicy.WITH_COLLISIONS) -> np.ndarray:
    """Per-input TVD array in :func:`collision_free_inputs` order (fast path for ensembles)."""
    _, q, p = all_input_probabilities(U, n, as_policy(policy))
    return tvd_rows(q, p)


def cyclic_inputs(n: int, p: int, m: int | None = None) -> list[ModeConfig]:
    """Inputs occupying modes ``s + (r - 1) n**(p-1)``, ``r = 1..n``, for each ``s = 1..n**(p-1)``."""
    if n < 1 or p < 1:
        raise ValidationError("need n >= 1 and p >= 1")
    size = n**p
    if m is not None and m != size:
        raise ValidationError(f"m={m} is not n**p = {size}")
    stride = n ** (p - 1)
    return [modes_to_config([s + (r - 1) * stride for r in range(1, n + 1)], size) for s in range(1, stride + 1)]


def cyclic_inputs_for(n: int, m: int) -> list[ModeConfig]:
    """Cyclic inputs for ``m`` modes; ``m`` must be ``n**p`` with ``p >= 1``."""
    if n < 2 or m < n:
        raise ValidationError(f"m={m} is not a positive power of n={n}")
    p, size = 1, n
    while size < m:
        size *= n
        p += 1
    if size != m:
        raise ValidationError(f"m={m} is not a positive power of n={n}")
    return cyclic_inputs(n, p)


# -- report format ---------------------------------------------------------------


def dumps_report(report: TvdReport) -> str:
    lines = ["input\ttvd"]
    lines += [f"{format_label(k)}\t{format(v, '.17g')}" for k, v in report.per_input.items()]
    lines += [
        "# summary",
        f"max_tvd\t{format(report.max_tvd, '.17g')}",
        f"avg_tvd\t{format(report.avg_tvd, '.17g')}",
        f"best_input\t{format_label(report.best_input)}",
    ]
    return "\n".join(lines) + "\n"


def loads_report(text: str, path=None) -> TvdReport:
    per_input, summary = {}, {}
    section = "rows"
    for lineno, line in enumerate(text.splitlines(), 1):
        if line.startswith("# summary"):
            section = "summary"
            continue
        if not line.strip() or line.startswith("#") or line == "input\ttvd":
            continue
        fields = line.split("\t")
        if len(fields) != 2:
            raise ParseError("expected 2 tab-separated fields", lineno, path)
        try:
            if section == "rows":
                per_input[parse_label(fields[0])] = float(fields[1])
            else:
                summary[fields[0]] = fields[1]
        except ValueError as exc:
            raise ParseError(str(exc), lineno, path) from None
    try:
        return TvdReport(
            per_input=per_input,
            best_input=parse_label(summary["best_input"]),
            max_tvd=float(summary["max_tvd"]),
            avg_tvd=float(summary["avg_tvd"]),
        )
    except KeyError as exc:
        raise ParseError(f"missing summary field {exc}", None, path) from None
