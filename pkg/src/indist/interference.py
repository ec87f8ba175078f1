"""Output statistics of distinguishable and indistinguishable photons."""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Union

import numpy as np
from numpy.typing import NDArray

from .errors import ParseError, ValidationError

COLL = "COLL"
PROB_FLOOR = 1e-15

ModeConfig = tuple[int, ...]
Label = Union[ModeConfig, str]


class CollisionPolicy(str, enum.Enum):
    """How multiply-occupied output modes are reported.

    ``WITH_COLLISIONS`` keeps every occupation pattern; ``BINNED`` merges all
    collision outcomes into the single :data:`COLL` label.
    """

    WITH_COLLISIONS = "col"
    BINNED = "binned"


def as_policy(policy) -> CollisionPolicy:
    if isinstance(policy, CollisionPolicy):
        return policy
    aliases = {"col": "col", "with_collisions": "col", "binned": "binned", "no-col": "binned", "nocol": "binned"}
    try:
        return CollisionPolicy(aliases[str(policy).lower()])
    except KeyError:
        raise ValidationError(f"unknown collision policy {policy!r}") from None


def modes_to_config(modes, m: int) -> ModeConfig:
    """One-based occupied modes -> occupation tuple (repeats allowed)."""
    occ = [0] * m
    for q in modes:
        if not 1 <= q <= m:
            raise ValidationError(f"mode {q} out of range 1..{m}")
        occ[q - 1] += 1
    return tuple(occ)


def config_to_modes(config: ModeConfig) -> list[int]:
    return [j + 1 for j, s in enumerate(config) for _ in range(s)]


def format_label(label: Label) -> str:
    return label if label == COLL else "-".join(str(s) for s in label)


def parse_label(text: str) -> Label:
    text = text.strip()
    if text == COLL:
        return COLL
    try:
        occ = tuple(int(s) for s in text.split("-"))
    except ValueError:
        raise ValidationError(f"bad occupation label {text!r}") from None
    if not occ or any(s < 0 for s in occ):
        raise ValidationError(f"bad occupation label {text!r}")
    return occ


def is_collision_free(config: ModeConfig) -> bool:
    return all(s <= 1 for s in config)


@lru_cache(maxsize=None)
def _compositions(n: int, m: int) -> tuple[ModeConfig, ...]:
    # descending lexicographic: (n,0,..) first
    if m == 1:
        return ((n,),)
    out = []
    for first in range(n, -1, -1):
        out.extend((first,) + rest for rest in _compositions(n - first, m - 1))
    return tuple(out)


def enumerate_outputs(n: int, m: int, policy=CollisionPolicy.WITH_COLLISIONS) -> list[Label]:
    """All output labels for ``n`` photons in ``m`` modes, in a fixed order."""
    policy = as_policy(policy)
    if n < 1 or m < 1:
        raise ValidationError("need n >= 1 and m >= 1")
    configs = _compositions(n, m)
    if policy is CollisionPolicy.WITH_COLLISIONS:
        return list(configs)
    return [c for c in configs if is_collision_free(c)] + [COLL]


def collision_free_inputs(n: int, m: int) -> list[ModeConfig]:
    """All ``C(m, n)`` 0/1 inputs ordered by their one-based mode lists."""
    return [modes_to_config(c, m) for c in itertools.combinations(range(1, m + 1), n)]


# -- permanents -------------------------------------------------------------------


def permanent(M: NDArray) -> complex:
    """Matrix permanent by Glynn's formula with Gray-code ordering, O(2**k k)."""
    M = np.asarray(M, dtype=np.complex128)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValidationError(f"permanent needs a square matrix, got shape {M.shape}")
    k = M.shape[0]
    if k == 0:
        return 1.0 + 0j
    if k == 1:
        return complex(M[0, 0])
    row_sums = M.sum(axis=0)  # all delta_i = +1
    total = np.prod(row_sums)
    sign = 1
    delta = np.ones(k, dtype=int)
    prev_gray = 0
    for i in range(1, 2 ** (k - 1)):
        gray = i ^ (i >> 1)
        bit = (gray ^ prev_gray).bit_length() - 1
        prev_gray = gray
        # flip row `bit + 1`; row 0 is held at +1
        r = bit + 1
        delta[r] = -delta[r]
        row_sums = row_sums + 2 * delta[r] * M[r]
        sign = -sign
        total += sign * np.prod(row_sums)
    return complex(total / 2 ** (k - 1))


@lru_cache(maxsize=None)
def _glynn_table(k: int) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    deltas = np.array([(1,) + d for d in itertools.product((1, -1), repeat=k - 1)], dtype=float)
    return deltas, np.prod(deltas, axis=1)


def batch_permanent(A: NDArray) -> NDArray:
    """Permanents of a stack of ``k x k`` matrices, shape ``(..., k, k)``."""
    A = np.asarray(A)
    k = A.shape[-1]
    if A.shape[-2] != k:
        raise ValidationError("batch_permanent needs square trailing dimensions")
    if k == 1:
        return A[..., 0, 0]
    if k == 2:
        return A[..., 0, 0] * A[..., 1, 1] + A[..., 0, 1] * A[..., 1, 0]
    if k == 3:
        a = [[A[..., i, j] for j in range(3)] for i in range(3)]
        return (
            a[0][0] * (a[1][1] * a[2][2] + a[1][2] * a[2][1])
            + a[0][1] * (a[1][0] * a[2][2] + a[1][2] * a[2][0])
            + a[0][2] * (a[1][0] * a[2][1] + a[1][1] * a[2][0])
        )
    deltas, signs = _glynn_table(k)
    sums = np.einsum("di,...ij->...dj", deltas, A)
    return np.einsum("d,...d->...", signs, np.prod(sums, axis=-1)) / 2 ** (k - 1)


# -- distributions -----------------------------------------------------------------


@dataclass(frozen=True)
class Distribution:
    labels: tuple
    probs: NDArray[np.float64]

    def __post_init__(self):
        probs = np.array(self.probs, dtype=float)
        labels = tuple(self.labels)
        if probs.shape != (len(labels),):
            raise ValidationError("labels and probabilities differ in length")
        if len(set(labels)) != len(labels):
            raise ValidationError("distribution labels must be unique")
        probs.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "probs", probs)

    def __len__(self):
        return len(self.labels)

    def prob(self, label: Label) -> float:
        return float(self.probs[self.index(label)])

    def index(self, label: Label) -> int:
        try:
            return self._index[label]
        except KeyError:
            raise ValidationError(f"label {format_label(label)} not in distribution") from None

    @property
    def _index(self) -> dict:
        cached = self.__dict__.get("_index_cache")
        if cached is None:
            cached = {lab: i for i, lab in enumerate(self.labels)}
            object.__setattr__(self, "_index_cache", cached)
        return cached

    def as_dict(self) -> dict:
        return dict(zip(self.labels, self.probs.tolist()))

    def is_normalized(self, tol: float = 1e-9) -> bool:
        return bool(abs(self.probs.sum() - 1.0) <= tol and np.all(self.probs >= 0))


@lru_cache(maxsize=None)
def _output_structure(n: int, m: int):
    """Row selections and factorial weights for all collision-including outputs."""
    configs = _compositions(n, m)
    rows = np.array([[j for j, s in enumerate(c) for _ in range(s)] for c in configs], dtype=int)
    norm = np.array([np.prod([math.factorial(s) for s in c]) for c in configs], dtype=float)
    free = np.array([is_collision_free(c) for c in configs])
    return configs, rows, norm, free


def _check_input(U: NDArray, config) -> tuple[NDArray, int]:
    U = np.asarray(U)
    m = U.shape[0]
    config = tuple(int(s) for s in config)
    if len(config) != m:
        raise ValidationError(f"input has {len(config)} modes, matrix has {m}")
    if any(s not in (0, 1) for s in config):
        raise ValidationError(f"input {format_label(config)} must be collision-free (0/1 occupations)")
    n = sum(config)
    if n < 1:
        raise ValidationError("input must contain at least one photon")
    return np.flatnonzero(config), n


def _raw_probabilities(U: NDArray, cols: NDArray, n: int, indistinguishable: bool) -> NDArray:
    """Probabilities over all collision-including outputs for input columns ``cols``.

    ``cols`` may be ``(n,)`` or a batch ``(I, n)``; output shape ``(..., O)``.
    """
    m = U.shape[0]
    _, rows, norm, _ = _output_structure(n, m)
    A = U if indistinguishable else np.abs(U) ** 2
    cols = np.asarray(cols)
    sub = A[rows[..., :, None], cols[..., None, None, :]] if cols.ndim == 1 else A[
        rows[None, :, :, None], cols[:, None, None, :]
    ]
    perm = batch_permanent(sub)
    probs = (np.abs(perm) ** 2 if indistinguishable else perm.real) / norm
    probs[probs < PROB_FLOOR] = 0.0
    return probs


def _apply_policy(raw: NDArray, n: int, m: int, policy: CollisionPolicy) -> NDArray:
    if policy is CollisionPolicy.WITH_COLLISIONS:
        return raw
    _, _, _, free = _output_structure(n, m)
    return np.concatenate([raw[..., free], raw[..., ~free].sum(axis=-1, keepdims=True)], axis=-1)


def _distribution(U, input_config, policy, indistinguishable: bool) -> Distribution:
    U = np.asarray(U, dtype=np.complex128)
    policy = as_policy(policy)
    cols, n = _check_input(U, input_config)
    m = U.shape[0]
    raw = _raw_probabilities(U, cols, n, indistinguishable)
    return Distribution(enumerate_outputs(n, m, policy), _apply_policy(raw, n, m, policy))


def distribution_indistinguishable(U, input_config, policy=CollisionPolicy.WITH_COLLISIONS) -> Distribution:
    """Output distribution for fully indistinguishable photons.

    ``q_S = |perm(U[S, input])|**2 / prod_j s_j!``, with output row ``j``
    repeated ``s_j`` times.
    """
    return _distribution(U, input_config, policy, True)


def distribution_distinguishable(U, input_config, policy=CollisionPolicy.WITH_COLLISIONS) -> Distribution:
    """Output distribution for distinguishable photons (independent classical routing)."""
    return _distribution(U, input_config, policy, False)


def distribution_pair(U, input_config, policy=CollisionPolicy.WITH_COLLISIONS) -> tuple[Distribution, Distribution]:
    """``(Q, P)``: indistinguishable and distinguishable distributions."""
    return (
        distribution_indistinguishable(U, input_config, policy),
        distribution_distinguishable(U, input_config, policy),
    )


def all_input_probabilities(U, n: int, policy=CollisionPolicy.WITH_COLLISIONS, inputs=None):
    """Vectorized ``(inputs, Q, P)`` over many collision-free inputs.

    Returns the input list, and arrays of shape ``(len(inputs), n_labels)``.
    """
    U = np.asarray(U, dtype=np.complex128)
    policy = as_policy(policy)
    m = U.shape[0]
    if n > m:
        raise ValidationError(f"n={n} photons exceed m={m} modes")
    if inputs is None:
        inputs, cols = _default_inputs(n, m)
    else:
        cols = np.array([_check_input(U, c)[0] for c in inputs], dtype=int)
    if cols.shape[1] != n:
        raise ValidationError("all inputs must carry n photons")
    q = _apply_policy(_raw_probabilities(U, cols, n, True), n, m, policy)
    p = _apply_policy(_raw_probabilities(U, cols, n, False), n, m, policy)
    return list(inputs), q, p


@lru_cache(maxsize=None)
def _default_inputs(n: int, m: int):
    inputs = collision_free_inputs(n, m)
    cols = np.array([np.flatnonzero(c) for c in inputs], dtype=int)
    cols.setflags(write=False)
    return inputs, cols


def convex_mixture(Q: Distribution, P: Distribution, x: float) -> Distribution:
    """``h_i = x q_i + (1 - x) p_i``."""
    if Q.labels != P.labels:
        raise ValidationError("distributions have different label lists")
    if not 0.0 <= x <= 1.0:
        raise ValidationError(f"x={x} outside [0, 1]")
    if x == 1.0:
        return Q
    if x == 0.0:
        return P
    return Distribution(Q.labels, x * Q.probs + (1.0 - x) * P.probs)


def restrict_collision_free(dist: Distribution) -> Distribution:
    """Condition a distribution on collision-free outcomes (drops ``COLL`` and bunched labels)."""
    keep = [i for i, lab in enumerate(dist.labels) if lab != COLL and is_collision_free(lab)]
    mass = dist.probs[keep].sum()
    if mass <= 0:
        raise ValidationError("distribution has no collision-free support")
    return Distribution([dist.labels[i] for i in keep], dist.probs[keep] / mass)


# -- file format ---------------------------------------------------------------------


def dumps_distribution(dist: Distribution) -> str:
    lines = ["label\tp"]
    lines += [f"{format_label(lab)}\t{format(float(v), '.17g')}" for lab, v in zip(dist.labels, dist.probs)]
    return "\n".join(lines) + "\n"


def loads_distribution(text: str, path=None) -> Distribution:
    labels, probs = [], []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        fields = line.split("\t")
        if fields[:2] == ["label", "p"]:
            continue
        if len(fields) != 2:
            raise ParseError("expected 2 tab-separated fields (label, p)", lineno, path)
        try:
            labels.append(parse_label(fields[0]))
            probs.append(float(fields[1]))
        except ValueError as exc:
            raise ParseError(str(exc), lineno, path) from None
    return Distribution(labels, probs)
