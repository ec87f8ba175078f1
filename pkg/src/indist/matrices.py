"""Interferometer matrices.

Conventions used throughout the package:

* A matrix ``U`` maps input mode ``k`` (column) to output mode ``j`` (row):
  ``a_in_k^dag -> sum_j U[j, k] a_out_j^dag``.
* Mode indices are one-based in every user-facing argument (``embed``,
  notable-matrix descriptions, file formats); arrays are indexed from zero.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.typing import NDArray
from scipy import optimize

from .errors import ParseError, ValidationError

UNITARY_TOL = 1e-10
TAU_BALANCED = 2.0 ** -0.5

_H2 = np.array([[1.0, 1.0], [1.0, -1.0]]) / np.sqrt(2.0)


def is_unitary(U: NDArray, tol: float = UNITARY_TOL) -> bool:
    U = np.asarray(U)
    if U.ndim != 2 or U.shape[0] != U.shape[1] or U.shape[0] < 1:
        return False
    return bool(np.max(np.abs(U @ U.conj().T - np.eye(U.shape[0]))) <= tol)


def check_unitary(U: NDArray, tol: float = UNITARY_TOL) -> NDArray[np.complex128]:
    """Return ``U`` as a complex array, raising if it is not unitary."""
    U = np.asarray(U, dtype=np.complex128)
    if U.ndim != 2 or U.shape[0] != U.shape[1] or U.shape[0] < 1:
        raise ValidationError(f"expected a non-empty square matrix, got shape {U.shape}")
    err = np.max(np.abs(U @ U.conj().T - np.eye(U.shape[0])))
    if err > tol:
        raise ValidationError(f"matrix is not unitary (max |UU^dag - I| = {err:.3e})")
    return U


def sylvester(p: int) -> NDArray[np.complex128]:
    """Normalized Sylvester-Hadamard matrix of size ``2**p``.

    Each doubling step is scaled by ``1/sqrt(2)`` so the result is unitary.
    """
    if p < 0:
        raise ValidationError("p must be non-negative")
    S = np.ones((1, 1))
    for _ in range(p):
        S = np.block([[S, S], [S, -S]]) / np.sqrt(2.0)
    return S.astype(np.complex128)


def fourier(m: int) -> NDArray[np.complex128]:
    """Discrete Fourier matrix, entry ``(l, q) = exp(2 pi i l q / m) / sqrt(m)``, zero-based."""
    if m < 1:
        raise ValidationError("m must be positive")
    idx = np.arange(m)
    return np.exp(2j * np.pi * np.outer(idx, idx) / m) / np.sqrt(m)


def beam_splitter(m: int, modes: tuple[int, int]) -> NDArray[np.complex128]:
    """Balanced beam splitter ``[[1, 1], [1, -1]]/sqrt(2)`` on two one-based modes."""
    return embed(_H2, m, list(modes))


def embed(small: NDArray, m: int, modes: list[int]) -> NDArray[np.complex128]:
    """Act as ``small`` on the listed one-based modes and as the identity elsewhere."""
    small = np.asarray(small, dtype=np.complex128)
    k = small.shape[0]
    if small.shape != (k, k):
        raise ValidationError("small matrix must be square")
    if len(modes) != k:
        raise ValidationError(f"need {k} modes, got {len(modes)}")
    if len(set(modes)) != len(modes):
        raise ValidationError(f"duplicate mode indices in {modes}")
    if k > m or any(not 1 <= q <= m for q in modes):
        raise ValidationError(f"mode indices {modes} out of range 1..{m}")
    idx = np.asarray(modes) - 1
    U = np.eye(m, dtype=np.complex128)
    U[np.ix_(idx, idx)] = small
    return U


def _notable_table() -> dict[str, NDArray[np.complex128]]:
    bs = beam_splitter
    s2 = np.sqrt(2.0)
    u4main = 0.5 * np.array(
        [[1, 1, s2, 0], [1, -1, 0, s2], [1, 1, -s2, 0], [1, -1, 0, -s2]], dtype=np.complex128
    )
    return {
        "U1": bs(3, (2, 3)) @ bs(3, (1, 2)),
        "U2": np.array([[1, 2, 2], [2, -2, 1], [2, 1, -2]], dtype=np.complex128) / 3.0,
        "U3": bs(3, (1, 2)),
        "U4": bs(4, (1, 3)) @ bs(4, (2, 4)) @ bs(4, (1, 2)),
        "U5": embed(fourier(3), 4, [1, 2, 3]),
        "U6": bs(4, (1, 3)) @ bs(4, (2, 4)),
        "U7": bs(4, (1, 2)),
        "U8": embed(fourier(3), 8, [1, 2, 3]),
        "U9": bs(8, (1, 2)),
        "U10": embed(fourier(4), 8, [1, 2, 3, 4]),
        "U4main": u4main,
    }


NOTABLE_IDS = ("U1", "U2", "U3", "U4", "U5", "U6", "U7", "U8", "U9", "U10", "U4main")


def notable(name: str) -> NDArray[np.complex128]:
    """Notable small interferometers from the optimal-design table.

    ``U1`` .. ``U10`` are built from balanced beam splitters and embedded
    Fourier blocks on the lowest-index modes; ``U4main`` is the explicit
    3-photon/4-mode optimum (identical to ``U4`` with this beam-splitter
    convention).
    """
    table = _notable_table()
    if name not in table:
        raise ValidationError(f"unknown notable matrix {name!r}; choose from {', '.join(NOTABLE_IDS)}")
    return table[name]


def haar_random(m: int, seed: int | np.random.SeedSequence | np.random.Generator) -> NDArray[np.complex128]:
    """Haar-uniform unitary via QR of a complex Ginibre matrix.

    Columns of ``Q`` are rephased so that ``R`` has a positive real diagonal;
    without this the QR output is not Haar distributed.
    """
    if m < 1:
        raise ValidationError("m must be positive")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    z = (rng.standard_normal((m, m)) + 1j * rng.standard_normal((m, m))) / np.sqrt(2.0)
    q, r = np.linalg.qr(z)
    d = np.diagonal(r)
    return q * (d / np.abs(d))


# -- fast (layered) architecture ------------------------------------------------


@dataclass(frozen=True)
class CircuitParams:
    """Parameters of the ``2**p``-mode layered architecture.

    ``tau[t, k]`` and ``phi[t, k]`` belong to the ``k``-th coupler of layer
    ``t`` (zero-based). Layer ``t`` couples modes separated by ``2**t``.
    Layers act in order of decreasing separation, so light meets layer
    ``p - 1`` first and layer 0 last; couplers in a layer are ordered by their
    lower mode index. ``phi[t, k]`` is a phase on the higher-index output of
    that coupler; ``phi[0]`` is therefore an output phase screen, invisible to
    photon counting.
    """

    p: int
    tau: NDArray[np.float64]
    phi: NDArray[np.float64]

    def __post_init__(self):
        tau = np.array(self.tau, dtype=float)
        phi = np.array(self.phi, dtype=float)
        shape = (self.p, 2 ** (self.p - 1)) if self.p >= 1 else None
        if shape is None:
            raise ValidationError("p must be >= 1")
        if tau.shape != shape or phi.shape != shape:
            raise ValidationError(
                f"tau/phi must have shape {shape} for p={self.p}, got {tau.shape} and {phi.shape}"
            )
        if np.any(tau < 0) or np.any(tau > 1):
            raise ValidationError("transmissivities must lie in [0, 1]")
        tau.setflags(write=False)
        phi.setflags(write=False)
        object.__setattr__(self, "tau", tau)
        object.__setattr__(self, "phi", phi)

    @property
    def dim(self) -> int:
        return 2**self.p

    @classmethod
    def balanced(cls, p: int, phi=None) -> "CircuitParams":
        shape = (p, 2 ** (p - 1))
        return cls(p, np.full(shape, TAU_BALANCED), np.zeros(shape) if phi is None else phi)


def layer_pairs(p: int, t: int) -> list[tuple[int, int]]:
    """Zero-based mode pairs coupled by layer ``t`` (also zero-based)."""
    h = 1 << t
    return [(a, a + h) for a in range(2**p) if not a & h]


def coupler(tau: float) -> NDArray[np.float64]:
    """Two-mode coupler with amplitude transmissivity ``tau``.

    Real symmetric form ``[[tau, r], [r, -tau]]``, ``r = sqrt(1 - tau**2)``.
    It equals ``diag(1, -i) [[tau, i r], [i r, tau]] diag(1, -i)``, i.e. the
    symmetric coupler with fixed quarter-wave phases on the upper port, so
    balanced couplers with zero phases compose to the Sylvester matrix.
    """
    r = np.sqrt(max(0.0, 1.0 - tau * tau))
    return np.array([[tau, r], [r, -tau]])


def fast_circuit(params: CircuitParams) -> NDArray[np.complex128]:
    d = params.dim
    U = np.eye(d, dtype=np.complex128)
    for t in reversed(range(params.p)):
        pairs = layer_pairs(params.p, t)
        lo = np.array([a for a, _ in pairs])
        hi = np.array([b for _, b in pairs])
        tau = params.tau[t]
        r = np.sqrt(np.clip(1.0 - tau**2, 0.0, None))
        ph = np.exp(1j * params.phi[t])
        top, bot = U[lo].copy(), U[hi].copy()
        U[lo] = tau[:, None] * top + r[:, None] * bot
        U[hi] = ph[:, None] * (r[:, None] * top - tau[:, None] * bot)
    return U


def fidelity(ideal: NDArray, rec: NDArray) -> float:
    """``|Tr(ideal^dag rec)| / d``."""
    ideal = np.asarray(ideal)
    rec = np.asarray(rec)
    if ideal.shape != rec.shape:
        raise ValidationError(f"dimension mismatch: {ideal.shape} vs {rec.shape}")
    return float(np.abs(np.vdot(ideal, rec)) / ideal.shape[0])


@dataclass(frozen=True)
class PhaseSolution:
    """Balanced layered circuit matched to a target up to phase screens.

    ``matrix`` is ``diag(exp(i out_phases)) fast_circuit(params)
    diag(exp(i in_phases))``; it approximates the target with outputs and
    inputs relabeled by the one-based ``output_perm`` and ``input_perm``,
    which changes no photon-counting statistic.
    """

    params: CircuitParams
    in_phases: NDArray[np.float64]
    out_phases: NDArray[np.float64]
    input_perm: tuple[int, ...]
    output_perm: tuple[int, ...]
    fidelity: float

    @property
    def matrix(self) -> NDArray[np.complex128]:
        U = fast_circuit(self.params)
        return np.exp(1j * self.out_phases)[:, None] * U * np.exp(1j * self.in_phases)[None, :]

    def relabeled(self, target: NDArray) -> NDArray[np.complex128]:
        """``target`` with rows and columns permuted as in the fit."""
        target = np.asarray(target)
        return target[np.asarray(self.output_perm) - 1][:, np.asarray(self.input_perm) - 1]


def bit_reversal(p: int) -> list[int]:
    """One-based bit-reversal permutation of ``2**p`` modes."""
    return [int(format(i, f"0{p}b")[::-1], 2) + 1 for i in range(2**p)] if p else [1]


def _check_perm(perm, d):
    perm = tuple(range(1, d + 1)) if perm is None else tuple(int(k) for k in perm)
    if sorted(perm) != list(range(1, d + 1)):
        raise ValidationError("mode permutations must be permutations of 1..d")
    return perm


def solve_fast_phases(
    target: NDArray,
    p: int,
    seed: int = 0,
    restarts: int = 16,
    input_perm: list[int] | None = None,
    output_perm: list[int] | None = None,
    phase_screens: bool = True,
) -> PhaseSolution:
    """Phases of the balanced layered circuit maximizing fidelity to ``target``.

    Input and output phase screens are optimized too when ``phase_screens``
    is set (they are invisible to photon counting). The Fourier matrix needs
    ``output_perm=bit_reversal(p)``. The first start is all-zero; the others
    are random multiples of ``pi/4``.
    """
    target = np.asarray(target, dtype=np.complex128)
    d = 2**p
    if target.shape != (d, d):
        raise ValidationError(f"target must be {d}x{d}")
    in_perm, out_perm = _check_perm(input_perm, d), _check_perm(output_perm, d)
    goal = target[np.asarray(out_perm) - 1][:, np.asarray(in_perm) - 1]
    shape = (p, d // 2)
    n_phi = p * d // 2
    n_free = n_phi + (2 * d if phase_screens else 0)
    rng = np.random.default_rng(seed)

    def unpack(x):
        phi = x[:n_phi].reshape(shape)
        if phase_screens:
            return phi, x[n_phi : n_phi + d], x[n_phi + d :]
        return phi, np.zeros(d), np.zeros(d)

    def loss(x):
        phi, a, b = unpack(x)
        U = np.exp(1j * b)[:, None] * fast_circuit(CircuitParams.balanced(p, phi)) * np.exp(1j * a)[None, :]
        return 1.0 - fidelity(goal, U)

    best = None
    for k in range(restarts):
        x0 = np.zeros(n_free) if k == 0 else rng.integers(0, 8, size=n_free) * np.pi / 4
        res = optimize.minimize(loss, x0, method="BFGS", options={"gtol": 1e-12})
        if best is None or res.fun < best.fun:
            best = res
    phi, a, b = (np.mod(v + np.pi, 2 * np.pi) - np.pi for v in unpack(best.x))
    sol = PhaseSolution(CircuitParams.balanced(p, phi), a, b, in_perm, out_perm, 0.0)
    return PhaseSolution(sol.params, a, b, in_perm, out_perm, fidelity(goal, sol.matrix))


# -- file format ----------------------------------------------------------------


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def dumps_matrix(U: NDArray) -> str:
    U = np.asarray(U, dtype=np.complex128)

    def rows(a):
        return "[" + ",\n  ".join("[" + ", ".join(_fmt(v) for v in row) + "]" for row in a) + "]"

    return f'{{"dim": {U.shape[0]},\n "re": {rows(U.real)},\n "im": {rows(U.imag)}}}\n'


def loads_matrix(text: str, path=None) -> NDArray[np.complex128]:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed matrix file: {exc.msg}", exc.lineno, path) from None
    try:
        dim = int(obj["dim"])
        U = np.array(obj["re"], dtype=float) + 1j * np.array(obj["im"], dtype=float)
    except (ValueError, KeyError, TypeError) as exc:
        raise ParseError(f"malformed matrix file: {exc!r}", None, path) from None
    if U.shape != (dim, dim):
        raise ParseError(f"matrix file declares dim={dim} but holds shape {U.shape}", None, path)
    return U


def write_matrix(U: NDArray, path: str | Path) -> None:
    Path(path).write_text(dumps_matrix(U))


def read_matrix(path: str | Path) -> NDArray[np.complex128]:
    return loads_matrix(Path(path).read_text(), str(path))
