"""Reconstruction of layered-interferometer parameters from photon counting data.

Two stages: transmissivities and relative output losses from single-photon
scattering probabilities, then internal phases from two-photon HOM
visibilities. Both minimize a chi-square by multi-start bounded least squares.

Phase labels ``(layer, mode)`` are one-based in ``mode``; ``layer`` indexes
``CircuitParams.phi`` directly, so ``(1, 3)`` is the phase on mode 3 right after
the separation-2 couplers of layer 1 (zero-based).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray
from scipy import optimize

from ._parallel import child_rng, pmap
from .errors import ConvergenceError, ParseError, ValidationError
from .matrices import TAU_BALANCED, CircuitParams, fast_circuit, fidelity, layer_pairs

ERROR_FLOOR = 1e-6
ETA_MAX = 4.0
D_MIN = 1e-12  # below this the visibility is undefined

__all__ = [
    "DeviceModel",
    "VisibilityRecord",
    "HomCurveParams",
    "single_photon_probs",
    "hom_visibility",
    "visibilities",
    "fit_transmissivities",
    "fit_phases",
    "fidelity",
    "hom_curve",
    "fit_hom_curve",
    "synth_dataset",
    "reconstruct",
    "bootstrap",
]


# -- model ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DeviceModel:
    """Layered circuit followed by relative output loss amplitudes ``eta``."""

    circuit: CircuitParams
    eta: NDArray[np.float64]

    def __post_init__(self):
        eta = np.array(self.eta, dtype=float)
        if eta.shape != (self.circuit.dim,):
            raise ValidationError(f"eta must have {self.circuit.dim} entries")
        if eta[0] != 1.0:
            raise ValidationError("eta[0] is the reference and must equal 1")
        if np.any(eta <= 0):
            raise ValidationError("relative losses must be positive")
        eta.setflags(write=False)
        object.__setattr__(self, "eta", eta)

    @classmethod
    def ideal(cls, p: int) -> "DeviceModel":
        return cls(CircuitParams.balanced(p), np.ones(2**p))

    @property
    def unitary(self) -> NDArray[np.complex128]:
        return fast_circuit(self.circuit)

    @property
    def matrix(self) -> NDArray[np.complex128]:
        """``D(eta) U``; not unitary unless every ``eta`` is 1."""
        return self.eta[:, None] * self.unitary


def single_photon_probs(model: DeviceModel) -> NDArray[np.float64]:
    """``|M[j, i]|**2``: output ``j`` (row) given input ``i`` (column)."""
    return np.abs(model.matrix) ** 2


def phase_index(p: int, label: tuple[int, int]) -> tuple[int, int]:
    """``(layer, mode)`` label to an index into ``CircuitParams.phi``."""
    layer, mode = label
    if not 0 <= layer < p:
        raise ValidationError(f"layer {layer} out of range for p={p}")
    for k, (_, hi) in enumerate(layer_pairs(p, layer)):
        if hi == mode - 1:
            return layer, k
    raise ValidationError(f"mode {mode} carries no phase in layer {layer}")


# Internal phases that remain after the gauge fixing; the others are set to 0.
DEFAULT_FREE_PHASES = {
    1: [],
    2: [(1, 3)],  # (1, 4) fixed
    3: [(1, 4), (1, 8), (2, 6), (2, 7), (2, 8)],  # (1, 3), (1, 7), (2, 5) fixed
}


def free_phases(p: int) -> list[tuple[int, int]]:
    try:
        return list(DEFAULT_FREE_PHASES[p])
    except KeyError:
        raise ValidationError(f"no gauge-fixed phase set known for p={p}; pass one explicitly") from None


# Parameters reconstructed from fabricated 4- and 8-mode devices, used as
# realistic ground truth for synthetic round trips.
_REFERENCE = {
    2: dict(
        tau=[[0.7139, 0.7031], [0.6879, 0.7195]],
        eta=[1.0, 1.134, 1.147, 0.961],
        phases={(1, 3): 0.229},
    ),
    3: dict(
        tau=[
            [0.669, 0.621, 0.639, 0.630],
            [0.750, 0.715, 0.755, 0.729],
            [0.748, 0.723, 0.774, 0.755],
        ],
        eta=[1.0, 0.94, 1.07, 0.93, 0.96, 1.05, 1.01, 1.02],
        phases={(1, 4): 0.38, (1, 8): 0.36, (2, 6): -0.19, (2, 7): 0.43, (2, 8): -0.04},
    ),
}

# Two-photon inputs whose visibilities were recorded on the 8-mode device.
REFERENCE_INPUTS_8 = [(2, 5), (2, 6), (2, 8), (3, 7), (3, 8), (5, 7), (5, 8), (6, 8)]


def reference_device(m: int) -> DeviceModel:
    """Measured-device parameters for ``m`` = 4 or 8."""
    p = {4: 2, 8: 3}.get(m)
    if p is None:
        raise ValidationError("reference devices exist for 4 and 8 modes")
    ref = _REFERENCE[p]
    phi = np.zeros((p, 2 ** (p - 1)))
    for label, value in ref["phases"].items():
        phi[phase_index(p, label)] = value
    return DeviceModel(CircuitParams(p, np.array(ref["tau"]), phi), np.array(ref["eta"]))


def reference_inputs(m: int) -> list[tuple[int, int]]:
    return list(REFERENCE_INPUTS_8) if m == 8 else list(itertools.combinations(range(1, m + 1), 2))


# -- visibilities ------------------------------------------------------------------------


@dataclass(frozen=True)
class VisibilityRecord:
    """HOM visibility for inputs ``(i, j)`` and outputs ``(m, n)``, one-based."""

    inputs: tuple[int, int]
    outputs: tuple[int, int]
    V: float
    sigma_V: float

    def __post_init__(self):
        i, j = self.inputs
        a, b = self.outputs
        if i == j or a == b:
            raise ValidationError("visibility pairs must be collision-free")
        if not self.sigma_V > 0:
            raise ValidationError("sigma_V must be positive")


def _dq(U, ins, outs):
    """Distinguishable and indistinguishable coincidence probabilities."""
    i, j = ins[:, 0], ins[:, 1]
    a, b = outs[:, 0], outs[:, 1]
    x, y = U[a, i] * U[b, j], U[a, j] * U[b, i]
    return np.abs(x) ** 2 + np.abs(y) ** 2, np.abs(x + y) ** 2


def hom_visibility(U, in_pair, out_pair) -> float | None:
    """``(D - Q) / D`` for one input and output pair; ``None`` when ``D = 0``.

    Output losses scale ``D`` and ``Q`` alike, so ``U`` may be lossy.
    """
    U = np.asarray(U)
    ins = np.array([in_pair]) - 1
    outs = np.array([out_pair]) - 1
    if ins[0, 0] == ins[0, 1] or outs[0, 0] == outs[0, 1]:
        raise ValidationError("visibility pairs must be collision-free")
    D, Q = _dq(U, ins, outs)
    if D[0] < D_MIN:
        return None
    return float((D[0] - Q[0]) / D[0])


def _visibility_values(U, ins, outs):
    D, Q = _dq(U, ins, outs)
    return (D - Q) / np.where(D < D_MIN, 1.0, D), D >= D_MIN


def _all_output_pairs(m):
    return list(itertools.combinations(range(1, m + 1), 2))


def visibilities(U, inputs=None, sigma: float = ERROR_FLOOR) -> list[VisibilityRecord]:
    """Every defined collision-free visibility of the given input pairs."""
    U = np.asarray(U)
    m = U.shape[0]
    inputs = list(itertools.combinations(range(1, m + 1), 2)) if inputs is None else [tuple(x) for x in inputs]
    keys = [(ij, ab) for ij in inputs for ab in _all_output_pairs(m)]
    ins = np.array([k[0] for k in keys]) - 1
    outs = np.array([k[1] for k in keys]) - 1
    V, ok = _visibility_values(U, ins, outs)
    return [VisibilityRecord(k[0], k[1], float(v), sigma) for k, v, good in zip(keys, V, ok) if good]


def dumps_visibilities(records) -> str:
    lines = ["i\tj\tm\tn\tV\tsigma_V"]
    for r in records:
        lines.append(f"{r.inputs[0]}\t{r.inputs[1]}\t{r.outputs[0]}\t{r.outputs[1]}\t{r.V:.17g}\t{r.sigma_V:.17g}")
    return "\n".join(lines) + "\n"


def loads_visibilities(text: str, path=None) -> list[VisibilityRecord]:
    out = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.startswith("#") or line.startswith("i\t"):
            continue
        try:
            i, j, a, b, v, s = line.split("\t")
            out.append(VisibilityRecord((int(i), int(j)), (int(a), int(b)), float(v), float(s)))
        except (ValueError, ValidationError) as exc:
            raise ParseError(f"malformed visibility record ({exc})", lineno, path) from None
    return out


# -- HOM delay scans ---------------------------------------------------------------------


@dataclass(frozen=True)
class HomCurveParams:
    B: float
    V: float
    sigma_tau: float

    def __post_init__(self):
        if not (self.B > 0 and self.sigma_tau > 0 and -1 <= self.V <= 1):
            raise ValidationError("need B > 0, sigma_tau > 0 and V in [-1, 1]")


def _hom(dt, B, V, s):
    return B * (1.0 - V * np.exp(-np.asarray(dt) ** 2 / (2.0 * s * s)))


def hom_curve(params: HomCurveParams, delta_tau):
    """Expected coincidences ``B [1 - V exp(-dt^2 / (2 sigma^2))]``."""
    return _hom(delta_tau, params.B, params.V, params.sigma_tau)


def fit_hom_curve(delta_tau, counts, sigma=None, p0: HomCurveParams | None = None) -> tuple[HomCurveParams, float]:
    """Least-squares fit of a delay scan; returns the parameters and the error on ``V``."""
    delta_tau = np.asarray(delta_tau, dtype=float)
    counts = np.asarray(counts, dtype=float)
    if p0 is None:
        base = float(np.median(counts[np.argsort(np.abs(delta_tau))[-max(2, len(counts) // 4) :]]))
        centre = float(counts[np.argmin(np.abs(delta_tau))])
        width = 0.25 * float(np.ptp(delta_tau)) or 1.0
        p0 = HomCurveParams(max(base, 1e-12), float(np.clip(1 - centre / base, -1, 1)) if base > 0 else 0.0, width)
    try:
        popt, pcov = optimize.curve_fit(
            _hom,
            delta_tau,
            counts,
            p0=(p0.B, p0.V, p0.sigma_tau),
            sigma=sigma,
            absolute_sigma=sigma is not None,
            bounds=([1e-300, -1.0, 1e-300], [np.inf, 1.0, np.inf]),
        )
    except RuntimeError as exc:
        raise ConvergenceError(f"HOM fit failed: {exc}") from None
    return HomCurveParams(*popt), float(np.sqrt(pcov[1, 1]))


# -- stage 1: transmissivities and losses ---------------------------------------------------


@dataclass(frozen=True)
class TauFit:
    tau: NDArray[np.float64]
    eta: NDArray[np.float64]
    chi2: float


def _tau_from(u):
    return 0.5 * (1.0 + np.sin(u))


def _tau_to(tau):
    return np.arcsin(np.clip(2.0 * np.asarray(tau) - 1.0, -1.0, 1.0))


def _eta_from(v):
    return ETA_MAX / (1.0 + np.exp(-v))


def _eta_to(eta):
    eta = np.clip(np.asarray(eta, dtype=float), 1e-12, ETA_MAX * (1 - 1e-12))
    return np.log(eta / (ETA_MAX - eta))


def _lsq(residual, x0, **kw):
    return optimize.least_squares(residual, x0, method="trf", xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=4000, **kw)


def _multistart(residual, starts, threads):
    runs = pmap(lambda x0: _lsq(residual, x0), starts, threads)
    ok = [r for r in runs if r.status > 0 and np.all(np.isfinite(r.fun))]
    if not ok:
        raise ConvergenceError("no restart converged")
    return min(ok, key=lambda r: r.cost)


def fit_transmissivities(
    probs,
    errors,
    p: int | None = None,
    restarts: int = 16,
    seed: int = 0,
    threads: int | None = None,
    start: TauFit | None = None,
) -> TauFit:
    """Minimize chi-square over ``tau`` and ``eta[1:]`` (``eta[0] = 1``).

    ``probs[j, i]`` is the measured probability of output ``j`` for input
    ``i``. Moduli of the layered circuit do not depend on its phases. The
    ideal device is always the first start.
    """
    probs = np.asarray(probs, dtype=float)
    errors = np.asarray(errors, dtype=float)
    d = probs.shape[0]
    p = int(round(np.log2(d))) if p is None else p
    if probs.shape != (2**p, 2**p) or errors.shape != probs.shape:
        raise ValidationError(f"need {2**p}x{2**p} probability and error matrices")
    if np.any(errors <= 0):
        raise ValidationError("probability errors must be positive")
    shape = (p, 2 ** (p - 1))
    nt = p * 2 ** (p - 1)
    zero_phi = np.zeros(shape)

    def unpack(x):
        return _tau_from(x[:nt]).reshape(shape), np.concatenate([[1.0], _eta_from(x[nt:])])

    def residual(x):
        tau, eta = unpack(x)
        model = np.abs(eta[:, None] * fast_circuit(CircuitParams(p, tau, zero_phi))) ** 2
        return ((probs - model) / errors).ravel()

    ideal = np.concatenate([_tau_to(np.full(nt, TAU_BALANCED)), _eta_to(np.ones(d - 1))])
    starts = [ideal] if start is None else [np.concatenate([_tau_to(start.tau.ravel()), _eta_to(start.eta[1:])])]
    for k in range(1, restarts):
        rng = child_rng(seed, k)
        starts.append(np.concatenate([_tau_to(rng.uniform(0.55, 0.85, nt)), _eta_to(rng.uniform(0.7, 1.4, d - 1))]))
    best = _multistart(residual, starts, threads)
    tau, eta = unpack(best.x)
    return TauFit(tau, eta, float(2 * best.cost))


# -- stage 2: phases --------------------------------------------------------------------


@dataclass(frozen=True)
class PhaseFit:
    phi: NDArray[np.float64]
    free: list
    values: NDArray[np.float64]
    chi2: float


def _wrap(x):
    return np.mod(np.asarray(x) + np.pi, 2 * np.pi) - np.pi


def fit_phases(
    records,
    tau_hat,
    p: int | None = None,
    free: list | None = None,
    restarts: int = 16,
    seed: int = 0,
    threads: int | None = None,
    start=None,
) -> PhaseFit:
    """Minimize the visibility chi-square over the gauge-fixed internal phases.

    Conjugating every phase leaves all visibilities unchanged, so the
    solution is reported with its first nonzero free phase non-negative.
    """
    tau_hat = np.asarray(tau_hat, dtype=float)
    p = tau_hat.shape[0] if p is None else p
    free = free_phases(p) if free is None else [tuple(f) for f in free]
    idx = [phase_index(p, f) for f in free]
    records = list(records)
    if not records:
        raise ValidationError("no visibilities to fit")
    ins = np.array([r.inputs for r in records]) - 1
    outs = np.array([r.outputs for r in records]) - 1
    V = np.array([r.V for r in records])
    sig = np.array([r.sigma_V for r in records])
    shape = (p, 2 ** (p - 1))

    def phi_of(x):
        phi = np.zeros(shape)
        for (t, k), v in zip(idx, x):
            phi[t, k] = v
        return phi

    def residual(x):
        U = fast_circuit(CircuitParams(p, tau_hat, phi_of(x)))
        model, _ = _visibility_values(U, ins, outs)
        return (V - model) / sig

    if not idx:
        r = residual(np.zeros(0))
        return PhaseFit(np.zeros(shape), free, np.zeros(0), float(r @ r))
    jac = optimize.approx_fprime(np.full(len(idx), 0.1), residual, 1e-7)
    if np.linalg.matrix_rank(jac, tol=1e-6 * max(1.0, np.abs(jac).max())) < len(idx):
        raise ValidationError("visibility set does not determine the free phases")
    starts = [np.zeros(len(idx))] if start is None else [np.asarray(start, dtype=float)]
    starts += [child_rng(seed, k).uniform(-np.pi, np.pi, len(idx)) for k in range(1, restarts)]
    best = _multistart(residual, starts, threads)
    x = _wrap(best.x)
    nz = np.flatnonzero(np.abs(x) > 1e-12)
    if nz.size and x[nz[0]] < 0:
        x = _wrap(-x)
    return PhaseFit(phi_of(x), free, x, float(2 * best.cost))


# -- synthetic data and full pipeline ---------------------------------------------------


@dataclass(frozen=True)
class SynthDataset:
    probs: NDArray[np.float64]
    prob_errors: NDArray[np.float64]
    visibilities: list = field(default_factory=list)


def synth_dataset(model: DeviceModel, noise_rel: float, seed: int, inputs=None) -> SynthDataset:
    """Forward-model data with relative Gaussian noise ``noise_rel``.

    Each value ``y`` becomes ``y (1 + noise_rel * xi)``; its reported error is
    ``noise_rel * |y|``, floored at ``1e-6``.
    """
    if noise_rel < 0:
        raise ValidationError("noise_rel must be >= 0")
    rng = np.random.default_rng(np.random.SeedSequence(int(seed)))
    P = single_photon_probs(model)
    P_noisy = P * (1.0 + noise_rel * rng.standard_normal(P.shape))
    clean = visibilities(model.unitary, inputs)
    V = np.array([r.V for r in clean])
    V_noisy = V * (1.0 + noise_rel * rng.standard_normal(V.size))
    v_err = np.maximum(noise_rel * np.abs(V), ERROR_FLOOR)
    recs = [VisibilityRecord(r.inputs, r.outputs, float(v), float(e)) for r, v, e in zip(clean, V_noisy, v_err)]
    return SynthDataset(P_noisy, np.maximum(noise_rel * P, ERROR_FLOOR), recs)


@dataclass(frozen=True)
class Reconstruction:
    model: DeviceModel
    tau_fit: TauFit
    phase_fit: PhaseFit

    @property
    def chi2(self) -> tuple[float, float]:
        return self.tau_fit.chi2, self.phase_fit.chi2


def reconstruct(data: SynthDataset, p: int, free=None, restarts: int = 16, seed: int = 0, threads=None, start=None) -> Reconstruction:
    """Both fitting stages; ``start`` (a :class:`Reconstruction`) seeds a single local fit."""
    tf = fit_transmissivities(data.probs, data.prob_errors, p, restarts, seed, threads, start.tau_fit if start else None)
    pf = fit_phases(data.visibilities, tf.tau, p, free, restarts, seed, threads, start.phase_fit.values if start else None)
    return Reconstruction(DeviceModel(CircuitParams(p, tf.tau, pf.phi), tf.eta), tf, pf)


@dataclass(frozen=True)
class BootstrapResult:
    tau: NDArray[np.float64]  # (n, p, 2**(p-1))
    eta: NDArray[np.float64]  # (n, m)
    phases: NDArray[np.float64]  # (n, n_free)

    @property
    def tau_err(self):
        return self.tau.std(axis=0, ddof=1)

    @property
    def eta_err(self):
        return self.eta.std(axis=0, ddof=1)

    @property
    def phase_err(self):
        return self.phases.std(axis=0, ddof=1)


def bootstrap(
    rec: Reconstruction,
    noise_rel: float,
    n_resamples: int = 100,
    seed: int = 0,
    inputs=None,
    threads: int | None = None,
) -> BootstrapResult:
    """Parametric bootstrap: refit datasets simulated from the fitted model.

    Resample ``k`` uses seed stream ``(seed, k)`` and is fitted locally from
    the original estimate.
    """
    if n_resamples < 2:
        raise ValidationError("n_resamples must be >= 2")
    p = rec.model.circuit.p

    def one(k):
        data = synth_dataset(rec.model, noise_rel, int(child_rng(seed, k).integers(2**63)), inputs)
        r = reconstruct(data, p, rec.phase_fit.free, restarts=1, start=rec)
        return r.tau_fit.tau, r.tau_fit.eta, r.phase_fit.values

    res = pmap(one, range(n_resamples), threads)
    return BootstrapResult(np.array([r[0] for r in res]), np.array([r[1] for r in res]), np.array([r[2] for r in res]))


def dumps_report(rec: Reconstruction, boot: BootstrapResult | None = None, ideal=None) -> str:
    """Tab-separated parameter report with optional bootstrap errors and fidelity."""
    p = rec.model.circuit.p
    lines = ["name\tvalue\terror"]

    def add(name, value, err):
        lines.append(f"{name}\t{value:.17g}\t{'nan' if err is None else format(err, '.17g')}")

    for t in range(p):
        for k, (a, b) in enumerate(layer_pairs(p, t)):
            add(f"tau[{t}]({a + 1},{b + 1})", rec.tau_fit.tau[t, k], None if boot is None else boot.tau_err[t, k])
    for j, e in enumerate(rec.tau_fit.eta):
        add(f"eta[{j + 1}]", e, None if boot is None else boot.eta_err[j])
    for i, (layer, mode) in enumerate(rec.phase_fit.free):
        add(f"phi[{layer}]({mode})", rec.phase_fit.values[i], None if boot is None else boot.phase_err[i])
    lines.append(f"# chi2_tau\t{rec.tau_fit.chi2:.17g}")
    lines.append(f"# chi2_phi\t{rec.phase_fit.chi2:.17g}")
    if ideal is not None:
        lines.append(f"# fidelity\t{fidelity(ideal, rec.model.unitary):.17g}")
    return "\n".join(lines) + "\n"
