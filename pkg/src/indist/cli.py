"""Command-line interface: ``indist <command> ...``.

Numeric results go to files, a short summary to standard output. Every run
that writes files also writes a JSON manifest with the parameters, the seed
and SHA-256 digests of inputs and outputs.

Exit codes: 0 success, 2 invalid input, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from importlib import metadata
from pathlib import Path

import numpy as np

from . import bayes, distance, matrices, scattershot, search, tomography
from ._parallel import THREADS_ENV, default_threads
from .errors import ConvergenceError, ValidationError
from .interference import CollisionPolicy, collision_free_inputs, format_label, modes_to_config

EXIT_VALIDATION = 2
EXIT_CONVERGENCE = 3


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def _digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class Run:
    """Collects inputs and outputs of one invocation for its manifest."""

    def __init__(self, args):
        self.args = args
        self.inputs: list[str] = []
        self.outputs: list[str] = []

    def read(self, path) -> str:
        self.inputs.append(str(path))
        return str(path)

    def write(self, path, text: str) -> None:
        Path(path).write_text(text)
        self.outputs.append(str(path))

    def manifest(self) -> dict:
        params = {k: v for k, v in vars(self.args).items() if k not in ("func", "manifest")}
        return {
            "command": " ".join(x for x in (self.args.command, getattr(self.args, "action", None)) if x),
            "parameters": params,
            "seed": getattr(self.args, "seed", None),
            "version": _version(),
            "inputs": {p: _digest(p) for p in self.inputs},
            "outputs": {p: _digest(p) for p in self.outputs},
        }

    def finish(self) -> None:
        if not self.outputs:
            return
        path = self.args.manifest or self.outputs[0] + ".manifest.json"
        Path(path).write_text(json.dumps(self.manifest(), indent=1, sort_keys=True, default=str) + "\n")


def _ensure_seed(args) -> None:
    if getattr(args, "seed", None) is None:
        args.seed = int(np.random.SeedSequence().entropy % 2**63)
        print(f"seed: {args.seed}")


def _parse_modes(text: str, m: int):
    try:
        modes = [int(s) for s in text.replace("-", ",").split(",") if s.strip()]
    except ValueError:
        raise ValidationError(f"bad mode list {text!r}") from None
    return modes_to_config(modes, m)


def _inputs(args, m: int):
    if getattr(args, "input", None):
        return [_parse_modes(s, m) for s in args.input]
    return None


def _fmt(x) -> str:
    return format(float(x), ".17g")


# -- matrix ---------------------------------------------------------------------------


def cmd_matrix_gen(args, run: Run):
    kind = args.kind
    if kind == "sylvester":
        U = matrices.sylvester(args.p)
    elif kind == "fourier":
        U = matrices.fourier(args.m)
    elif kind == "notable":
        U = matrices.notable(args.name)
    elif kind == "haar":
        _ensure_seed(args)
        U = matrices.haar_random(args.m, args.seed)
    else:
        if args.random_phases:
            _ensure_seed(args)
            U = search.phase_noise_sample(args.p, args.seed, 0)
        else:
            shape = (args.p, 2 ** (args.p - 1))
            U = matrices.fast_circuit(matrices.CircuitParams(args.p, np.full(shape, args.tau), np.zeros(shape)))
    run.write(args.out, matrices.dumps_matrix(U))
    print(f"wrote {U.shape[0]}x{U.shape[0]} {kind} matrix to {args.out}")


# -- tvd --------------------------------------------------------------------------------


def cmd_tvd(args, run: Run):
    U = matrices.check_unitary(matrices.read_matrix(run.read(args.matrix)))
    report = distance.tvd_report(U, args.photons, args.policy, _inputs(args, U.shape[0]))
    if args.out:
        run.write(args.out, distance.dumps_report(report))
    print(f"max_tvd {report.max_tvd:.6f} (input {format_label(report.best_input)})")
    print(f"avg_tvd {report.avg_tvd:.6f}")


# -- search ---------------------------------------------------------------------------


def cmd_search(args, run: Run):
    _ensure_seed(args)
    fixed = _parse_modes(args.input, args.m if args.action != "phases" else 2**args.p) if args.input else None
    setting = "fixed" if fixed else args.setting
    if args.action == "haar":
        res = search.haar_screen(args.m, args.photons, args.policy, setting, args.samples, args.seed, fixed, args.threads)
        hist = res.histogram
        run.write(args.out, search.dumps_histogram(hist))
        if args.best_out:
            run.write(args.best_out, matrices.dumps_matrix(res.best_matrix))
    elif args.action == "phases":
        hist = search.phase_noise_ensemble(args.p, args.photons, setting, args.samples, args.seed, args.policy, fixed, args.threads)
        run.write(args.out, search.dumps_histogram(hist))
    else:
        res = search.local_optimize(
            args.m, args.photons, args.policy, setting, args.seed, args.restarts, fixed, args.max_evals, args.threads
        )
        run.write(args.out, matrices.dumps_matrix(res.matrix))
        if args.trace_out:
            lines = ["restart\tstep\tvalue"]
            lines += [f"{r}\t{i}\t{_fmt(v)}" for r, tr in enumerate(res.traces) for i, v in enumerate(tr)]
            run.write(args.trace_out, "\n".join(lines) + "\n")
        print(f"best {res.value:.6f} over {len(res.restart_values)} restarts")
        return
    print(search.describe(hist))


# -- bayes ----------------------------------------------------------------------------


def _family(args, run: Run, U=None):
    if U is None:
        U = matrices.check_unitary(matrices.read_matrix(run.read(args.matrix)))
    inputs = _inputs(args, U.shape[0])
    if inputs is None and getattr(args, "single", False):
        inputs = collision_free_inputs(args.photons, U.shape[0])[:1]
    return bayes.HypothesisFamily.from_unitary(
        U, args.photons, args.policy, inputs, collision_free=getattr(args, "collision_free", False)
    )


def _stream(args, run: Run):
    U = matrices.check_unitary(matrices.read_matrix(run.read(args.matrix)))
    events = scattershot.read_events(run.read(args.events), args.photons)
    cfg = scattershot.ScattershotConfig(U, args.photons, _inputs(args, U.shape[0]), policy=args.policy, collisions=args.collisions)
    fam = cfg.family()
    q, p = fam.lookup(events)
    return cfg, events, q, p


def cmd_bayes(args, run: Run):
    if args.action == "test":
        _ensure_seed(args)
        fam = _family(args, run)
        c = bayes.confidence_curve(fam, args.max_events, args.trials, args.seed, data_noise=args.noise, threads=args.threads)
        lines = ["N\tp_conf\tpr_ind_q\tpr_dis_p"]
        lines += [f"{n}\t{_fmt(a)}\t{_fmt(b)}\t{_fmt(d)}" for n, a, b, d in zip(c.n_events, c.p_conf, c.pr_ind_q, c.pr_dis_p)]
        run.write(args.out, "\n".join(lines) + "\n")
        print(f"P_conf({args.max_events}) = {c.p_conf[-1]:.6f}")
    elif args.action == "infer":
        _, events, q, p = _stream(args, run)
        post = bayes.infer_x_arrays(q, p, args.grid)
        run.write(args.out, scattershot.dumps_posterior(post))
        print(f"x_est = {post.x_est:.6f} +- {post.sigma_est:.6f} (N = {len(events)})")
    elif args.action == "convex":
        _ensure_seed(args)
        cfg, events, q, p = _stream(args, run)
        favored = bayes.Favored(args.favored) if args.favored else bayes.binary_favored(q, p)
        x_th = bayes.convex_lr_stage_a_arrays(q, p, favored)
        res = bayes.convex_lr_stage_b(x_th, cfg.family(), favored, args.n_sim, args.repeats, args.seed, threads=args.threads)
        lines = [f"favored\t{favored.value}", f"x_th\t{_fmt(x_th)}", f"y_lo\t{_fmt(res.interval[0])}", f"y_hi\t{_fmt(res.interval[1])}"]
        lines += ["# per-repeat crossings"] + [_fmt(y) for y in res.y_primes]
        run.write(args.out, "\n".join(lines) + "\n")
        print(f"favored {favored.value}; x_th = {x_th:.6f}; y' in [{res.interval[0]:.4f}, {res.interval[1]:.4f}]")
    else:
        _ensure_seed(args)
        fam = _family(args, run)
        res = bayes.threshold_scan(fam, args.n_events, args.samples, args.seed)
        lines = ["x\tp_conf"] + [f"{_fmt(x)}\t{_fmt(v)}" for x, v in zip(res.x_grid, res.p_conf)]
        lines.append(f"# crossing\t{_fmt(res.crossing)}")
        run.write(args.out, "\n".join(lines) + "\n")
        print(f"P_conf crosses 1/2 at x = {res.crossing:.4f}")


# -- tomography -----------------------------------------------------------------------


def _device(spec: str) -> tomography.DeviceModel:
    if spec in ("4", "8"):
        return tomography.reference_device(int(spec))
    if spec.startswith("ideal"):
        return tomography.DeviceModel.ideal(int(spec[5:] or 2))
    raise ValidationError(f"unknown device {spec!r}; use 4, 8 or idealP")


def cmd_tomo(args, run: Run):
    if args.action == "synth":
        _ensure_seed(args)
        model = _device(args.device)
        inputs = tomography.reference_inputs(model.circuit.dim) if args.reference_inputs else None
        data = tomography.synth_dataset(model, args.noise, args.seed, inputs)
        run.write(args.prefix + ".probs.json", matrices.dumps_matrix(data.probs))
        run.write(args.prefix + ".errors.json", matrices.dumps_matrix(data.prob_errors))
        run.write(args.prefix + ".vis.tsv", tomography.dumps_visibilities(data.visibilities))
        print(f"wrote {len(data.visibilities)} visibilities and {data.probs.shape[0]}x{data.probs.shape[0]} probabilities")
        return
    _ensure_seed(args)
    probs = matrices.read_matrix(run.read(args.probs)).real
    errors = matrices.read_matrix(run.read(args.errors)).real
    vis = tomography.loads_visibilities(Path(run.read(args.vis)).read_text(), args.vis)
    p = int(round(np.log2(probs.shape[0])))
    if 2**p != probs.shape[0]:
        raise ValidationError("probability matrix size is not a power of two")
    data = tomography.SynthDataset(probs, errors, vis)
    rec = tomography.reconstruct(data, p, restarts=args.restarts, seed=args.seed, threads=args.threads)
    boot = None
    if args.bootstrap:
        boot = tomography.bootstrap(rec, args.noise, args.bootstrap, args.seed, sorted({r.inputs for r in vis}), args.threads)
    ideal = matrices.sylvester(p)
    run.write(args.out, tomography.dumps_report(rec, boot, ideal))
    if args.matrix_out:
        run.write(args.matrix_out, matrices.dumps_matrix(rec.model.unitary))
    print(f"chi2_tau {rec.chi2[0]:.4g}  chi2_phi {rec.chi2[1]:.4g}  fidelity {matrices.fidelity(ideal, rec.model.unitary):.6f}")


# -- scattershot ---------------------------------------------------------------------


def cmd_scattershot(args, run: Run):
    U = matrices.check_unitary(matrices.read_matrix(run.read(args.matrix)))
    inputs = _inputs(args, U.shape[0])
    if args.action == "simulate":
        _ensure_seed(args)
        cfg = scattershot.ScattershotConfig(U, args.photons, inputs, args.x, args.policy, args.seed, collisions=args.collisions)
        events = scattershot.sample_events(cfg, args.count)
        run.write(args.out, scattershot.dumps_events(events))
        print(f"wrote {len(events)} events to {args.out}")
        return
    if args.resequence:
        _ensure_seed(args)
    cfg = scattershot.ScattershotConfig(U, args.photons, inputs, policy=args.policy, collisions=args.collisions)
    events = scattershot.read_events(run.read(args.events), args.photons)
    res = scattershot.analyze(events, cfg, args.grid, args.resequence, seed=args.seed or 0)
    run.write(args.out, scattershot.dumps_summary(res))
    if args.posterior_out:
        run.write(args.posterior_out, scattershot.dumps_posterior(res.posterior))
    print(f"x_est = {res.x_est:.6f} +- {res.sigma_est:.6f} (N = {len(events)})")


# -- parser ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="indist", description="Photon indistinguishability test design and analysis.")
    parser.add_argument("--threads", type=int, default=None, help=f"worker threads (default: ${THREADS_ENV} or 1)")
    parser.add_argument("--manifest", default=None, help="manifest path (default: <first output>.manifest.json)")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=False, policy=True, photons=True):
        if photons:
            p.add_argument("--photons", "-n", type=int, required=True)
        if policy:
            p.add_argument("--policy", choices=[c.value for c in CollisionPolicy], default="col")
        if seed:
            p.add_argument("--seed", type=int, default=None)

    # matrix
    mat = sub.add_parser("matrix", help="generate interferometer matrices").add_subparsers(dest="action", required=True)
    g = mat.add_parser("gen")
    g.add_argument("--kind", choices=["sylvester", "fourier", "notable", "haar", "fast"], required=True)
    g.add_argument("--p", type=int, default=2, help="log2 of the mode count (sylvester, fast)")
    g.add_argument("--m", type=int, default=4, help="mode count (fourier, haar)")
    g.add_argument("--name", choices=list(matrices.NOTABLE_IDS), default="U4")
    g.add_argument("--tau", type=float, default=matrices.TAU_BALANCED)
    g.add_argument("--random-phases", action="store_true")
    g.add_argument("--seed", type=int, default=None)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_matrix_gen)

    # tvd
    t = sub.add_parser("tvd", help="TVD between indistinguishable and distinguishable statistics")
    t.add_argument("--matrix", required=True)
    common(t)
    grp = t.add_mutually_exclusive_group()
    grp.add_argument("--input", action="append", help="one-based modes, e.g. 1,2 (repeatable)")
    grp.add_argument("--all", action="store_true", help="all collision-free inputs (default)")
    t.add_argument("--out")
    t.set_defaults(func=cmd_tvd)

    # search
    srch = sub.add_parser("search", help="ensembles and local optimization").add_subparsers(dest="action", required=True)
    for name in ("haar", "phases", "optimize"):
        s = srch.add_parser(name)
        common(s, seed=True)
        if name == "phases":
            s.add_argument("--p", type=int, required=True)
        else:
            s.add_argument("--m", type=int, required=True)
        s.add_argument("--setting", choices=["best", "average"], default="average")
        s.add_argument("--input", help="fixed input modes; switches to the fixed-input setting")
        s.add_argument("--out", required=True)
        if name == "optimize":
            s.add_argument("--restarts", type=int, default=20)
            s.add_argument("--max-evals", type=int, default=20_000)
            s.add_argument("--trace-out")
        else:
            s.add_argument("--samples", type=int, default=10_000)
        if name == "haar":
            s.add_argument("--best-out")
        s.set_defaults(func=cmd_search)

    # bayes
    bay = sub.add_parser("bayes", help="Bayesian and likelihood-ratio tests").add_subparsers(dest="action", required=True)
    b = bay.add_parser("test", help="confidence curve P_conf(N)")
    b.add_argument("--matrix", required=True)
    common(b, seed=True)
    b.add_argument("--input", action="append")
    b.add_argument("--single", action="store_true", help="only the first collision-free input")
    b.add_argument("--max-events", type=int, default=100)
    b.add_argument("--trials", type=int, default=1000)
    b.add_argument("--noise", type=float, default=0.0, help="relative Gaussian noise on the sampled distributions")
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_bayes)
    for name in ("infer", "convex"):
        b = bay.add_parser(name)
        b.add_argument("--matrix", required=True)
        b.add_argument("--events", required=True)
        common(b, seed=name == "convex")
        b.add_argument("--input", action="append")
        b.add_argument("--collisions", action="store_true", help="events may contain collision outcomes")
        b.add_argument("--out", required=True)
        if name == "infer":
            b.add_argument("--grid", type=int, default=bayes.DEFAULT_GRID)
        else:
            b.add_argument("--favored", choices=["Q", "P"])
            b.add_argument("--n-sim", type=int, default=100_000)
            b.add_argument("--repeats", type=int, default=100)
        b.set_defaults(func=cmd_bayes)
    b = bay.add_parser("threshold", help="indistinguishability below which the test prefers P")
    b.add_argument("--matrix", required=True)
    common(b, seed=True)
    b.add_argument("--input", action="append")
    b.add_argument("--n-events", type=int, default=1000)
    b.add_argument("--samples", type=int, default=200)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_bayes)

    # tomography
    tomo = sub.add_parser("tomo", help="device reconstruction").add_subparsers(dest="action", required=True)
    s = tomo.add_parser("synth")
    s.add_argument("--device", default="4", help="4 or 8 (measured devices) or idealP")
    s.add_argument("--noise", type=float, default=0.0)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--reference-inputs", action="store_true", help="only the visibility inputs measured on the device")
    s.add_argument("--prefix", required=True)
    s.set_defaults(func=cmd_tomo)
    f = tomo.add_parser("fit")
    f.add_argument("--probs", required=True)
    f.add_argument("--errors", required=True)
    f.add_argument("--vis", required=True)
    f.add_argument("--restarts", type=int, default=16)
    f.add_argument("--bootstrap", type=int, default=0, help="number of parametric bootstrap resamples")
    f.add_argument("--noise", type=float, default=0.01, help="noise level assumed by the bootstrap")
    f.add_argument("--seed", type=int, default=None)
    f.add_argument("--out", required=True)
    f.add_argument("--matrix-out")
    f.set_defaults(func=cmd_tomo)

    # scattershot
    sc = sub.add_parser("scattershot", help="scattershot event streams").add_subparsers(dest="action", required=True)
    s = sc.add_parser("simulate")
    s.add_argument("--matrix", required=True)
    common(s, seed=True)
    s.add_argument("--input", action="append")
    s.add_argument("--x", type=float, required=True, help="indistinguishability of the source")
    s.add_argument("--count", type=int, required=True)
    s.add_argument("--collisions", action="store_true", help="also generate collision outcomes")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_scattershot)
    a = sc.add_parser("analyze")
    a.add_argument("--matrix", required=True)
    a.add_argument("--events", required=True)
    common(a, seed=True)
    a.add_argument("--input", action="append")
    a.add_argument("--collisions", action="store_true")
    a.add_argument("--grid", type=int, default=bayes.DEFAULT_GRID)
    a.add_argument("--resequence", type=int, default=0, help="reorderings for the running-estimate band")
    a.add_argument("--out", required=True)
    a.add_argument("--posterior-out")
    a.set_defaults(func=cmd_scattershot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads is None:
        args.threads = default_threads()
    run = Run(args)
    try:
        args.func(args, run)
        run.finish()
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    return 0


if __name__ == "__main__":
    sys.exit(main())
