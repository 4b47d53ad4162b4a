"""Command-line interface: ``fbcap <subcommand> [options]``.

Exit status is 0 on success, 1 on bad input and 2 on numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from fbcap import capacity, detect, kalman, matops, model, simulate
from fbcap.errors import NumericalError, UnitCircleNoise, UserInputError

LN2 = np.log(2.0)
SCHEMES_HELP = "fb = instantaneous feedback, delayK = K-step delayed feedback, nofb = no feedback"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, "%s: error: %s\n" % (self.prog, message))


def _common(p: argparse.ArgumentParser, power=True):
    g = p.add_argument_group("channel")
    g.add_argument("--model", metavar="PATH", help="JSON model file")
    g.add_argument("--ar1", action="store_true", help="AR(1) noise channel y = J x + z")
    g.add_argument("--beta", type=float, default=0.5, help="AR(1) regression parameter (default 0.5)")
    g.add_argument("--input-gain", type=float, default=1.0, help="AR(1) input gain J (default 1)")
    g.add_argument("--noise-var", type=float, default=1.0, help="AR(1) innovation variance (default 1)")
    g.add_argument("--awgn", action="store_true", help="scalar AWGN channel y = x + v")
    g.add_argument("--snr", type=float, default=1.0, help="AWGN 1/Var(v) (default 1)")
    g.add_argument("--delay", type=int, default=1, help="feedback delay d >= 1 (default 1)")
    if power:
        p.add_argument("--power", type=float, default=1.0, help="average power P (default 1)")
    p.add_argument("--tol", type=float, default=1e-8, help="solver tolerance (default 1e-8)")
    p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    p.add_argument("--out", metavar="PATH", help="write results to this file")
    u = p.add_mutually_exclusive_group()
    u.add_argument("--bits", dest="unit", action="store_const", const="bits", help="report bits (default)")
    u.add_argument("--nats", dest="unit", action="store_const", const="nats", help="report nats")
    p.set_defaults(unit="bits")


def _load(args) -> model.ChannelModel:
    chosen = [bool(args.model), args.ar1, args.awgn]
    if sum(chosen) > 1:
        raise UserInputError("--model, --ar1 and --awgn are mutually exclusive")
    if args.model:
        m = model.load_model(args.model)
    elif args.awgn:
        m = model.make_awgn_channel(args.snr)
    elif args.ar1:
        m = model.make_ar1_channel(_ar1(args))
    else:
        raise UserInputError("choose a channel with --model, --ar1 or --awgn")
    if args.delay < 1:
        raise UserInputError("--delay must be >= 1")
    return model.make_delayed(m, args.delay)


def _ar1(args) -> model.Ar1Params:
    return model.Ar1Params(args.beta, args.input_gain, args.noise_var)


def _rate(args, nats: float) -> str:
    if args.unit == "nats":
        return "rate_nats: %.6f" % nats
    return "rate_bits: %.6f" % (nats / LN2)


def _fmt(a) -> str:
    return np.array2string(np.asarray(a), precision=6, suppress_small=True, separator=", ")


def _emit(args, lines, payload=None):
    print("\n".join(lines))
    if args.out and payload is not None:
        Path(args.out).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


# -- subcommands -------------------------------------------------------------


def cmd_validate(args):
    m = _load(args)
    rep = model.validate_assumption1(m)
    lam = matops.min_eig_sym(m.joint_noise())
    _emit(args, [
        "dims (n, m, p): %d, %d, %d" % m.dims,
        "joint noise min eigenvalue: %.3e" % lam,
        "detectable: %s" % rep["detectable"],
        "sigma1_dominates: %s" % rep["sigma1_dominates"],
    ], {"dims": list(m.dims), **rep})


def cmd_riccati(args):
    m = _load(args)
    r = kalman.solve_dare(m)
    _emit(args, [
        "Sigma = %s" % _fmt(r.Sigma),
        "Kp = %s" % _fmt(r.Kp),
        "Psi = %s" % _fmt(r.Psi),
        "iterations: %d" % r.iterations,
        "residual: %.3e" % r.residual,
        "closed-loop spectral radius: %.6f" % r.closed_loop_radius,
    ], {"Sigma": r.Sigma.tolist(), "Kp": r.Kp.tolist(), "Psi": r.Psi.tolist(),
        "iterations": r.iterations, "residual": r.residual})


def cmd_detect(args):
    m = _load(args)
    a = detect.detectable_pbh(m.F, m.H)
    b = detect.detectable_lmi(m.F, m.H)
    lines = ["pbh: %s" % ("detectable" if a.detectable else "not detectable")]
    if a.offending_eigenvalue is not None:
        lines[-1] += " (unobserved eigenvalue %s)" % a.offending_eigenvalue
    lines.append("lmi: %s (margin %.3e)" % ("detectable" if b.detectable else "not detectable", b.margin))
    lines.append("agree: %s" % (a.detectable == b.detectable))
    _emit(args, lines, {"pbh": a.detectable, "lmi": b.detectable, "lmi_margin": b.margin})


def cmd_capacity(args):
    m = _load(args)
    sol = capacity.stationary_capacity(m, args.power, tol=args.tol)
    lines = [
        _rate(args, sol.rate_nats),
        "closed_loop_detectable: %s" % sol.closed_loop_detectable,
        "status: %s%s" % (sol.solver_status, "" if sol.closed_loop_detectable else " (upper bound only)"),
        "Pi = %s" % _fmt(sol.Pi),
        "Gamma = %s" % _fmt(sol.Gamma),
        "SigmaHat = %s" % _fmt(sol.SigmaHat),
        "M = %s" % _fmt(sol.M),
    ]
    _emit(args, lines, {
        "rate_nats": sol.rate_nats, "rate_bits": sol.rate_bits,
        "closed_loop_detectable": sol.closed_loop_detectable,
        "Pi": sol.Pi.tolist(), "Gamma": sol.Gamma.tolist(), "SigmaHat": sol.SigmaHat.tolist(),
        "M": sol.M.tolist(),
    })


def cmd_finite_horizon(args):
    m = _load(args)
    sol = capacity.finite_horizon_capacity(m, args.power, args.n, tol=args.tol)
    lines = ["n: %d" % sol.n_steps, _rate(args, sol.normalized_rate_nats) + " (per use, upper bound)"]
    _emit(args, lines, {"n": sol.n_steps, "normalized_rate_nats": sol.normalized_rate_nats,
                        "per_step_rate_nats": sol.per_step_rate_nats})


def _grid(spec: str):
    try:
        parts = [float(s) for s in spec.split(":")]
    except ValueError:
        raise UserInputError("--beta must be START:STOP:STEP or a single value") from None
    if len(parts) == 1:
        return [parts[0]]
    if len(parts) != 3:
        raise UserInputError("--beta must be START:STOP:STEP or a single value")
    start, stop, step = parts
    if not step > 0 or start > stop:
        raise UserInputError("--beta needs STEP > 0 and START <= STOP")
    count = int(np.floor((stop - start) / step + 1e-9)) + 1
    return [round(start + k * step, 10) for k in range(count)]


def _delays(spec: str):
    try:
        ds = [int(s) for s in spec.split(",") if s.strip()]
    except ValueError:
        raise UserInputError("--delays must be a comma-separated list of integers") from None
    if not ds or any(d < 1 for d in ds) or len(set(ds)) != len(ds):
        raise UserInputError("--delays must be distinct integers >= 1")
    return ds


def sweep_rows(betas, delays, nofeedback, power, tol, input_gain=1.0, noise_var=1.0):
    """Rows (beta, scheme, rate_bits), beta ascending then schemes in declared order."""
    rows = []
    for b in betas:
        par = model.Ar1Params(b, input_gain, noise_var)
        base = model.make_ar1_channel(par)
        for d in delays:
            sol = capacity.stationary_capacity(model.make_delayed(base, d), power, tol=tol)
            rows.append((b, "fb" if d == 1 else "delay%d" % d, sol.rate_bits))
        if nofeedback:
            try:
                rows.append((b, "nofb", capacity.waterfill_nofb(par, power) / LN2))
            except UnitCircleNoise:
                logging.getLogger(__name__).warning("no-feedback rate undefined at beta=%g; skipped", b)
    return rows


def cmd_sweep(args):
    betas = _grid(args.beta_grid)
    delays = _delays(args.delays)
    rows = sweep_rows(betas, delays, args.nofeedback, args.power, args.tol,
                      args.input_gain, args.noise_var)
    text = "beta,scheme,rate_bits\n" + "".join("%g,%s,%.6f\n" % r for r in rows)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        print("wrote %d rows to %s" % (len(rows), args.out))
    else:
        sys.stdout.write(text)


def cmd_waterfill(args):
    if args.model or args.awgn:
        raise UserInputError("waterfill needs an AR(1) channel (--ar1 --beta)")
    r = capacity.waterfill_nofb(_ar1(args), args.power, args.grid)
    _emit(args, [_rate(args, r) + " (no feedback)"], {"rate_nats": r})


def cmd_simulate(args):
    m = _load(args)
    sol = capacity.stationary_capacity(m, args.power, tol=args.tol)
    cfg = simulate.SimConfig.from_solution(sol, args.horizon, args.trials, args.seed)
    res = simulate.simulate_policy(m, cfg)
    bound = 4.0 / np.sqrt(res.trials * res.horizon)
    lines = [
        _rate(args, sol.rate_nats) + " (capacity)",
        "analytic " + _rate(args, res.analytic_rate_nats),
        "empirical " + _rate(args, res.empirical_rate_nats),
        "empirical power: %.6f +- %.6f (trace Pi = %.6f)" % (
            res.empirical_power, res.empirical_power_se, float(np.trace(sol.Pi))),
        "encoder innovation cov = %s (Psi = %s)" % (_fmt(res.encoder_innovation_cov), _fmt(sol.riccati.Psi)),
        "decoder innovation cov = %s (PsiY = %s)" % (_fmt(res.empirical_innovation_cov), _fmt(sol.PsiY)),
        "whiteness max lag corr: %.5f (4/sqrt(N) = %.5f)" % (res.whiteness_maxlag_corr, bound),
    ]
    _emit(args, lines, {
        "capacity_nats": sol.rate_nats, "analytic_rate_nats": res.analytic_rate_nats,
        "empirical_rate_nats": res.empirical_rate_nats, "empirical_power": res.empirical_power,
        "whiteness_maxlag_corr": res.whiteness_maxlag_corr,
    })


def cmd_probe(args):
    try:
        dims = tuple(int(s) for s in args.dims.split(","))
    except ValueError:
        raise UserInputError("--dims must be n,m,p") from None
    if len(dims) != 3 or min(dims) < 1:
        raise UserInputError("--dims must be three positive integers n,m,p")
    cfg = capacity.ProbeConfig(dims=dims)
    rep = capacity.conjecture_probe(cfg, args.trials, args.seed, tol=args.tol)
    lines = [
        "trials: %d" % rep.trials,
        "closed-loop detectability violations: %d" % rep.violations,
        "solver failures: %d" % len(rep.failures),
    ]
    _emit(args, lines, {"trials": rep.trials, "violations": rep.violations,
                        "instances": rep.instances, "failures": rep.failures})


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fbcap", description="Feedback capacity of Gaussian state-space channels.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("validate", help="check a model and its detectability assumption")
    _common(p, power=False)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("riccati", help="stationary encoder Riccati solution")
    _common(p, power=False)
    p.set_defaults(func=cmd_riccati)

    p = sub.add_parser("detect", help="detectability of (F, H) by PBH and LMI tests")
    _common(p, power=False)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("capacity", help="stationary feedback capacity")
    _common(p)
    p.set_defaults(func=cmd_capacity)

    p = sub.add_parser("finite-horizon", help="n-use upper bound C_n / n")
    _common(p)
    p.add_argument("--n", type=int, required=True, help="number of channel uses")
    p.set_defaults(func=cmd_finite_horizon)

    p = sub.add_parser("sweep", help="AR(1) capacity curves as CSV (%s)" % SCHEMES_HELP)
    p.add_argument("--ar1", action="store_true", help="accepted for clarity; sweeps are AR(1)")
    p.add_argument("--beta", dest="beta_grid", default="0.1:3.0:0.1", help="START:STOP:STEP (default 0.1:3.0:0.1)")
    p.add_argument("--delays", default="1,2,3,4", help="comma-separated delays (default 1,2,3,4)")
    p.add_argument("--nofeedback", action="store_true", help="add the water-filling no-feedback curve")
    p.add_argument("--input-gain", type=float, default=1.0)
    p.add_argument("--noise-var", type=float, default=1.0)
    p.add_argument("--power", type=float, default=1.0, help="average power P (default 1)")
    p.add_argument("--tol", type=float, default=1e-8, help="solver tolerance (default 1e-8)")
    p.add_argument("--seed", type=int, default=0, help="unused; accepted for uniformity")
    p.add_argument("--out", metavar="PATH", help="CSV output path (default stdout)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("waterfill", help="AR(1) no-feedback capacity by water-filling")
    _common(p)
    p.add_argument("--grid", type=int, default=16385, help="frequency grid size (default 16385)")
    p.set_defaults(func=cmd_waterfill)

    p = sub.add_parser("simulate", help="Monte Carlo run of the optimal policy")
    _common(p)
    p.add_argument("--horizon", type=int, default=10_000, help="steps per trial (default 10000)")
    p.add_argument("--trials", type=int, default=10, help="independent trials (default 10)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("probe-conjecture", help="closed-loop detectability on random models")
    p.add_argument("--trials", type=int, default=100, help="number of random models (default 100)")
    p.add_argument("--dims", default="1,1,1", help="n,m,p (default 1,1,1)")
    p.add_argument("--tol", type=float, default=1e-8, help="solver tolerance (default 1e-8)")
    p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    p.add_argument("--out", metavar="PATH", help="write the JSON report here")
    p.set_defaults(func=cmd_probe)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except UserInputError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1
    except NumericalError as exc:
        print("numerical failure: %s" % exc, file=sys.stderr)
        return 2
    return 0


def main(argv=None):
    sys.exit(run(argv))
