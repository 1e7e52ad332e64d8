"""Command-line front-end: ``fpcap <subcommand> [flags]``.

Exit codes: 0 success, 2 invalid configuration, 3 numerical failure,
4 non-convergence (the partial result is still written).
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import io
import json
import os
import sys

import numpy as np

from . import asymptotics, payoff, simulate, solver
from .channel import Params, channel_matrix
from .errors import (CapacityError, DimensionError, DomainError, NonConvergenceError,
                     SizeError, UnsupportedError)
from .gammamap import interleaving_gamma, strategy_to_gamma
from .strategy import Strategy, interleaving_strategy

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_NONCONVERGENCE = 4

BUILTIN_INTERLEAVING = "builtin:interleaving"


class ConfigError(CapacityError):
    """Flags are individually valid but inconsistent."""


def fmt(x) -> str:
    return f"{float(x):.17g}"


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _positive_float(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}")
    if not value > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return value


def _common_parser(c_list: bool = False) -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--q", type=int, required=True, help="alphabet size (>= 2)")
    if c_list:
        common.add_argument("--c", type=_ints, default=None,
                            help="strictly ascending comma-separated coalition sizes")
    else:
        common.add_argument("--c", type=int, default=None, help="coalition size (>= 1)")
    common.add_argument("--tol", type=_positive_float, default=None,
                        help="solver tolerance (must be > 0)")
    common.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    common.add_argument("--out", default=None, help="output file (default: stdout)")
    common.add_argument("--format", choices=("json", "csv"), default=None,
                        help="output format (default depends on the subcommand)")
    common.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                        help="worker threads (default: number of CPUs)")
    return common


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fpcap", description="Capacity of q-ary fingerprinting games under the Marking Assumption.")
    sub = parser.add_subparsers(dest="command", required=True)
    common = _common_parser()

    p = sub.add_parser("payoff", parents=[common],
                       help="mutual information and large-c payoff of an attack")
    p.add_argument("--strategy", default=BUILTIN_INTERLEAVING,
                   help=f"{BUILTIN_INTERLEAVING} or path to a strategy JSON file")
    p.add_argument("--p", type=_floats, action="append", default=[],
                   help="bias vector, comma separated; repeat for a sweep")
    p.add_argument("--T-at-u", dest="t_at_u", type=_floats, default=None,
                   help="evaluate the large-c payoff at this unit vector u")
    p.add_argument("--bits", action="store_true", help="also report information in bits")

    p = sub.add_parser("best-response", parents=[common],
                       help="attacker's best response to a bias or bias mixture")
    p.add_argument("--p", type=_floats, action="append", required=True,
                   help="support point of the bias distribution; repeat for a mixture")
    p.add_argument("--weights", type=_floats, default=None, help="mixture weights (default equal)")
    p.add_argument("--method", choices=("alternating", "frank-wolfe"), default="alternating")
    p.add_argument("--max-iter", type=int, default=solver.INNER_MAX_ITER)

    for name, helptext in (("minimax", "min over attacks of max over biases"),
                           ("maximin", "max over bias distributions of min over attacks")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--trace", default=None, help="write the iteration trace CSV here")
        p.add_argument("--grid", type=int, default=None, help="bias grid resolution per axis")
        p.add_argument("--inner-tol", type=_positive_float, default=solver.INNER_TOL)
        p.add_argument("--max-rounds", type=int, default=solver.OUTER_MAX_ROUNDS)
        p.add_argument("--support-cap", type=int, default=solver.SUPPORT_CAP)

    p = sub.add_parser("converge", parents=[_common_parser(c_list=True)],
                       help="scaled finite-c values against the asymptotic limit")
    p.add_argument("--mode", choices=asymptotics.MODES, default="interleaving-uniform")

    p = sub.add_parser("spectrum", parents=[common],
                       help="eigenvalues of J^T J for the interleaving map")
    p.add_argument("--u", type=_floats, required=True, help="unit vector, comma separated")

    p = sub.add_parser("simulate", parents=[common],
                       help="Monte-Carlo estimate of the mutual information with z-scores")
    p.add_argument("--strategy", default=BUILTIN_INTERLEAVING)
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--p", type=_floats, default=None, help="fixed bias vector")
    p.add_argument("--bias", choices=simulate.BIAS_KINDS[:-1], default=None,
                   help="bias family to draw evaluation points from (used when --p is absent)")
    p.add_argument("--kappa", type=_positive_float, default=simulate.DEFAULT_KAPPA,
                   help="Dirichlet parameter")
    p.add_argument("--points", type=int, default=1, help="number of bias draws from --bias")
    p.add_argument("--bootstrap", type=int, default=200)
    p.add_argument("--users", type=int, default=100, help="users in the marking check code")
    p.add_argument("--segments", type=int, default=1000, help="segments in the marking check code")

    p = sub.add_parser("capacity", parents=[common],
                       help="asymptotic capacity (q-1)/(2 c^2 ln q)")
    p.add_argument("--q-list", type=_ints, default=None,
                   help="tabulate over these alphabet sizes instead of --q")
    return parser


def _need_c(args) -> int:
    if args.c is None:
        raise ConfigError(f"{args.command} needs --c")
    return args.c


def _load_strategy(source: str, params: Params | None, q: int) -> Strategy | None:
    if source == BUILTIN_INTERLEAVING:
        return interleaving_strategy(params) if params is not None else None
    if source.startswith("builtin:"):
        raise ConfigError(f"unknown builtin strategy {source!r}")
    try:
        s = Strategy.load(source)
    except OSError as exc:
        raise ConfigError(f"cannot read strategy file: {exc}")
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"malformed strategy file {source}: {exc}")
    if s.params.q != q or (params is not None and s.params != params):
        raise ConfigError(f"strategy file is for c={s.params.c}, q={s.params.q}")
    return s


def _render_csv(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _cmd_payoff(args):
    params = Params(args.c, args.q) if args.c is not None else None
    if args.t_at_u is None and not args.p:
        raise ConfigError("payoff needs --p or --T-at-u")
    if args.p and params is None:
        raise ConfigError("payoff at a bias point needs --c")
    s = _load_strategy(args.strategy, params, args.q)
    if args.strategy == BUILTIN_INTERLEAVING:
        gmap = interleaving_gamma(args.q)
    elif s.params.c >= 4:
        gmap = strategy_to_gamma(s)
    else:
        gmap = None

    result = {"q": args.q, "c": args.c}
    if args.t_at_u is not None:
        if gmap is None:
            raise UnsupportedError("large-c payoff needs the interleaving strategy or c >= 4")
        result["T_at_u"] = payoff.asymptotic_payoff_u(gmap, args.t_at_u)
        result["u"] = list(args.t_at_u)
    rows = payoff.payoff_sweep(s, args.p, gmap) if args.p else []

    if (args.format or "csv") == "csv":
        if rows:
            buf = io.StringIO()
            payoff.write_payoff_csv(rows, buf)
            text = buf.getvalue()
            if args.bits:
                lines = text.splitlines()
                lines[0] += ",I_bits"
                lines[1:] = [ln + "," + fmt(payoff.information_in_bits(r["I_qary"], args.q))
                             for ln, r in zip(lines[1:], rows)]
                text = "\n".join(lines) + "\n"
        else:
            text = ""
        if "T_at_u" in result:
            text += _render_csv(["q"] + [f"u_{i + 1}" for i in range(args.q)] + ["T"],
                                [[args.q] + [fmt(v) for v in args.t_at_u] + [fmt(result["T_at_u"])]])
        return text, EXIT_OK
    result["points"] = [{"p": r["p"].tolist(), "I_qary": r["I_qary"], "T": r["T"], "gap": r["gap"],
                         **({"I_bits": payoff.information_in_bits(r["I_qary"], args.q)}
                            if args.bits else {})} for r in rows]
    return json.dumps(result) + "\n", EXIT_OK


def _bias_argument(points, weights, q):
    support = np.array(points, dtype=float)
    if support.shape[1:] != (q,):
        raise DimensionError(f"every --p needs {q} components")
    if weights is None:
        weights = np.full(len(support), 1.0 / len(support))
    if len(weights) != len(support):
        raise ConfigError("--weights must match the number of --p points")
    if len(support) == 1:
        return support[0]
    return solver.BiasDistribution(support, np.asarray(weights, dtype=float))


def _cmd_best_response(args):
    params = Params(_need_c(args), args.q)
    bias = _bias_argument(args.p, args.weights, args.q)
    tol = args.tol or solver.INNER_TOL
    code = EXIT_OK
    try:
        s, gap = solver.best_response_theta(bias, params, tol=tol, max_iter=args.max_iter,
                                            method=args.method)
    except NonConvergenceError as exc:
        (s, gap), code = exc.partial, EXIT_NONCONVERGENCE
    support, weights = solver._as_mixture(params, bias)
    value = float(weights @ payoff.mi_rows(s.theta, channel_matrix(params, support), args.q))
    if (args.format or "json") == "csv":
        rows = [[fmt(v) for v in row] for row in s.theta]
        text = _render_csv([f"theta_{a}" for a in range(args.q)], rows)
    else:
        text = json.dumps({"c": params.c, "q": params.q, "value": value, "gap": gap,
                           "converged": code == EXIT_OK, "strategy": s.to_dict()}) + "\n"
    return text, code


def _cmd_game(args):
    params = Params(_need_c(args), args.q)
    fn = solver.solve_minimax if args.command == "minimax" else solver.solve_maximin
    code = EXIT_OK
    try:
        sol = fn(params, tol=args.tol or solver.OUTER_TOL, inner_tol=args.inner_tol,
                 grid_resolution=args.grid, max_rounds=args.max_rounds, support_cap=args.support_cap)
    except NonConvergenceError as exc:
        if exc.partial is None:
            raise
        sol, code = exc.partial, EXIT_NONCONVERGENCE
    if args.trace:
        with open(args.trace, "w") as fh:
            sol.write_trace_csv(fh)
    gap = sol.upper - sol.lower
    summary = f"{args.command} value {fmt(sol.value)} certificate gap {fmt(gap)}"
    print(summary, file=sys.stderr if args.out is None else sys.stdout)
    if (args.format or "json") == "csv":
        text = _render_csv(["c", "q", "value", "upper", "lower", "gap", "rounds", "converged"],
                           [[params.c, params.q, fmt(sol.value), fmt(sol.upper), fmt(sol.lower),
                             fmt(gap), len(sol.trace), int(sol.converged)]])
    else:
        text = sol.to_json() + "\n"
    return text, code


def _cmd_converge(args):
    c_list = args.c
    if not c_list:
        raise ConfigError("converge needs --c with at least one value")
    if any(b <= a for a, b in zip(c_list, c_list[1:])):
        raise ConfigError(f"--c list must be strictly ascending, got {c_list}")
    rows = asymptotics.convergence_study(args.q, c_list, args.mode,
                                         solver_tol=args.tol or solver.OUTER_TOL,
                                         threads=args.threads)
    print(f"final gap {fmt(rows[-1].gap)}", file=sys.stderr if args.out is None else sys.stdout)
    if (args.format or "csv") == "csv":
        buf = io.StringIO()
        asymptotics.write_convergence_csv(rows, buf)
        return buf.getvalue(), EXIT_OK
    return json.dumps([vars(r) for r in rows]) + "\n", EXIT_OK


def _cmd_spectrum(args):
    gmap = interleaving_gamma(args.q)
    eig = payoff.jacobian_spectrum(gmap, args.u)
    t_val = payoff.asymptotic_payoff_u(gmap, args.u)
    if (args.format or "csv") == "csv":
        return _render_csv(["index", "eigenvalue"], [[i, fmt(v)] for i, v in enumerate(eig)]), EXIT_OK
    return json.dumps({"q": args.q, "u": list(args.u), "eigenvalues": eig.tolist(),
                       "T": t_val}) + "\n", EXIT_OK


def _cmd_simulate(args):
    params = Params(_need_c(args), args.q)
    s = _load_strategy(args.strategy, params, args.q)
    rng = np.random.default_rng(args.seed)
    if args.p is not None:
        family = simulate.BiasFamily.point(args.p)
        points = [np.asarray(args.p, dtype=float)]
    else:
        kind = args.bias or ("arcsine" if args.q == 2 else "dirichlet")
        family = simulate.BiasFamily(kind, args.q, kappa=args.kappa)
        points = list(simulate.sample_biases(family, args.points, rng))
    if args.bias is not None:
        # validate the family even when a fixed point overrides it
        simulate.BiasFamily(args.bias, args.q, kappa=args.kappa)

    code_matrix = simulate.generate_code(max(args.users, params.c), args.segments, family, rng)
    coalition = rng.choice(code_matrix.n, size=params.c, replace=False)
    forged = simulate.collude(code_matrix, coalition, s, rng)
    ok, where = simulate.verify_marking(code_matrix, coalition, forged)
    if not ok:
        raise ArithmeticError(f"collude: forged word violates the Marking Assumption at segment {where}")

    results = [simulate.simulate_information(s, p, args.samples, rng, args.bootstrap) for p in points]
    if (args.format or "csv") == "csv":
        buf = io.StringIO()
        simulate.write_simulation_csv(results, buf)
        return buf.getvalue(), EXIT_OK
    return json.dumps([{"samples": r.samples, "estimate": r.estimate, "stderr": r.stderr,
                        "exact": r.exact, "z_score": r.z_score} for r in results]) + "\n", EXIT_OK


def _cmd_capacity(args):
    c = _need_c(args)
    q_list = args.q_list or [args.q]
    rows = asymptotics.capacity_vs_q(c, q_list)
    if (args.format or "csv") == "csv":
        return _render_csv(["c", "q", "capacity"], [[c, q, fmt(v)] for q, v in rows]), EXIT_OK
    return json.dumps([{"c": c, "q": q, "capacity": v} for q, v in rows]) + "\n", EXIT_OK


COMMANDS = {
    "payoff": _cmd_payoff,
    "best-response": _cmd_best_response,
    "minimax": _cmd_game,
    "maximin": _cmd_game,
    "converge": _cmd_converge,
    "spectrum": _cmd_spectrum,
    "simulate": _cmd_simulate,
    "capacity": _cmd_capacity,
}


def _write(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        with open(out, "w") as fh:
            fh.write(text)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        text, code = COMMANDS[args.command](args)
    except (ConfigError, DomainError, DimensionError, SizeError, UnsupportedError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except (ArithmeticError, FloatingPointError) as exc:
        print(f"numerical error in {args.command}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    with contextlib.suppress(BrokenPipeError):
        _write(text, args.out)
    if code == EXIT_NONCONVERGENCE:
        print(f"{args.command}: did not converge; partial result written", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
