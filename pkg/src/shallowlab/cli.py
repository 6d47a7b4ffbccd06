"""Command-line entry points.

Subcommands: analyze-activation, certify, train, flow, gram-mc,
lazy-sweep, teacher-student.  Exit codes: 0 success, 2 configuration
error, 3 numeric divergence, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import io
import sys
import warnings

import numpy as np

from .activations import get_activation
from .certificates import (
    LAZY_NOTE,
    certify_init,
    constants_at_init,
    failure_probability,
    lazy_regime_report,
    monte_carlo_gram,
    width_requirement,
)
from .errors import ConfigError, DivergenceError
from .harness import (
    STREAM_POINT_BASE,
    ExperimentConfig,
    build_splits,
    emit_report,
    init_weights,
    render_report,
    resolve_eta,
    teacher_student_sweep,
)
from .hermite import expected_gram, hermite_coefficients
from .linalg import RngStream, sym_eig_extremes
from .network import forward, loss
from .training import confinement_check, gd_train, gradient_flow, rate_certificate

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_IO = 4


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_file(args.config)
    if args.seed is not None:
        cfg.master_seed = args.seed
    return cfg


def _emit(args, report, default_fmt: str):
    fmt = args.format or default_fmt
    if args.out:
        emit_report(report, args.out, fmt)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(render_report(report, fmt))


def _instance(cfg: ExperimentConfig):
    """Data, initialization, constants, and certificates for one run."""
    phi = cfg.profile()
    train, test = build_splits(cfg)
    scheme = cfg.scheme()
    theta0 = init_weights(cfg.dims, scheme, RngStream(cfg.master_seed, STREAM_POINT_BASE))
    return phi, train, test, scheme, theta0


def cmd_analyze_activation(args) -> int:
    phi = get_activation(args.name)
    expansion = hermite_coefficients(phi, order=args.order)
    doc = {
        "name": phi.name,
        "phi_dot_max": phi.phi_dot_max,
        "phi_ddot_max": phi.phi_ddot_max,
        "bounds_certified": phi.bounds_certified,
        "r1": phi.r1,
        "r2": phi.r2,
        "zero_at_origin": phi.zero_at_origin,
        "hermite": {
            "order": expansion.order,
            "coefficients": [float(c) for c in expansion.coeffs],
            "hermite_norm": expansion.hermite_norm,
            "tail_mass": expansion.tail_mass,
            "truncation_residual": expansion.truncation_residual,
            "odd_function_warning": expansion.coefficient(0) == 0.0,
        },
    }
    if (args.format or "json") == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["i", "coefficient"])
        for i, c in enumerate(expansion.coeffs):
            writer.writerow([i, repr(float(c))])
        text = buf.getvalue()
        if args.out:
            with open(args.out, "w") as fh:
                fh.write(text)
            print(f"wrote {args.out}")
        else:
            sys.stdout.write(text)
        return EXIT_OK
    _emit(args, doc, "json")
    return EXIT_OK


def cmd_certify(args) -> int:
    cfg = _load_config(args)
    phi, train, _, scheme, theta0 = _instance(cfg)
    probes = cfg.probes()
    expansion = hermite_coefficients(phi, order=30)
    h0 = loss(theta0, train, phi)

    consts = constants_at_init(theta0, train.X, phi, cfg.chi_max())
    sat, margin = certify_init(h0, consts, float(cfg.constants.get("c_init", 1e-2)))
    z0 = forward(theta0, train.X, phi)
    eta = resolve_eta(cfg, consts, 2.0 * float(np.linalg.norm(z0 - train.Y)))
    consts = consts.with_eta(eta)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        width = width_requirement(
            train.X, expansion, phi, probes, scheme.omega1, cfg.chi_max(), cfg.dims[1]
        )
    ext = sym_eig_extremes(expected_gram(train.X, expansion, 1))
    psi = failure_probability(
        cfg.dims, train.X, probes, (ext.sigma_min, ext.sigma_max), phi.phi_dot_max
    )
    lazy = lazy_regime_report(
        scheme.omega1, scheme.omega2, cfg.dims, consts, expansion, phi,
        sigma_max_x=width.sigma_max_x, sigma_min_xt=width.sigma_min_xt,
        delta2=probes.delta2,
    )
    doc = {
        "dims": {"d0": cfg.dims[0], "d1": cfg.dims[1], "d2": cfg.dims[2], "n": cfg.dims[3]},
        "activation": phi.name,
        "init": {"omega1": scheme.omega1, "omega2": scheme.omega2,
                 "product_budget": scheme.product_budget},
        "h0": h0,
        "constants": {
            "mu": consts.mu_phi,
            "nu": consts.nu_phi,
            "beta": consts.beta_phi,
            "rho": consts.rho_phi,
            "eta": consts.eta,
        },
        "certificates": {
            "init_margin": margin,
            "init_satisfied": bool(sat),
            "width": {
                "t": width.t,
                "xi": width.xi,
                "d1_required": width.d1_required,
                "d1_actual": width.d1_actual,
                "satisfied": bool(width.satisfied),
                "sigma_min_xt": width.sigma_min_xt,
                "sigma_max_x": width.sigma_max_x,
                "c0_term_dominant": bool(width.c0_term_dominant),
                "notes": width.notes,
            },
            "psi": psi,
            "lazy": {
                "ratio": lazy.ratio,
                "bound_value": lazy.bound_value,
                "classification": lazy.classification,
                "note": lazy.note,
            },
        },
        "master_seed": cfg.master_seed,
    }
    _emit(args, doc, "json")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_config(args)
    phi, train, _, scheme, theta0 = _instance(cfg)
    consts = constants_at_init(theta0, train.X, phi, cfg.chi_max())
    z0 = forward(theta0, train.X, phi)
    eta = resolve_eta(cfg, consts, 2.0 * float(np.linalg.norm(z0 - train.Y)))
    trace = gd_train(
        theta0, train, phi, eta,
        int(cfg.opt("max_iters", 5000)),
        stop_loss=float(cfg.opt("stop_loss", 1e-10)),
        track_lazy=bool(cfg.opt("track_lazy", True)),
    )
    _emit(args, trace, "csv")
    h0 = float(trace.losses[0])
    summary = f"final loss {trace.final_loss:.3e} after {trace.iterations} iterations (eta {eta:.3e}"
    if len(trace.losses) >= 10 and h0 > 0:
        monotone, rate, r2 = rate_certificate(trace, consts, eta)
        confined, _ = confinement_check(trace, consts, h0)
        summary += f", monotone {monotone}, rate {rate:.3e}, r2 {r2:.3f}, confined {confined}"
    print(summary + ")", file=sys.stderr)
    return EXIT_OK


def cmd_flow(args) -> int:
    cfg = _load_config(args)
    phi, train, _, _, theta0 = _instance(cfg)
    trace = gradient_flow(
        theta0, train, phi,
        dt=float(cfg.opt("dt", 1e-3)),
        t_end=float(cfg.opt("t_end", 1.0)),
    )
    _emit(args, trace, "csv")
    return EXIT_OK


def cmd_gram_mc(args) -> int:
    cfg = _load_config(args)
    phi = cfg.profile()
    train, _ = build_splits(cfg)
    scheme = cfg.scheme()
    num_samples = int(cfg.mc.get("num_samples", 2000))
    diag = monte_carlo_gram(
        train.X, phi, scheme.omega1, cfg.dims[1], num_samples,
        RngStream(cfg.master_seed, STREAM_POINT_BASE + 7),
    )
    doc = {
        "activation": phi.name,
        "omega1": scheme.omega1,
        "d1": cfg.dims[1],
        "num_samples": num_samples,
        "rel_frobenius_error": diag.rel_frobenius_error,
        "sigma_min_emp": diag.sigma_min_emp,
        "sigma_max_emp": diag.sigma_max_emp,
        "expected_sigma_min": diag.lower_bound,
        "expected_sigma_max": diag.upper_bound,
    }
    if cfg.dims[3] <= 16:
        doc["empirical_gram"] = [[float(v) for v in row] for row in diag.empirical_gram]
        doc["expected_gram"] = [[float(v) for v in row] for row in diag.expected_gram]
    _emit(args, doc, "json")
    return EXIT_OK


def cmd_lazy_sweep(args) -> int:
    cfg = _load_config(args)
    phi = cfg.profile()
    train, _ = build_splits(cfg)
    probes = cfg.probes()
    expansion = hermite_coefficients(phi, order=30)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        width = width_requirement(
            train.X, expansion, phi, probes, 1.0, cfg.chi_max(), cfg.dims[1]
        )
    ratios = [float(r) for r in cfg.sweep.get("ratios", [0.01, 0.1, 1.0, 10.0, 100.0])]
    points = []
    for ratio in ratios:
        scheme = cfg.scheme(ratio)
        rep = lazy_regime_report(
            scheme.omega1, scheme.omega2, cfg.dims, None, expansion, phi,
            sigma_max_x=width.sigma_max_x, sigma_min_xt=width.sigma_min_xt,
            delta2=probes.delta2,
        )
        points.append({
            "ratio": ratio,
            "omega1": scheme.omega1,
            "omega2": scheme.omega2,
            "bound_value": rep.bound_value,
            "classification": rep.classification,
        })
    doc = {
        "activation": phi.name,
        "product_budget": cfg.product_budget(),
        "note": LAZY_NOTE,
        "points": points,
    }
    _emit(args, doc, "json")
    return EXIT_OK


def cmd_teacher_student(args) -> int:
    cfg = _load_config(args)
    report = teacher_student_sweep(cfg)
    _emit(args, report, "json")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shallowlab",
        description="two-layer network training with convergence certificates",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True):
        if needs_config:
            p.add_argument("config", help="path to a JSON experiment config")
        p.add_argument("--seed", type=int, default=None, help="override master seed")
        p.add_argument("--out", default=None, help="output path (default: stdout)")
        p.add_argument("--format", choices=["csv", "json"], default=None)

    p = sub.add_parser("analyze-activation", help="profile and expand an activation")
    p.add_argument("name")
    p.add_argument("--order", type=int, default=30)
    common(p, needs_config=False)
    p.set_defaults(handler=cmd_analyze_activation)

    for name, handler, help_text in [
        ("certify", cmd_certify, "compute all theory certificates for a config"),
        ("train", cmd_train, "full-batch gradient descent with trace output"),
        ("flow", cmd_flow, "gradient-flow integration with trace output"),
        ("gram-mc", cmd_gram_mc, "Monte-Carlo check of the expected feature Gram"),
        ("lazy-sweep", cmd_lazy_sweep, "lazy-regime bound across init ratios"),
        ("teacher-student", cmd_teacher_student, "full teacher-student sweep"),
    ]:
        p = sub.add_parser(name, help=help_text)
        common(p)
        p.set_defaults(handler=handler)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (KeyError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"numeric divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
