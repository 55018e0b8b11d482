"""Command line front end for the convergence experiments.

Every subcommand writes one deterministic report (JSON or CSV, no
timestamps), embeds its full configuration, and exits 0 only if the
assertions configured for it hold.  Exit 2 flags an invalid configuration,
exit 1 a failed assertion, named on stderr.

Library imports happen inside the handlers so that --threads can pin the
BLAS pools before numpy comes up.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path


def _die(msg: str) -> "NoReturn":
    print(f"error: {msg}", file=sys.stderr)
    raise SystemExit(2)


def _parse_complex(text: str, name: str) -> complex:
    try:
        re, im = (float(p) for p in text.split(","))
    except ValueError:
        _die(f"{name} must be 're,im', got {text!r}")
    return complex(re, im)


def _parse_floats(text: str, name: str) -> list:
    try:
        return [float(p) for p in text.split(",")]
    except ValueError:
        _die(f"{name} must be a comma-separated float list, got {text!r}")


def _sweep_exponents(h_max: float, h_min: float, factor: float) -> list:
    if not (h_max > h_min > 0) or factor <= 1:
        _die("sweep needs h_max > h_min > 0 and factor > 1")
    hs = []
    h = h_max
    while h >= h_min * (1 - 1e-12):
        hs.append(h)
        h /= factor
    if len(hs) < 3:
        _die(f"sweep has {len(hs)} points, needs at least 3")
    exps = []
    for h in hs:
        e = -math.log2(h)
        if abs(e - round(e)) > 1e-9:
            _die(f"sweep point h={h} is not a power of two")
        exps.append(round(e))
    return exps


def _write(out: str | None, text: str) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")


def _config_dict(args: argparse.Namespace) -> dict:
    skip = {"func", "out"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def _emit_report(args, command: str, results: dict, assertions: list) -> int:
    from . import __version__

    doc = {
        "command": command,
        "config": _config_dict(args),
        "version": __version__,
        "results": results,
        "assertions": assertions,
    }
    _write(args.out, json.dumps(doc, sort_keys=True, indent=2) + "\n")
    failed = [a for a in assertions if not a["passed"]]
    for a in failed:
        print(f"FAIL {a['name']}: value {a['value']} outside {a['bound']}",
              file=sys.stderr)
    return 1 if failed else 0


def _check(name: str, value: float, ok: bool, bound: str) -> dict:
    return {"name": name, "value": value, "passed": bool(ok), "bound": bound}


def _lattice(name: str):
    from .lattice import PRESET_NAMES, make_preset

    try:
        return make_preset(name)
    except ValueError:
        _die(f"unknown lattice {name!r}; presets: {', '.join(PRESET_NAMES)}")


# -- subcommand handlers -------------------------------------------------------


def _cmd_symbol(args) -> int:
    import numpy as np

    from .lattice import brillouin_zone, dual
    from .symbols import eval_p0, eval_p0h, sup_over_zone

    lat = _lattice(args.lattice)
    xi = np.array(_parse_floats(args.xi, "--xi") if args.xi else [0.0] * lat.dim)
    if xi.shape != (lat.dim,):
        _die(f"--xi needs {lat.dim} components for {args.lattice}")
    zone = brillouin_zone(dual(lat), points_per_axis=args.grid_res)
    sup = sup_over_zone(lambda s: np.atleast_1d(eval_p0h(lat, args.h, s)), zone)
    results = {
        "p0": float(eval_p0(lat, xi)),
        "p0h": float(eval_p0h(lat, args.h, xi)),
        "sup_p0h_zone": float(sup.value),
        "argmax": [float(v) for v in sup.argmax],
    }
    return _emit_report(args, "symbol", results, [])


def _cmd_embed_check(args) -> int:
    import numpy as np

    from .embedding import build_cutoff, gram_block
    from .lattice import dual

    lat = _lattice(args.lattice)
    profile = build_cutoff(lat)
    dl = dual(lat)
    rng = np.random.default_rng(args.seed)
    xi = rng.uniform(-3.0, 3.0, size=(args.samples, lat.dim))
    sigma, _ = dl.reduce(xi)
    norms = (profile.band_values(sigma) ** 2).sum(axis=-1)
    norm_defect = float(np.abs(norms - profile.cell_volume).max())
    gram = gram_block(profile, reach=2, route=args.route)
    gram_defect = float(np.abs(gram - np.eye(len(gram))).max())
    results = {"normalization_defect": norm_defect, "gram_defect": gram_defect,
               "samples": args.samples, "block": len(gram)}
    assertions = [
        _check("normalization_defect", norm_defect, norm_defect <= 1e-10, "<= 1e-10"),
        _check("gram_defect", gram_defect, gram_defect <= 1e-6, "<= 1e-6"),
    ]
    return _emit_report(args, "embed-check", results, assertions)


def _cmd_converge_free(args) -> int:
    from .convergence import free_convergence_sweep
    from .embedding import build_cutoff

    lat = _lattice(args.lattice)
    exps = _sweep_exponents(args.h_max, args.h_min, args.factor)
    mu = _parse_complex(args.mu, "--mu")
    if mu.imag == 0:
        _die("--mu must be non-real")
    profile = build_cutoff(lat)
    rep = free_convergence_sweep(profile, mu=mu, h_exponents=exps,
                                 zone_res=args.grid_res)
    assertions = [
        _check("slope", rep.slope, 1.9 <= rep.slope <= 2.1, "[1.9, 2.1]"),
        _check("r_squared", rep.r_squared, rep.r_squared >= 0.99, ">= 0.99"),
    ]
    return _emit_report(args, "converge-free", rep.to_document(), assertions)


def _cmd_converge_hex(args) -> int:
    from .embedding import build_cutoff
    from .hexagonal import hex_convergence_chain, hex_geometry

    exps = _sweep_exponents(args.h_max, args.h_min, args.factor)
    mu = _parse_complex(args.mu, "--mu")
    if mu.imag == 0:
        _die("--mu must be non-real")
    geom = hex_geometry(1.0)
    profile = build_cutoff(geom.triangular_lattice())
    chain = hex_convergence_chain(profile, geom, mu=mu, h_exponents=exps,
                                  zone_res=args.grid_res)
    assertions = [
        _check(f"{tag}_slope", rep.slope, rep.slope >= 1.9, ">= 1.9")
        for tag, rep in (("projector", chain.projector),
                         ("intertwine", chain.intertwine),
                         ("combined", chain.combined))
    ]
    return _emit_report(args, "converge-hex", chain.to_document(), assertions)


def _cmd_hex_bands(args) -> int:
    import numpy as np

    from .hexagonal import alpha, hex_geometry

    if args.h <= 0:
        _die("--h must be positive")
    geom = hex_geometry(args.h)
    pts = geom.zone(args.grid_res).points / args.h
    if not (np.abs(pts) < 1e-14).all(axis=1).any():
        pts = np.vstack([np.zeros((1, 2)), pts])
    mod = np.abs(alpha(geom, pts))
    e_minus = (3.0 - mod) / args.h**2
    e_plus = (3.0 + mod) / args.h**2
    lines = ["xi1,xi2,E_minus,E_plus"]
    for p, lo, hi in zip(pts, e_minus, e_plus):
        row = (p[0], p[1], lo, hi)
        lines.append(",".join(repr(float(v)) for v in row))
    _write(args.out, "\n".join(lines) + "\n")
    return 0


def _cmd_converge_elliptic(args) -> int:
    from .elliptic import elliptic_convergence, load_coefficients
    from .embedding import build_cutoff

    exps = _sweep_exponents(args.h_max, args.h_min, args.factor)
    z = _parse_complex(args.z, "--z")
    if z.imag == 0:
        _die("--z must be non-real")
    try:
        coeffs = load_coefficients(args.coeffs)
    except (OSError, KeyError, ValueError) as exc:
        _die(f"cannot load coefficients: {exc}")
    profile = build_cutoff(_lattice(f"square_{coeffs.d}"))
    rep = elliptic_convergence(coeffs, profile, z=z, h_exponents=exps,
                               ref_factor=args.ref_factor, variant=args.variant,
                               seed=args.seed)
    assertions = [
        _check("slope", rep.slope, rep.slope >= args.slope_floor,
               f">= {args.slope_floor}"),
    ]
    return _emit_report(args, "converge-elliptic", rep.to_document(), assertions)


def _cmd_spectra_hausdorff(args) -> int:
    from .schrodinger import (assemble_Hh, lowest_eigenpairs, potential,
                              spectra_hausdorff)

    lat = _lattice(args.lattice)
    try:
        V = potential(args.potential)
    except ValueError as exc:
        _die(str(exc))
    hs = _parse_floats(args.h, "--h")
    if args.k < 1 or args.cells < 1 or args.ref_factor < 2:
        _die("need k >= 1, cells >= 1, ref-factor >= 2")
    lines = ["h,d_hausdorff," + ",".join(f"ev{i+1}" for i in range(args.k))
             + "," + ",".join(f"ref{i+1}" for i in range(args.k))]
    for h in hs:
        N = round(args.cells / h)
        if N % 2 or abs(N * h - args.cells) > 1e-9:
            _die(f"box of {args.cells} cells does not split evenly at h={h}")
        try:
            d_h = spectra_hausdorff(lat, V, h, N, args.k,
                                    ref_factor=args.ref_factor)
        except ValueError as exc:
            print(f"FAIL truncation_reliability: {exc}", file=sys.stderr)
            return 1
        # reliability held, so the two spectra below are trustworthy
        ev_c, _ = lowest_eigenpairs(assemble_Hh(lat, V, h, N), args.k)
        ev_f, _ = lowest_eigenpairs(
            assemble_Hh(lat, V, h / args.ref_factor, N * args.ref_factor), args.k)
        row = [h, d_h] + list(ev_c) + list(ev_f)
        lines.append(",".join(repr(float(v)) for v in row))
    _write(args.out, "\n".join(lines) + "\n")
    return 0


def _cmd_elliptic_estimate(args) -> int:
    from .elliptic import assemble, elliptic_estimate_check, load_coefficients

    try:
        coeffs = load_coefficients(args.coeffs)
    except (OSError, KeyError, ValueError) as exc:
        _die(f"cannot load coefficients: {exc}")
    hs = _parse_floats(args.h, "--h")
    per_h = {}
    assertions = []
    for h in hs:
        N = round(1.0 / h)
        if abs(N * h - 1.0) > 1e-9:
            _die(f"h={h} does not divide the unit box")
        P = assemble(coeffs, coeffs.d, h, N, "P_plus")
        H0 = assemble(None, coeffs.d, h, N, "H0h")
        out = elliptic_estimate_check(P, H0, trials=args.trials, seed=args.seed)
        c1, c2 = float(out["c1_est"]), float(out["c2_est"])
        per_h[repr(h)] = {"c1_est": c1, "c2_est": c2}
        assertions.append(_check(f"c1_est[h={h}]", c1, c1 >= args.floor,
                                 f">= {args.floor}"))
    return _emit_report(args, "elliptic-estimate", {"per_h": per_h}, assertions)


# -- parser --------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(
        prog="lattice-limits",
        description="Convergence experiments for lattice continuum limits.")
    sub = top.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default=None, help="output file (default stdout)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=None,
                        help="cap BLAS/OpenMP thread pools")

    sweep = argparse.ArgumentParser(add_help=False)
    sweep.add_argument("--h-max", type=float, default=0.25)
    sweep.add_argument("--h-min", type=float, default=2.0**-8)
    sweep.add_argument("--factor", type=float, default=2.0)

    p = sub.add_parser("symbol", parents=[common], help="evaluate lattice symbols")
    p.add_argument("--lattice", required=True)
    p.add_argument("--h", type=float, default=1.0)
    p.add_argument("--xi", default=None, help="point 'c1,c2,...'")
    p.add_argument("--grid-res", type=int, default=48)
    p.set_defaults(func=_cmd_symbol)

    p = sub.add_parser("embed-check", parents=[common],
                       help="cutoff normalization and Gram identity")
    p.add_argument("--lattice", required=True)
    p.add_argument("--samples", type=int, default=10000)
    p.add_argument("--route", choices=("position", "fourier"), default="position")
    p.set_defaults(func=_cmd_embed_check)

    p = sub.add_parser("converge-free", parents=[common, sweep],
                       help="free resolvent-difference rate")
    p.add_argument("--lattice", required=True)
    p.add_argument("--mu", default="0,1")
    p.add_argument("--grid-res", type=int, default=None)
    p.set_defaults(func=_cmd_converge_free)

    p = sub.add_parser("converge-hex", parents=[common, sweep],
                       help="hexagonal chain rates")
    p.add_argument("--mu", default="0,1")
    p.add_argument("--grid-res", type=int, default=96)
    p.set_defaults(func=_cmd_converge_hex)

    p = sub.add_parser("hex-bands", parents=[common],
                       help="hexagonal band surfaces as CSV")
    p.add_argument("--h", type=float, default=1.0)
    p.add_argument("--grid-res", type=int, default=24)
    p.set_defaults(func=_cmd_hex_bands)

    p = sub.add_parser("converge-elliptic", parents=[common, sweep],
                       help="variable-coefficient resolvent rate")
    p.add_argument("--coeffs", required=True)
    p.add_argument("--z", default="0,1")
    p.add_argument("--ref-factor", type=int, default=8)
    p.add_argument("--variant", default="P_plus")
    p.add_argument("--slope-floor", type=float, default=0.8)
    p.set_defaults(func=_cmd_converge_elliptic, h_max=0.125, h_min=2.0**-7)

    p = sub.add_parser("spectra-hausdorff", parents=[common],
                       help="Hausdorff distance of low eigenvalues")
    p.add_argument("--lattice", required=True)
    p.add_argument("--potential", required=True)
    p.add_argument("--h", default="0.25,0.0625", help="comma list of spacings")
    p.add_argument("--cells", type=int, default=12)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--ref-factor", type=int, default=8)
    p.set_defaults(func=_cmd_spectra_hausdorff)

    p = sub.add_parser("elliptic-estimate", parents=[common],
                       help="discrete elliptic estimate constants")
    p.add_argument("--coeffs", required=True)
    p.add_argument("--h", default="0.125,0.0625,0.03125,0.015625")
    p.add_argument("--floor", type=float, default=0.5)
    p.add_argument("--trials", type=int, default=32)
    p.set_defaults(func=_cmd_elliptic_estimate)

    return top


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.threads is not None:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    try:
        return args.func(args)
    except ValueError as exc:
        # the library raises ValueError for bad inputs, never mid-computation
        _die(str(exc))


if __name__ == "__main__":
    raise SystemExit(main())
