"""Command-line front end.

Data goes to --out (or stdout); human-readable notes go to stderr. Exit codes:
0 success, 1 validation failure, 2 bad input, 3 numerical failure.
"""
import argparse
import json
import sys
import warnings

import numpy as np

from .greens import GeometryError
from .optimizer import (DegenerateEigenvalueError, IndefiniteRError, design_run, load_design_spec,
                        write_design_result)
from .polarizability import (SingularPolarizabilityError, audit_passivity, read_field_grid,
                             retrieve_polarizabilities, scene_polarizabilities)
from .power import accepted_power, input_impedance, power_balance, write_impedance_sweep
from .radiation import pattern_metrics, radiation_pattern, read_pattern, write_pattern
from .scene import SaturationError, load_scene, validate_feasibility
from .solver import NumericalError, solve_scene, write_state
from .specfun import SpecialFunctionDomainError

NUMERICAL = (NumericalError, SingularPolarizabilityError, DegenerateEigenvalueError, IndefiniteRError,
             np.linalg.LinAlgError, SpecialFunctionDomainError, FloatingPointError)


class ValidationFailed(Exception):
    pass


def parse_currents(text):
    try:
        return np.array([complex(s.strip().replace(" ", "")) for s in text.split(",") if s.strip()])
    except ValueError:
        raise ValueError(f"cannot parse currents {text!r}; expected a comma list like 1+0j,0.5-0.2j") from None


def parse_freqs(text):
    parts = text.split(":")
    if len(parts) != 3:
        raise ValueError(f"--freqs expects start:stop:n, got {text!r}")
    a, b, n = float(parts[0]), float(parts[1]), int(parts[2])
    if n < 1 or a <= 0 or b <= 0:
        raise ValueError("--freqs needs positive frequencies and n >= 1")
    return np.linspace(a, b, n)


def parse_grid(text):
    try:
        nt, npf = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise ValueError(f"--grid expects NTHETAxNPHI, got {text!r}") from None
    return nt, npf


def parse_distance(text):
    if text.lower() == "ff":
        return "ff"
    d = float(text)
    if not d > 0:
        raise ValueError("--distance must be positive or 'ff'")
    return d


def _currents(args, scene):
    if args.currents:
        i = parse_currents(args.currents)
    else:
        i = scene.feed_currents()
        if i is None:
            raise ValueError("no --currents given and the scene does not store feed currents")
    if len(i) != len(scene.feeds):
        raise ValueError(f"scene has {len(scene.feeds)} feeds but {len(i)} currents were given")
    return i


def _emit(text, out):
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _json(obj):
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def cmd_solve(args):
    scene = load_scene(args.scene)
    state, op, *_ = solve_scene(scene, _currents(args, scene))
    write_state(state, args.out or "/dev/stdout")
    print(f"solved {len(scene.elements)} elements, cond(K) ~ {op.cond:.3g}", file=sys.stderr)


def cmd_pattern(args):
    scene = load_scene(args.scene)
    state, *_ = solve_scene(scene, _currents(args, scene))
    grid = radiation_pattern(scene, state, parse_grid(args.grid), parse_distance(args.distance))
    write_pattern(grid, args.out or "/dev/stdout")


def cmd_impedance(args):
    scene = load_scene(args.scene)
    rows = []
    for f in parse_freqs(args.freqs):
        sc = scene.with_frequency(f)
        _, op, exc, inter = solve_scene(sc, np.zeros(len(sc.feeds)))
        rows.append((f, input_impedance(sc, inter, op, exc).Z))
    write_impedance_sweep(rows, args.out or "/dev/stdout")


def cmd_power(args):
    scene = load_scene(args.scene)
    i = _currents(args, scene)
    state, op, exc, inter = solve_scene(scene, i)
    pb = power_balance(scene, inter, state, op)
    Z = input_impedance(scene, inter, op, exc)
    _emit(_json({"p_sup_w": pb.p_sup, "p_rad_w": pb.p_rad, "slack_w": pb.slack,
                 "p_tot_w": accepted_power(Z, i)}), args.out)


def cmd_retrieve(args):
    omega = 2 * np.pi * args.freq
    r = retrieve_polarizabilities(read_field_grid(args.grid0), read_field_grid(args.grid90),
                                  complex(args.h0), complex(args.e0), omega)
    c = lambda z: [float(np.real(z)), float(np.imag(z))]
    _emit(_json({"A": [[c(r.A[0, 0]), c(r.A[0, 1])], [c(r.A[1, 0]), c(r.A[1, 1])]],
                 "alpha_e": c(r.alpha_e), "asymmetry": r.asymmetry}), args.out)
    if r.asymmetry > 1e-3:
        print(f"warning: retrieved A is asymmetric by {r.asymmetry:.3g}", file=sys.stderr)


def cmd_compare(args):
    eps_pat, eps_int = pattern_metrics(read_pattern(args.a), read_pattern(args.b))
    _emit(_json({"eps_pat": eps_pat, "eps_int": eps_int}), args.out)


def validation_report(scene, currents=None):
    """List of (check, passed, detail)."""
    out = []
    for v in validate_feasibility(scene):
        out.append((v.kind, False, str(v)))
    k, h = scene.k, scene.h
    for n, pol in enumerate(scene_polarizabilities(scene)):
        rep = audit_passivity(pol.A, pol.alpha_e, k, h)
        out.append((f"Passivity[{n}]", rep.passed, str(rep)))
    if scene.feeds:
        i = np.ones(len(scene.feeds), complex) if currents is None else currents
        state, op, exc, inter = solve_scene(scene, i)
        pb = power_balance(scene, inter, state, op)
        out.append(("PowerBalance", pb.passive, f"P_sup={pb.p_sup:.6g} W, P_rad={pb.p_rad:.6g} W"))
        Z = input_impedance(scene, inter, op, exc).Z
        asym = np.abs(Z - Z.T).max() / max(np.abs(Z).max(), 1e-300)
        out.append(("Reciprocity", asym <= 1e-8, f"max|Z - Z^T|/max|Z| = {asym:.3g}"))
        ev = np.linalg.eigvalsh(0.5 * (Z + Z.conj().T))
        out.append(("AcceptedPowerPD", ev[0] > 0, f"min eig Re Z = {ev[0]:.6g} ohm"))
    return out


def cmd_validate(args):
    scene = load_scene(args.scene)
    i = parse_currents(args.currents) if args.currents else scene.feed_currents()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        report = validation_report(scene, i)
    _emit(_json([{"check": c, "passed": bool(ok), "detail": d} for c, ok, d in report]), args.out)
    bad = [r for r in report if not r[1]]
    for c, ok, d in report:
        print(f"{'PASS' if ok else 'FAIL'} {c}: {d}", file=sys.stderr)
    if bad:
        raise ValidationFailed(", ".join(c for c, *_ in bad))


def cmd_design(args):
    template = load_scene(args.scene)
    spec = load_design_spec(args.spec)
    if not args.out:
        raise ValueError("design needs --out DIR")
    res = design_run(spec, template, args.seed, workers=args.workers)
    write_design_result(res, args.out)
    print(f"gamma*={res.gamma_star:g}  G_min={res.g_min_dbi:.3f} dBi  G_max={res.g_max_dbi:.3f} dBi",
          file=sys.stderr)


def build_parser():
    p = argparse.ArgumentParser(prog="ppwcd", description="Coupled-dipole model of PPW-fed metasurface antennas")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_, scene=True, currents=False):
        s = sub.add_parser(name, help=help_)
        if scene:
            s.add_argument("--scene", required=True)
        if currents:
            s.add_argument("--currents", help="comma list of complex feed currents, e.g. 1+0j,0.5-0.2j")
        s.add_argument("--out")
        s.set_defaults(func=fn)
        return s

    add("solve", cmd_solve, "dipole moments CSV", currents=True)
    s = add("pattern", cmd_pattern, "radiation pattern CSV", currents=True)
    s.add_argument("--distance", default="ff", help="observation radius in m, or ff")
    s.add_argument("--grid", default="91x360", help="NTHETAxNPHI over the upper hemisphere")
    s = add("impedance", cmd_impedance, "input impedance sweep CSV")
    s.add_argument("--freqs", required=True, help="start:stop:n in Hz")
    add("power", cmd_power, "supplied/radiated/accepted power JSON", currents=True)
    s = add("retrieve", cmd_retrieve, "polarizabilities from two aperture field grids", scene=False)
    s.add_argument("--grid0", required=True)
    s.add_argument("--grid90", required=True)
    s.add_argument("--freq", type=float, required=True)
    s.add_argument("--h0", required=True, help="incident H_x at the aperture, complex A/m")
    s.add_argument("--e0", required=True, help="incident E_z at the aperture, complex V/m")
    s = add("compare", cmd_compare, "eps_pat and eps_int between two pattern CSVs", scene=False)
    s.add_argument("a")
    s.add_argument("b")
    add("validate", cmd_validate, "feasibility, passivity and power checks", currents=True)
    s = add("design", cmd_design, "successive-halving layout design")
    s.add_argument("--spec", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--workers", type=int)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except ValidationFailed as exc:
        print(f"validation failed: {exc}", file=sys.stderr)
        return 1
    except NUMERICAL as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    except (ValueError, KeyError, TypeError, OSError, GeometryError, SaturationError) as exc:
        print(f"bad input: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
