"""Command-line front end: bound sweeps, CPL tables, MLE benchmarks, probes and self-checks.

Every table command writes CSV preceded by a ``#`` metadata block.  Numbers are
printed with 17 significant digits and no timestamps, so identical inputs give
byte-identical files.

Settings come from (highest priority first) command-line flags, a TOML file
passed with ``--config``, and built-in defaults.  Unknown config keys are errors.
"""
from __future__ import annotations

import argparse
import csv
import io
import math
import sys
import warnings
from dataclasses import dataclass

import numpy as np

from . import __version__
from . import cpl as _cpl
from . import em_field as _em
from . import fim as _fim
from . import mle as _mle
from .errors import DipoleCrbError

try:  # Python >= 3.11
    import tomllib as _toml
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    import tomli as _toml

SNR_CONVENTIONS = ("2chi2", "chi2")   # SNR = 2|chi|^2/sigma^2  or  |chi|^2/sigma^2

# key -> (type, default); shared by flags and config files
COMMON = {
    "x_c": (float, 6.0),
    "y_c": (float, 0.0),
    "z_c": (float, 0.0),
    "orientation": ("vec3", (0.0, 0.0, 1.0)),
    "wavelength": (float, 0.01),
    "current": (float, 1.0),
    "dipole_length": (float, None),
    "impedance": (float, _em.Z0_FREE_SPACE),
    "snr_db": (float, None),
    "snr_convention": (str, "2chi2"),
    "sigma2": (float, None),
    "rel_tol": (float, 1e-9),
    "max_cells": (int, 1_000_000),
}

COMMAND_KEYS = {
    "crb-sweep": {"sides": ("floats", [0.5, 1, 2, 3, 5, 10, 20])},
    "crb-map": {"side": (float, 3.0), "y_values": ("floats", None), "z_values": ("floats", None)},
    "crb-distance": {"side": (float, 3.0), "x_values": ("floats", [2, 4, 6, 8, 10, 15, 20]),
                     "wavelengths": ("floats", [0.1, 0.01])},
    "cpl-table": {"rhos": ("floats", [0.1, 0.5, 1, 2, 5, 10, 100, 1000])},
    "mle-benchmark": {"sides": ("floats", [1, 2, 4]),
                      "estimators": ("strs", ["analytic", "hu-scalar", "planar"]),
                      "orientation_known": (str, "yes"), "trials": (int, 200),
                      "seed": (int, None), "half_width": (float, 1.0),
                      "receiver_length": (float, None), "workers": (int, 1),
                      "coarse": ("ints", [9, 9, 9])},
    "field-probe": {"point": ("floats", [0.0, 0.0])},
    "validate": {},
}


class ConfigError(DipoleCrbError, ValueError):
    pass


# --- config handling ---

def _coerce(key, kind, value):
    try:
        if kind == "vec3":
            v = tuple(float(x) for x in value)
            if len(v) != 3:
                raise ValueError
            return v
        if kind == "floats":
            return [float(x) for x in value]
        if kind == "ints":
            return [int(x) for x in value]
        if kind == "strs":
            return [str(x) for x in value]
        return kind(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: cannot interpret {value!r} as {getattr(kind, '__name__', kind)}")


def load_config_file(path) -> dict:
    with open(path, "rb") as fh:
        data = _toml.load(fh)
    flat = {}
    for k, v in data.items():
        if isinstance(v, dict):        # [section] tables are just grouping
            flat.update(v)
        else:
            flat[k] = v
    return {k.replace("-", "_"): v for k, v in flat.items()}


def resolve(command: str, args: argparse.Namespace) -> dict:
    spec = dict(COMMON)
    spec.update(COMMAND_KEYS[command])
    file_vals = load_config_file(args.config) if getattr(args, "config", None) else {}
    unknown = sorted(set(file_vals) - set(spec))
    if unknown:
        raise ConfigError(f"unknown config key(s) for {command}: {', '.join(unknown)}")
    cfg = {}
    for key, (kind, default) in spec.items():
        flag = getattr(args, key, None)
        if flag is not None:
            cfg[key] = _coerce(key, kind, flag)
        elif key in file_vals:
            cfg[key] = _coerce(key, kind, file_vals[key])
        else:
            cfg[key] = default
    _validate(command, cfg)
    return cfg


def _validate(command, cfg):
    if cfg["snr_convention"] not in SNR_CONVENTIONS:
        raise ConfigError(f"snr_convention must be one of {SNR_CONVENTIONS}")
    if (cfg["snr_db"] is None) == (cfg["sigma2"] is None):
        if cfg["snr_db"] is None:
            cfg["snr_db"] = 10.0     # default when neither is given
        else:
            raise ConfigError("give either snr_db or sigma2, not both")
    if cfg["sigma2"] is not None and not cfg["sigma2"] > 0:
        raise ConfigError("sigma2 must be > 0")
    if cfg["x_c"] <= 0:
        raise ConfigError("x_c must be > 0 (source in front of the surface)")
    if cfg["wavelength"] <= 0:
        raise ConfigError("wavelength must be > 0")
    for key in ("sides", "x_values", "rhos"):
        if key in cfg:
            _check_sweep(key, cfg[key])
    if "wavelengths" in cfg and (not cfg["wavelengths"] or min(cfg["wavelengths"]) <= 0):
        raise ConfigError("wavelengths must be a non-empty list of positive values")
    for key in ("y_values", "z_values"):
        if cfg.get(key) is not None:
            _check_sweep(key, cfg[key], positive=False)
    if command == "mle-benchmark":
        if cfg["seed"] is None:
            raise ConfigError("mle-benchmark requires --seed")
        if cfg["trials"] < 1:
            raise ConfigError("trials must be >= 1")
        if cfg["orientation_known"] not in ("yes", "no", "both"):
            raise ConfigError("orientation_known must be yes, no or both")
        for e in cfg["estimators"]:
            _mle.EstimatorKind(e)
        if len(cfg["coarse"]) != 3 or min(cfg["coarse"]) < 2:
            raise ConfigError("coarse needs three counts >= 2")


def _check_sweep(key, values, positive=True):
    if not values:
        raise ConfigError(f"{key} must be non-empty")
    if any(b <= a for a, b in zip(values, values[1:])):
        raise ConfigError(f"{key} must be strictly increasing")
    if positive and values[0] <= 0:
        raise ConfigError(f"{key} must be positive")


# --- helpers ---

def source_from(cfg, position=None, wavelength=None) -> _em.DipoleSource:
    return _em.DipoleSource.oriented(
        position or (cfg["x_c"], cfg["y_c"], cfg["z_c"]), cfg["orientation"],
        wavelength=wavelength or cfg["wavelength"], current=cfg["current"],
        length=cfg["dipole_length"], impedance=cfg["impedance"])


def sigma2_for(cfg, source) -> float:
    """Noise power from the config; snr_db is read under the chosen convention."""
    if cfg["sigma2"] is not None:
        return cfg["sigma2"]
    snr = 10 ** (cfg["snr_db"] / 10)
    factor = 2.0 if cfg["snr_convention"] == "2chi2" else 1.0
    return factor * source.chi ** 2 / snr


def snr_pair(source, sigma2):
    return 2 * source.chi ** 2 / sigma2, source.chi ** 2 / sigma2


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


@dataclass
class Table:
    columns: list
    rows: list
    meta: dict

    def render(self) -> str:
        buf = io.StringIO()
        for k, v in self.meta.items():
            buf.write(f"# {k}: {fmt(v)}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for row in self.rows:
            w.writerow([fmt(v) for v in row])
        return buf.getvalue()


def base_meta(command, cfg, source, sigma2, **extra):
    s2, s1 = snr_pair(source, sigma2)
    meta = {
        "tool": f"dipole-crb {__version__}",
        "command": command,
        "snr_convention_input": cfg["snr_convention"],
        "snr_2chi2_over_sigma2_db": 10 * math.log10(s2),
        "snr_chi2_over_sigma2_db": 10 * math.log10(s1),
        "sigma2_V2": sigma2,
        "chi_V": source.chi,
        "wavelength_m": source.wavelength,
        "orientation": " ".join(fmt(c) for c in source.orientation),
        "impedance_ohm": source.impedance,
    }
    meta.update(extra)
    return meta


def _fim_for(cfg, source, side, sigma2):
    return _fim.assemble_fim(source, _em.ObservationSurface(side), sigma2,
                             rel_tol=cfg["rel_tol"], max_cells=cfg["max_cells"])


# --- commands ---

def cmd_crb_sweep(cfg) -> Table:
    src = source_from(cfg)
    sigma2 = sigma2_for(cfg, src)
    snr = 2 * src.chi ** 2 / sigma2
    asym_x = math.sqrt(src.wavelength ** 2 / (3 * math.pi ** 3 * snr))
    rows = []
    for L in cfg["sides"]:
        r = _fim.crb_report(_fim_for(cfg, src, L, sigma2))
        rows.append([L, *r.rcrb_known, *r.rcrb_unknown, asym_x])
    cols = ["L_m", "rcrb_x_m", "rcrb_y_m", "rcrb_z_m", "rcrb_u_x_m", "rcrb_u_y_m", "rcrb_u_z_m",
            "asymptote_x_m"]
    return Table(cols, rows, base_meta("crb-sweep", cfg, src, sigma2, x_c_m=src.position[0]))


def cmd_crb_map(cfg) -> Table:
    L = cfg["side"]
    ys = cfg["y_values"] or list(np.linspace(-L, L, 9))
    zs = cfg["z_values"] or list(np.linspace(-L, L, 9))
    ref = source_from(cfg)
    sigma2 = sigma2_for(cfg, ref)
    vals = []
    for y in ys:
        for z in zs:
            src = ref.moved(position=(cfg["x_c"], y, z))
            vals.append((y, z, _fim.crb_unknown(_fim_for(cfg, src, L, sigma2))))
    cmin = np.min(np.array([v[2] for v in vals]), axis=0)
    rows = [[y, z, *np.sqrt(c), *(10 * np.log10(c / cmin))] for y, z, c in vals]
    cols = ["y_c_m", "z_c_m", "rcrb_u_x_m", "rcrb_u_y_m", "rcrb_u_z_m",
            "norm_x_db", "norm_y_db", "norm_z_db"]
    return Table(cols, rows, base_meta("crb-map", cfg, ref, sigma2, L_m=L, x_c_m=cfg["x_c"]))


def cmd_crb_distance(cfg) -> Table:
    rows = []
    ref = source_from(cfg)
    sigma2_ref = sigma2_for(cfg, ref)
    for lam in cfg["wavelengths"]:
        for x in cfg["x_values"]:
            src = source_from(cfg, position=(x, cfg["y_c"], cfg["z_c"]), wavelength=lam)
            sigma2 = sigma2_for(cfg, src)
            r = _fim.crb_report(_fim_for(cfg, src, cfg["side"], sigma2))
            rows.append([x, lam, *r.rcrb_known, *r.rcrb_unknown])
    cols = ["x_c_m", "wavelength_m", "rcrb_x_m", "rcrb_y_m", "rcrb_z_m",
            "rcrb_u_x_m", "rcrb_u_y_m", "rcrb_u_z_m"]
    meta = base_meta("crb-distance", cfg, ref, sigma2_ref, L_m=cfg["side"],
                     note="sigma2 recomputed per wavelength at fixed SNR")
    return Table(cols, rows, meta)


def cmd_cpl_table(cfg) -> Table:
    src = source_from(cfg)
    sigma2 = sigma2_for(cfg, src)
    snr = 2 * src.chi ** 2 / sigma2
    x_c, lam = cfg["x_c"], src.wavelength
    rows = []
    for rho in cfg["rhos"]:
        I = _cpl.script_integrals(rho)
        p = _cpl.CplParams(rho, 2 * math.pi / lam, x_c, snr)
        fcc, ftt, ftc = _cpl.fim_blocks_cpl(p, I)
        rep = _cpl.crb_cpl(p, I)
        lb3, ub3 = _cpl.i3_bounds(rho)
        ft = _cpl.ft_element_bounds(rho)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", _cpl.HighFrequencyWarning)
            hf = _cpl.crb_highfreq(p, I)
        asym = _cpl.crb_asymptotic(lam, snr, rho)
        rows.append([rho, *I.as_tuple(), I.I1_quadrature, abs(I.I1 - I.I1_quadrature),
                     lb3, ub3, *ft, *fcc, *ftt, ftc[0, 2], ftc[2, 0],
                     *rep.crb_known, *rep.crb_unknown, *hf, *asym])
    cols = (["rho"] + [f"I{n}" for n in range(1, 11)] + ["I1_quadrature", "I1_abs_diff",
            "I3_lb", "I3_ub", "I7_lb", "I7_ub", "I8_lb", "I8_ub",
            "Fcc_11_per_m2", "Fcc_22_per_m2", "Fcc_33_per_m2", "Ftt_11", "Ftt_22", "Ftt_33",
            "Ftc_13_per_m", "Ftc_31_per_m",
            "crb_x_m2", "crb_y_m2", "crb_z_m2", "crb_u_x_m2", "crb_u_y_m2", "crb_u_z_m2",
            "crb_hf_x_m2", "crb_hf_y_m2", "crb_asym_x_m2", "crb_asym_y_m2", "crb_asym_z_m2"])
    return Table(cols, rows, base_meta("cpl-table", cfg, src, sigma2, x_c_m=x_c))


def cmd_mle_benchmark(cfg) -> Table:
    src = source_from(cfg)
    sigma2 = sigma2_for(cfg, src)
    known_opts = {"yes": [True], "no": [False], "both": [True, False]}[cfg["orientation_known"]]
    rows = []
    for L in cfg["sides"]:
        sc = _mle.Scenario(src, L, sigma2, cfg["receiver_length"])
        grid = sc.grid()
        full = _fim.crb_report(_fim_for(cfg, src, L, sigma2))
        crbz = _mle.crb_z_component(src, grid, sigma2)
        for est in cfg["estimators"]:
            kind = _mle.EstimatorKind(est)
            for known in (known_opts if kind is _mle.EstimatorKind.ANALYTIC else [True]):
                mc = _mle.MleConfig(estimator=kind, orientation_known=known,
                                    half_width=cfg["half_width"], trials=cfg["trials"],
                                    seed=cfg["seed"], coarse=tuple(cfg["coarse"]),
                                    workers=cfg["workers"])
                res = _mle.monte_carlo(mc, sc)
                bound_z = crbz.rcrb_known if known else crbz.rcrb_unknown
                bound = full.rcrb_known if known else full.rcrb_unknown
                rows.append([L, kind.value, known, *res.rmse, *res.rmse_band[0], *res.rmse_band[1],
                             *bound, *bound_z, res.trials, res.failures, res.search_misses,
                             cfg["seed"]])
    cols = ["L_m", "estimator", "orientation_known", "rmse_x_m", "rmse_y_m", "rmse_z_m",
            "rmse_lo_x_m", "rmse_lo_y_m", "rmse_lo_z_m", "rmse_hi_x_m", "rmse_hi_y_m", "rmse_hi_z_m",
            "sqrt_crb_x_m", "sqrt_crb_y_m", "sqrt_crb_z_m",
            "sqrt_crbz_grid_x_m", "sqrt_crbz_grid_y_m", "sqrt_crbz_grid_z_m",
            "trials", "failures", "search_misses", "seed"]
    meta = base_meta("mle-benchmark", cfg, src, sigma2, seed=cfg["seed"],
                     x_c_m=src.position[0], half_width_m=cfg["half_width"],
                     rmse_band="approx. 2-sigma Monte-Carlo band")
    return Table(cols, rows, meta)


def cmd_field_probe(cfg) -> Table:
    src = source_from(cfg)
    y, z = cfg["point"]
    coords = _em.spherical_from_point(src, y, z)
    rt, rp = _em.dipole_radiation_vector(src)
    fields = {
        "analytic": _em.analytic_field(src, y, z),
        "radiation-vector": _em.general_farfield(rt, rp, coords, src.k, src.impedance),
        "dyadic": _em.dyadic_green_field(src, y, z),
    }
    rows = []
    for name, e in fields.items():
        e = np.asarray(e).reshape(3)
        for comp, val in zip(("x", "y", "z"), e):
            rows.append([name, comp, val.real, val.imag])
    for name, val in (("hu-scalar", _em.hu_scalar_signal(src, y, z, beta=src.moment)),
                      ("planar", _em.planar_signal(src, y, z, amplitude=src.moment)),
                      ("fresnel", _em.fresnel_signal(src, y, z, amplitude=src.moment))):
        rows.append([name, "scalar", complex(val).real, complex(val).imag])
    sigma2 = sigma2_for(cfg, src)
    meta = base_meta("field-probe", cfg, src, sigma2, point_m=f"{fmt(y)} {fmt(z)}",
                     r_m=float(coords.r))
    return Table(["model", "component", "re_V_per_m", "im_V_per_m"], rows, meta)


def cmd_validate(cfg, stream=None) -> int:
    from .validation import run_all
    stream = sys.stdout if stream is None else stream
    results = run_all(rel_tol=cfg["rel_tol"])
    for r in results:
        print(r.line(), file=stream)
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed", file=stream)
    return 1 if failed else 0


COMMANDS = {
    "crb-sweep": cmd_crb_sweep,
    "crb-map": cmd_crb_map,
    "crb-distance": cmd_crb_distance,
    "cpl-table": cmd_cpl_table,
    "mle-benchmark": cmd_mle_benchmark,
    "field-probe": cmd_field_probe,
}


# --- argument parsing ---

def _add_common(p):
    g = p.add_argument_group("scenario")
    g.add_argument("--config", help="TOML file with settings (flags take precedence)")
    g.add_argument("--out", help="output CSV path (default: stdout)")
    g.add_argument("--x-c", dest="x_c", type=float, help="source distance x_C [m]")
    g.add_argument("--y-c", dest="y_c", type=float)
    g.add_argument("--z-c", dest="z_c", type=float)
    g.add_argument("--orientation", nargs=3, type=float, metavar=("TX", "TY", "TZ"))
    g.add_argument("--wavelength", type=float, help="[m]")
    g.add_argument("--current", type=float, help="I_in [A]")
    g.add_argument("--dipole-length", dest="dipole_length", type=float,
                   help="l_s [m], default wavelength/4")
    g.add_argument("--impedance", type=float, help="medium impedance [ohm]")
    n = g.add_mutually_exclusive_group()
    n.add_argument("--snr-db", dest="snr_db", type=float, help="SNR in dB (default 10)")
    n.add_argument("--sigma2", type=float, help="noise power [V^2]")
    g.add_argument("--snr-convention", dest="snr_convention", choices=SNR_CONVENTIONS,
                   help="how --snr-db is read: 2chi2 = 2|chi|^2/sigma^2 (default), chi2 = |chi|^2/sigma^2")
    g.add_argument("--rel-tol", dest="rel_tol", type=float, help="quadrature relative tolerance")
    g.add_argument("--max-cells", dest="max_cells", type=int)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dipole-crb", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("crb-sweep", help="RCRBs versus surface side length")
    _add_common(p)
    p.add_argument("--sides", nargs="+", type=float, help="side lengths L [m]")

    p = sub.add_parser("crb-map", help="RCRB_u over a grid of (y_C, z_C) offsets")
    _add_common(p)
    p.add_argument("--side", type=float)
    p.add_argument("--y-values", dest="y_values", nargs="+", type=float)
    p.add_argument("--z-values", dest="z_values", nargs="+", type=float)

    p = sub.add_parser("crb-distance", help="RCRBs versus x_C for several wavelengths")
    _add_common(p)
    p.add_argument("--side", type=float)
    p.add_argument("--x-values", dest="x_values", nargs="+", type=float)
    p.add_argument("--wavelengths", nargs="+", type=float)

    p = sub.add_parser("cpl-table", help="CPL integrals, closed-form entries and bounds per rho")
    _add_common(p)
    p.add_argument("--rhos", nargs="+", type=float)

    p = sub.add_parser("mle-benchmark", help="Monte-Carlo RMSE of the ML estimators")
    _add_common(p)
    p.add_argument("--seed", type=int, help="required, as a flag or in the config file")
    p.add_argument("--sides", nargs="+", type=float)
    p.add_argument("--estimators", nargs="+", choices=[k.value for k in _mle.EstimatorKind])
    p.add_argument("--orientation-known", dest="orientation_known", choices=("yes", "no", "both"))
    p.add_argument("--trials", type=int)
    p.add_argument("--half-width", dest="half_width", type=float,
                   help="search box half-width around the truth [m]")
    p.add_argument("--receiver-length", dest="receiver_length", type=float,
                   help="l_r [m], default wavelength/10")
    p.add_argument("--workers", type=int)
    p.add_argument("--coarse", nargs=3, type=int)

    p = sub.add_parser("field-probe", help="field of every model at one surface point")
    _add_common(p)
    p.add_argument("--point", nargs=2, type=float, metavar=("Y", "Z"))

    p = sub.add_parser("validate", help="run the self-check suite")
    _add_common(p)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        cfg = resolve(args.command, args)
        if args.command == "validate":
            return cmd_validate(cfg)
        text = COMMANDS[args.command](cfg).render()
    except (DipoleCrbError, ValueError, OSError) as exc:
        print(f"dipole-crb {args.command}: error: {exc}", file=sys.stderr)
        return 2
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
