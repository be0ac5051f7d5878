"""Command-line driver.

Every subcommand writes a ``manifest.json`` (the resolved configuration),
a JSON result file and, where it makes sense, CSV tables and PNG figures
into ``<out>/<subcommand>/``.  The output root comes from ``--out``, the
``WARPFLOW_OUT`` environment variable or ``./warpflow_out``.

Exit codes: 0 success, 1 invalid configuration, 2 numerical failure (or a
failed check).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import plotting
from .barriers import LEMMAS, reference_region, run_lemma
from .core_geometry import cone_constants, save_profile_csv, special_solution
from .diagnostics import fit_blowup, predicted_exponent, scalar_overlap_check, typeI_scalar_monitor
from .experiments import fixture_flow, linear_decay, oracle_suite, sine_cone_tracking
from .flow_engine import StepperConfig
from .initial_data import ModeCoefficients, assemble, fixture_region, project
from .spectral import alpha_k, b2_h, b2_lambda, exp_a, interlacing_index

log = logging.getLogger("warpflow")

OK, INVALID, NUMERICAL = 0, 1, 2


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    subcommand: str
    p: int = 5
    q: int = 5
    k: int = 4
    kmax: int = 6
    n_x: int = 200
    n_t: int = 50
    preset: str = "sine-cone"
    lemma: str = "all"
    direction: str = "zero"
    radius: float = 1.0
    eps0: float = 0.1
    tau0: float = 40.0
    tau_span: float = 3.0
    trajectory: str = ""
    T: float = float("nan")
    ctilde: float = 1.0
    seed: int = 0
    out: str = ""
    stepper: dict = field(default_factory=dict)

    def validate(self):
        if self.p < 2 or self.q < 2:
            raise ConfigError("p and q must be at least 2")
        if self.p + self.q < 10 and self.subcommand in ("spectra", "initdata"):
            raise ConfigError("the spectral theory needs p + q >= 10")
        if self.k < 0 or self.kmax < 0:
            raise ConfigError("k and kmax must be non-negative")
        if self.n_x < 2 or self.n_t < 2:
            raise ConfigError("sample grids need at least 2 points per axis")
        if self.lemma != "all" and self.lemma not in LEMMAS:
            raise ConfigError(f"unknown lemma {self.lemma!r}")
        if self.eps0 <= 0 or self.radius < 0:
            raise ConfigError("eps0 must be positive and radius non-negative")
        if self.tau_span <= 0:
            raise ConfigError("tau_span must be positive")
        try:
            StepperConfig(**self.stepper)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"stepper: {exc}") from exc


def read_config(path):
    """Flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _coerce(cfg_cls, key, value):
    if key.startswith("stepper."):
        return value
    template = cfg_cls.__dataclass_fields__.get(key)
    if template is None:
        raise ConfigError(f"unknown configuration key {key!r}")
    default = template.default
    if isinstance(default, bool):
        return str(value).lower() in ("1", "true", "yes")
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    return str(value)


def _stepper_value(v):
    for cast in (int, float):
        try:
            return cast(v)
        except ValueError:
            pass
    return None if v == "None" else v


def build_config(args):
    values = {}
    if args.config:
        values.update(read_config(args.config))
    for key, val in vars(args).items():
        if key in ("config", "func", "verbose") or val is None:
            continue
        values[key] = val
    stepper = {}
    kw = {}
    for key, val in values.items():
        if key.startswith("stepper."):
            stepper[key.split(".", 1)[1]] = _stepper_value(val)
        else:
            kw[key] = _coerce(RunConfig, key, val)
    cfg = RunConfig(stepper=stepper, **kw)
    cfg.validate()
    return cfg


def _outdir(cfg):
    root = cfg.out or os.environ.get("WARPFLOW_OUT", "warpflow_out")
    path = Path(root) / cfg.subcommand
    path.mkdir(parents=True, exist_ok=True)
    return path


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path, obj):
    Path(path).write_text(json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n")


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


# ---------------------------------------------------------------------------
# subcommands


def cmd_spectra(cfg, out):
    params = cone_constants(cfg.p, cfg.q)
    ks = list(range(cfg.kmax + 1))
    lam = [b2_lambda(params, k) for k in ks]
    h = [b2_h(params, k) for k in ks]
    result = {
        "p": cfg.p,
        "q": cfg.q,
        "exp_a": exp_a(params),
        "B2_lambda": lam,
        "B2_h": h,
        "alpha": [alpha_k(params, k) if v < 0 else None for k, v in zip(ks, lam)],
        "predicted_exponent": [predicted_exponent(params, k) if v < 0 else None for k, v in zip(ks, lam)],
    }
    write_json(out / "spectra.json", result)
    plotting.plot_spectrum(out / "spectrum.png", ks, lam, h)
    print(json.dumps(_clean({"B2_lambda": lam, "B2_h": h})))
    return OK


def cmd_barriers(cfg, out):
    names = LEMMAS if cfg.lemma == "all" else (cfg.lemma,)
    region = reference_region(cfg.p, cfg.q, cfg.k, tau0=cfg.tau0)
    reports = {}
    for name in names:
        reports[name] = run_lemma(name, cfg.p, cfg.q, cfg.k, region, cfg.n_x, cfg.n_t, strict=cfg.q >= 10)
        r = reports[name]
        print(f"{'PASS' if r.passed else 'FAIL'} {name}: violations {100 * r.violation_fraction:.2f}%")
    write_json(out / "barriers.json", {n: r.to_dict() for n, r in reports.items()})
    plotting.plot_violations(out / "violations.png", list(reports), [r.violation_fraction for r in reports.values()])
    return OK if all(r.passed for r in reports.values()) else NUMERICAL


def _coefficients(cfg, params):
    if cfg.direction == "zero":
        return ModeCoefficients.zero(params, cfg.k, cfg.eps0)
    if cfg.direction == "random":
        rng = np.random.default_rng(cfg.seed)
        d = rng.standard_normal(cfg.k + interlacing_index(params, cfg.k) + 1)
    else:
        d = np.array([float(v) for v in cfg.direction.split(",")])
    return ModeCoefficients.on_sphere(params, cfg.k, cfg.tau0, d, cfg.radius, cfg.eps0)


def cmd_initdata(cfg, out):
    params = cone_constants(cfg.p, cfg.q)
    region = fixture_region(cfg.p, cfg.q, cfg.k, cfg.eps0, tau0=cfg.tau0, tau1=cfg.tau0 + cfg.tau_span)
    coeffs = _coefficients(cfg, params)
    data = assemble(coeffs, params, region)
    pu, pz = project(data)
    E = math.exp(b2_lambda(params, cfg.k) * data.tau0)
    report = data.report()
    report["projection"] = {"p": pu, "q": pz, "error_relative_to_mode": float(np.max(np.abs(np.concatenate([pu - coeffs.p_vec, pz - coeffs.q_vec]))) / E)}
    write_json(out / "initdata.json", report)
    save_profile_csv(out / "profile.csv", data.profile, params)
    g = data.gamma
    plotting.plot_profiles(out / "fields.png", g, [np.abs(data.Ztilde) + 1e-300, np.abs(data.Utilde) + 1e-300], ["|Ztilde|", "|Utilde|"], "field")
    for which, m in data.membership.items():
        print(f"{'PASS' if m.passed else 'FAIL'} set {which}")
    return OK if data.passed else NUMERICAL


def cmd_simulate(cfg, out):
    params = cone_constants(cfg.p, cfg.q)
    if cfg.preset == "sine-cone":
        errs, orders, _ = sine_cone_tracking(cfg.p, cfg.q)
        result = {"errors": errs, "orders": orders}
        ok = errs[-1] < 1e-4 and min(orders) >= 2
        prof = special_solution("sine_cone", params, t=0.4 / (2 * (cfg.p + cfg.q)))
        plotting.plot_profiles(out / "sine_cone.png", prof.psi, [prof.z], ["z"], "z", logx=False)
    elif cfg.preset == "linear-mode":
        rate, expected, leak, _ = linear_decay(cfg.p, cfg.q, cfg.k)
        result = {"rate": rate, "expected": expected, "leakage": leak}
        ok = abs(rate / expected - 1) < 0.02 and leak < 1e-6
    elif cfg.preset == "fixture":
        run = fixture_flow(cfg.p, cfg.q, cfg.k, tau_span=cfg.tau_span)
        rec = run["record"]
        result = {
            "status": run["status"],
            "sturm_counts": run["sturm_counts"],
            "grads": run["grads"],
            "envelope": [list(e) for e in run["envelope"]],
            "record": rec.to_dict(),
        }
        ok = run["status"] == "ok"
        tau, rm, r = rec.arrays()
        T = run["data"].T
        t = T - np.exp(-tau)
        write_csv(out / "trajectory.csv", ["t", "tau", "max_abs_rm", "max_abs_r"], zip(t, tau, rm, r))
        plotting.plot_series(out / "curvature.png", tau, [rm, r], ["max|Rm|", "max|R|"], "curvature")
        result["T"] = T
        last = run["profiles"][-1]
        plotting.plot_profiles(out / "final_fields.png", last.gamma, [last.Z], ["Z"], "Z")
    else:
        raise ConfigError(f"unknown preset {cfg.preset!r}")
    write_json(out / "simulate.json", result)
    print(f"{'PASS' if ok else 'FAIL'} preset {cfg.preset}")
    return OK if ok else NUMERICAL


def _read_trajectory(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ConfigError(f"{path}: empty trajectory")
    cols = {k: np.array([float(r[k]) for r in rows]) for k in rows[0]}
    if "t" not in cols or "max_abs_rm" not in cols:
        raise ConfigError(f"{path}: need columns t and max_abs_rm")
    return cols


def cmd_diagnose(cfg, out):
    result = {}
    status = OK
    if cfg.trajectory:
        cols = _read_trajectory(cfg.trajectory)
        t, rm = cols["t"], cols["max_abs_rm"]
        try:
            fit = fit_blowup(t, rm)
            result.update({"T_est": fit.T, "exponent": fit.exponent, "stderr": fit.stderr, "type": fit.kind})
        except ValueError as exc:
            result["fit_error"] = str(exc)
            status = NUMERICAL
        T = cfg.T if math.isfinite(cfg.T) else result.get("T_est", float("nan"))
        if "max_abs_r" in cols and math.isfinite(T) and np.all(t < T):
            mon = typeI_scalar_monitor(t, cols["max_abs_r"], T)
            result["scalar_sup"] = mon["sup"]
            result["scalar_diverging"] = mon["diverging"]
            write_csv(out / "scalar_monitor.csv", ["t", "T_minus_t_R"], zip(t, mon["series"]))
        amps = sorted(c for c in cols if c.startswith("amp_"))
        rates = {}
        for c in amps:
            a = np.abs(cols[c])
            if np.all(a > 0):
                rates[c[4:]] = float(np.polyfit(t, np.log(a), 1)[0])
        result["mode_rates"] = rates
    params = cone_constants(cfg.p, cfg.q)
    if (cfg.p, cfg.q) == (5, 5):
        ups = np.geomspace(5.0, 1e3, 25)
        tab = scalar_overlap_check(params, cfg.ctilde, ups, cfg.tau0, cfg.k)
        keys = ["Upsilon", "x", "R_exact", "R_psi_form", "R_expansion", "ratio_exact", "typeI_ratio"]
        write_csv(out / "overlap.csv", keys, zip(*[tab[k] for k in keys]))
        result["overlap_max_deviation"] = float(np.max(np.abs(tab["ratio_exact"][tab["x"] <= 1e-2] - 1)))
    write_json(out / "diagnose.json", result)
    print(json.dumps(_clean(result), sort_keys=True))
    return status


def cmd_oracle(cfg, out):
    rows = oracle_suite()
    for name, ok, val in rows:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {val:.3e}")
    write_json(out / "oracle.json", {name: {"passed": ok, "value": val} for name, ok, val in rows})
    return OK if all(ok for _, ok, _ in rows) else NUMERICAL


COMMANDS = {
    "simulate": cmd_simulate,
    "spectra": cmd_spectra,
    "barriers": cmd_barriers,
    "initdata": cmd_initdata,
    "diagnose": cmd_diagnose,
    "oracle": cmd_oracle,
}


def make_parser():
    parser = argparse.ArgumentParser(prog="warpflow", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="flat key = value file; flags override it")
        sp.add_argument("--out", help="output root (default $WARPFLOW_OUT or ./warpflow_out)")
        sp.add_argument("--p", type=int)
        sp.add_argument("--q", type=int)
        sp.add_argument("--k", type=int)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--tau0", type=float)
        if name == "spectra":
            sp.add_argument("--kmax", type=int)
        if name == "barriers":
            sp.add_argument("--lemma", help="lemma name or 'all'")
            sp.add_argument("--n-x", dest="n_x", type=int)
            sp.add_argument("--n-t", dest="n_t", type=int)
        if name == "simulate":
            sp.add_argument("--preset", choices=["sine-cone", "linear-mode", "fixture"])
            sp.add_argument("--tau-span", dest="tau_span", type=float)
        if name == "initdata":
            sp.add_argument("--direction", help="'zero', 'random' or comma-separated components")
            sp.add_argument("--radius", type=float)
            sp.add_argument("--eps0", type=float)
        if name == "diagnose":
            sp.add_argument("--trajectory", help="CSV with columns t, max_abs_rm[, max_abs_r, amp_*]")
            sp.add_argument("--T", type=float, help="known singular time for the scalar monitor")
            sp.add_argument("--ctilde", type=float)
    return parser


def main(argv=None):
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return INVALID if exc.code else OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = build_config(args)
    except (ConfigError, ValueError, OSError) as exc:
        parser.print_usage(sys.stderr)
        print(f"warpflow: error: {exc}", file=sys.stderr)
        return INVALID
    out = _outdir(cfg)
    write_json(out / "manifest.json", asdict(cfg))
    log.info("writing to %s", out)
    try:
        return COMMANDS[cfg.subcommand](cfg, out)
    except ValueError as exc:
        print(f"warpflow: error: {exc}", file=sys.stderr)
        return INVALID
    except (FloatingPointError, ArithmeticError, RuntimeError) as exc:
        print(f"warpflow: numerical failure: {exc}", file=sys.stderr)
        return NUMERICAL
