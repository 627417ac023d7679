"""Command-line front end.

Every command writes its outputs, plus the resolved ``config.json``, into
``<out>/<command>/``.  ``--out`` defaults to ``$HARDYNLS_OUTPUT`` or
``./hardynls-out``.  Values in a ``--config`` JSON file override flags.

Exit codes: 0 success, 2 invalid input, 3 convergence failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import groundstate as gs
from . import nls_sim, shooting, spectral
from .groundstate import _fmt
from .ode import Params, ParamsError

log = logging.getLogger("hardynls")

EXIT_OK, EXIT_INVALID, EXIT_CONVERGENCE, EXIT_IO = 0, 2, 3, 4
ENV_OUT = "HARDYNLS_OUTPUT"


class ConfigError(ValueError):
    pass


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--d", type=int, default=3)
    p.add_argument("--p", type=float, default=2.0)
    p.add_argument("--a", type=float, default=-0.1)
    p.add_argument("--n", type=int, default=8001, help="grid nodes")
    p.add_argument("--r-max", type=float, default=30.0)
    p.add_argument("--out", default=None, help=f"output root (default ${ENV_OUT} or ./hardynls-out)")
    p.add_argument("--config", default=None, help="JSON file whose keys override flags")
    p.add_argument("--plot", action="store_true", help="also render PNG figures")


def _profile_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--profile", default=None,
                   help="saved profile (path without extension); computed when omitted")
    p.add_argument("--bracket", type=float, nargs=2, default=(0.1, 10.0))
    p.add_argument("--rtol", type=float, default=1e-12)


def _run_flags(p: argparse.ArgumentParser, direction: str, T: float) -> None:
    p.add_argument("--direction", default=direction, choices=("none",) + nls_sim.DIRECTIONS)
    p.add_argument("--delta", type=float, default=1e-3)
    p.add_argument("--T", type=float, default=T)
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--R", type=float, default=20.0)
    p.add_argument("--record-every", type=int, default=10)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hardynls", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ground-state", help="shoot for b0 and write the profile")
    _common(p)
    _profile_flags(p)
    p.add_argument("--tol-b", type=float, default=0.0)

    p = sub.add_parser("classify-scan", help="classify a log-spaced grid of b")
    _common(p)
    p.add_argument("--b-min", type=float, default=0.1)
    p.add_argument("--b-max", type=float, default=10.0)
    p.add_argument("--n-b", type=int, default=200)
    p.add_argument("--rtol", type=float, default=1e-10)
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("spectrum", help="spectra of L1, L2 and the pair ±e0")
    _common(p)
    _profile_flags(p)
    p.add_argument("--k", type=int, default=3)

    p = sub.add_parser("evolve", help="time evolution near Q")
    _common(p)
    _profile_flags(p)
    _run_flags(p, "none", 1.0)
    p.add_argument("--gnuplot", action="store_true", help="also write a gnuplot script")

    p = sub.add_parser("virial-check", help="virial identity on a perturbed run")
    _common(p)
    _profile_flags(p)
    _run_flags(p, "unstable_minus", 1.0)
    p.add_argument("--min-dist", type=float, default=1e-6)

    p = sub.add_parser("gn-check", help="sharpness of the Gagliardo-Nirenberg constant")
    _common(p)
    _profile_flags(p)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--family-tol", type=float, default=1e-8,
                   help="allowed relative error of J along the scaling family")
    return parser


def resolve_config(args: argparse.Namespace) -> dict:
    cfg = {k: v for k, v in vars(args).items() if k not in ("config", "verbose")}
    if isinstance(cfg.get("bracket"), tuple):
        cfg["bracket"] = list(cfg["bracket"])
    if args.config:
        try:
            override = json.loads(Path(args.config).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
        if not isinstance(override, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = sorted(set(k.replace("-", "_") for k in override) - set(cfg))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        for k, v in override.items():
            cfg[k.replace("-", "_")] = v
    if cfg.get("out") is None:
        cfg["out"] = os.environ.get(ENV_OUT, "hardynls-out")
    return cfg


def _params(cfg: dict) -> Params:
    return Params(int(cfg["d"]), float(cfg["p"]), float(cfg["a"]))


def _grid_spec(cfg: dict) -> dict:
    return {"n": int(cfg["n"]), "r_max": float(cfg["r_max"])}


def _outdir(cfg: dict) -> Path:
    out = Path(cfg["out"]) / cfg["command"]
    out.mkdir(parents=True, exist_ok=True)
    (out / "error.json").unlink(missing_ok=True)
    (out / "config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")
    return out


def _write_json(path: Path, data) -> Path:
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=float) + "\n")
    return path


def _profile(cfg: dict, params: Params) -> gs.GroundStateProfile:
    if cfg.get("profile"):
        path = Path(cfg["profile"])
        if not path.with_suffix(".csv").exists():
            raise FileNotFoundError(f"no profile at {path.with_suffix('.csv')}")
        prof = gs.load_profile(path)
        if prof.params != params:
            raise ConfigError(f"profile is for {prof.params.as_dict()}, config asks for {params.as_dict()}")
        return prof
    opts = shooting.ShootingOptions(rtol=float(cfg["rtol"]))
    return gs.solve_ground_state(params, tuple(cfg["bracket"]), _grid_spec(cfg), opts,
                                 float(cfg.get("tol_b", 0.0)))


def cmd_ground_state(cfg: dict) -> int:
    params = _params(cfg)
    out = _outdir(cfg)
    prof = _profile({**cfg, "profile": None}, params)
    gs.save_profile(prof, out / "profile")
    report = gs.monotonicity_report(prof)
    _write_json(out / "monotonicity.json", report)
    summary = {**prof.summary(), "seam_error": prof.seam_error, "r_match": prof.r_match,
               "monotonicity_passed": report["all_passed"]}
    _write_json(out / "summary.json", summary)
    for k in ("b0", "c0", "mass", "energy", "C_GN"):
        print(f"{k:>6} = {summary[k]:.15g}")
    if cfg["plot"]:
        from . import plots
        plots.profile_figure(prof, out / "profile.png")
    return EXIT_OK


def cmd_classify_scan(cfg: dict) -> int:
    params = _params(cfg)
    out = _outdir(cfg)
    n = int(cfg["n_b"])
    grid = np.geomspace(float(cfg["b_min"]), float(cfg["b_max"]), n) if n > 0 else np.array([])
    opts = shooting.ShootingOptions(rtol=float(cfg["rtol"]))
    entries = shooting.scan_bracket(grid, params, opts, workers=int(cfg["workers"]))
    lines = ["b,tag,r_event"]
    for e in entries:
        r_ev = e.classification.r_event if e.classification else None
        lines.append(f"{_fmt(e.b)},{e.tag},{'' if r_ev is None else _fmt(r_ev)}")
    (out / "scan.csv").write_text("\n".join(lines) + "\n")
    flips = shooting.tag_flips(entries)
    print(f"{len(entries)} points, {len(flips)} tag flip(s)")
    for i in flips:
        print(f"  flip between b = {entries[i].b:.10g} and {entries[i + 1].b:.10g}")
    if cfg["plot"] and entries:
        from . import plots
        plots.scan_figure(entries, out / "scan.png")
    return EXIT_OK


def cmd_spectrum(cfg: dict) -> int:
    params = _params(cfg)
    out = _outdir(cfg)
    prof = _profile(cfg, params)
    report = spectral.spectrum_report(prof, k=int(cfg["k"]))
    report.save(out)
    print(f"neg_count(L1) = {report.neg_count}")
    print(f"e0 = {report.e0:.12g}")
    for name, res in report.kernel_residuals.items():
        print(f"{name} residual = {res:.3e}")
    if cfg["plot"]:
        from . import plots
        plots.spectrum_figure(report, prof, out / "dichotomy.png")
    return EXIT_OK


def _run(cfg: dict, params: Params):
    params.require_dynamics()
    prof = _profile(cfg, params)
    model = nls_sim.build_model(prof)
    direction = cfg["direction"]
    if direction == "none" or float(cfg["delta"]) == 0:
        rc = nls_sim.RunConfig(params.d, params.p, params.a, float(cfg["dt"]), float(cfg["T"]),
                               0.0, "none", float(cfg["R"]), int(cfg["record_every"]))
        res = nls_sim.evolve(None, model, rc, v0=np.zeros(prof.r.shape, dtype=complex))
        return res, model, None
    dich = spectral.dichotomy_eigenpair(nls_sim.discrete_profile(prof, model))
    res = nls_sim.run_perturbed(direction, float(cfg["delta"]), float(cfg["T"]), model, dich,
                                float(cfg["dt"]), float(cfg["R"]), int(cfg["record_every"]))
    return res, model, dich


GNUPLOT = """set terminal pngcairo size 900,400
set output '{stem}.png'
set datafile separator ','
set multiplot layout 1,2
set logscale y
set xlabel 't'
plot '{stem}.csv' every ::1 using 1:4 with lines title 'd(u)'
unset logscale y
plot '{stem}.csv' every ::1 using 1:3 with lines title 'alpha', '' every ::1 using 1:2 with lines title 'theta'
unset multiplot
"""


def _run_summary(res, model, dich) -> dict:
    d = res.dist
    s = {
        "truncated": res.truncated,
        "message": res.message,
        "sign": res.sign,
        "t_end": float(res.t[-1]),
        "max_dist": float(d.max()),
        "mass_drift": float(np.ptp(res.mass) / res.mass[0]),
        "energy_drift": float(np.ptp(res.energy)),
        "max_orthogonality": float(np.nanmax(res.ortho)) if np.isfinite(res.ortho).any() else None,
    }
    if dich is not None:
        grow = res.config.direction.startswith("unstable")
        delta = res.config.delta
        lo, hi = (max(delta, d[0]), 0.1 * model.delta0) if grow else (delta, d[0])
        win = nls_sim.rate_window(res, lo, hi, grow)
        s["e0"] = dich.e0
        s["fit_window"] = list(win) if win else None
        if win:
            rate, amp, resid = nls_sim.fit_exponential_rate(res.t, d, win)
            s["rate"] = abs(rate)
            s["rate_over_e0"] = abs(rate) / dich.e0
            s["fit_residual"] = resid
    return s


def cmd_evolve(cfg: dict) -> int:
    params = _params(cfg)
    out = _outdir(cfg)
    res, model, dich = _run(cfg, params)
    stem = "run"
    res.save(out, stem)
    summary = _run_summary(res, model, dich)
    _write_json(out / "summary.json", summary)
    print(f"t_end = {summary['t_end']:.6g}  max d(u) = {summary['max_dist']:.3e}  "
          f"mass drift = {summary['mass_drift']:.2e}")
    if "rate" in summary:
        print(f"fitted rate = {summary['rate']:.6g}  (e0 = {summary['e0']:.6g})")
    if cfg.get("gnuplot"):
        (out / f"{stem}.gp").write_text(GNUPLOT.format(stem=stem))
    if cfg["plot"]:
        from . import plots
        plots.run_figure(res, out / f"{stem}.png", dich.e0 if dich else None)
    return EXIT_OK


def cmd_virial_check(cfg: dict) -> int:
    params = _params(cfg)
    out = _outdir(cfg)
    res, model, dich = _run(cfg, params)
    res.save(out, "run")
    rel, ratio = nls_sim.virial_identity_error(res, float(cfg["min_dist"]))
    report = {"R": res.config.R, "max_rel_error": rel, "max_AR_over_dist": ratio,
              "passed": bool(rel < 0.05 and ratio < 1e-3), "t_end": float(res.t[-1])}
    _write_json(out / "virial.json", report)
    print(f"virial identity: max relative error {rel:.3e}, max A_R/d {ratio:.3e}")
    if cfg["plot"]:
        from . import plots
        plots.virial_figure(res, out / "virial.png")
    return EXIT_OK


def cmd_gn_check(cfg: dict) -> int:
    params = _params(cfg)
    out = _outdir(cfg)
    prof = _profile(cfg, params)
    report = gs.gn_check(prof, int(cfg["trials"]), int(cfg["seed"]))
    report["passed"] = bool(report["violations"] == 0 and report["family_max"] < float(cfg["family_tol"]))
    _write_json(out / "gn_check.json", report)
    print(f"C_GN = {report['C_GN']:.12g}; max J/C_GN over {report['n_trials']} trials = "
          f"{report['max_ratio']:.6f}; family error {report['family_max']:.2e}")
    return EXIT_OK


COMMANDS = {
    "ground-state": cmd_ground_state,
    "classify-scan": cmd_classify_scan,
    "spectrum": cmd_spectrum,
    "evolve": cmd_evolve,
    "virial-check": cmd_virial_check,
    "gn-check": cmd_gn_check,
}

CONVERGENCE_ERRORS = (shooting.BracketError, shooting.IntegrationError, gs.SeamError,
                      nls_sim.StepError, np.linalg.LinAlgError, RuntimeError)


def _diagnostic(cfg: dict, exc: Exception, code: int) -> None:
    print(f"error: {exc}", file=sys.stderr)
    if cfg and cfg.get("out") and cfg.get("command"):
        try:
            out = Path(cfg["out"]) / cfg["command"]
            out.mkdir(parents=True, exist_ok=True)
            _write_json(out / "error.json", {"exit_code": code, "type": type(exc).__name__,
                                             "message": str(exc)})
        except OSError:
            pass


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    cfg: dict = {}
    try:
        cfg = resolve_config(args)
        return COMMANDS[cfg["command"]](cfg)
    except (ParamsError, ConfigError, ValueError, KeyError) as exc:
        if isinstance(exc, CONVERGENCE_ERRORS):
            _diagnostic(cfg, exc, EXIT_CONVERGENCE)
            return EXIT_CONVERGENCE
        _diagnostic(cfg, exc, EXIT_INVALID)
        return EXIT_INVALID
    except OSError as exc:
        _diagnostic(cfg, exc, EXIT_IO)
        return EXIT_IO
    except CONVERGENCE_ERRORS as exc:
        _diagnostic(cfg, exc, EXIT_CONVERGENCE)
        return EXIT_CONVERGENCE


if __name__ == "__main__":
    sys.exit(main())
