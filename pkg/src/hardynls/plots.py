"""Figures for the CLI reports.  Everything renders to files with the Agg backend."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed metadata keeps PNG bytes stable across runs
_META = {"Software": None}


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_META)
    plt.close(fig)
    return path


def profile_figure(profile, path) -> Path:
    r, Q = profile.r, profile.Q
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.6))
    ax1.loglog(r, Q, lw=1.2)
    ax1.set_xlabel("r")
    ax1.set_ylabel("Q(r)")
    ax1.set_title(f"b0 = {profile.b0:.10g}")
    ax2.plot(r, profile.Q1, lw=1.2, label="Q1")
    ax2.plot(r, Q, lw=1.0, ls="--", label="Q")
    ax2.set_xlim(0, min(10.0, r[-1]))
    ax2.set_ylim(-2, max(3.0, float(Q[np.searchsorted(r, 0.05)])))
    ax2.axhline(0, color="k", lw=0.5)
    ax2.set_xlabel("r")
    ax2.legend()
    return _save(fig, Path(path))


def scan_figure(entries, path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.2))
    colors = {"Splus": "tab:blue", "Sminus": "tab:red"}
    for e in entries:
        y = e.classification.r_event if e.classification and e.classification.r_event else np.nan
        ax.semilogx(e.b, y, "o", ms=3, color=colors.get(e.tag, "tab:gray"))
    ax.set_xlabel("b")
    ax.set_ylabel("event radius")
    ax.set_title("blue: q_r = 0 first, red: q = 0 first")
    return _save(fig, Path(path))


def spectrum_figure(report, profile, path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.6))
    d = report.dichotomy
    r = profile.r
    ax.plot(r, d.v1, label="V+ real part")
    ax.plot(r, d.v2, label="V+ imaginary part")
    ax.set_xscale("log")
    ax.set_xlabel("r")
    ax.set_title(f"e0 = {report.e0:.8g}")
    ax.legend()
    return _save(fig, Path(path))


def run_figure(result, path, e0=None) -> Path:
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.6))
    ok = result.dist > 0
    ax1.semilogy(result.t[ok], result.dist[ok], lw=1.2, label="d(u)")
    if e0 is not None and ok.any():
        t0, d0 = result.t[ok][0], result.dist[ok][0]
        sgn = 1.0 if result.config.direction.startswith("unstable") else -1.0
        ax1.semilogy(result.t, d0 * np.exp(sgn * e0 * (result.t - t0)), "k:", lw=1, label="rate e0")
    ax1.set_xlabel("t")
    ax1.legend()
    ax2.plot(result.t, result.alpha, label="alpha")
    ax2.plot(result.t, result.theta, label="theta")
    ax2.set_xlabel("t")
    ax2.legend()
    return _save(fig, Path(path))


def virial_figure(result, path) -> Path:
    from .nls_sim import signed_gap

    t, vtt = result.virial().second_difference()
    cfg = result.config
    pred = ((2 * cfg.p * cfg.d - 8) * signed_gap(result) + result.AR)[1:-1]
    fig, ax = plt.subplots(figsize=(6, 3.6))
    ax.plot(t, vtt, lw=1.2, label="second difference of V_R")
    ax.plot(t, pred, "--", lw=1.2, label="(2pd-8) d + A_R")
    ax.set_xlabel("t")
    ax.legend()
    return _save(fig, Path(path))
