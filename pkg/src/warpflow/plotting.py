"""Figures for the command-line reports (Agg backend, files only)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return str(path)


def plot_profiles(path, gamma, series, labels, ylabel, logx=True, title=None):
    """Overlay several fields over gamma."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for y, lab in zip(series, labels):
        ax.plot(gamma, y, label=lab)
    if logx:
        ax.set_xscale("log")
    ax.set_xlabel("gamma")
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_spectrum(path, k, b2_lambda, b2_h):
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot(k, b2_lambda, "o-", label="B^2 lambda_k")
    ax.plot(k, b2_h, "s--", label="B^2 h_j")
    ax.axhline(0.0, color="0.6", lw=0.8)
    ax.set_xlabel("index")
    ax.set_ylabel("eigenvalue")
    ax.legend()
    return _save(fig, path)


def plot_violations(path, names, fractions):
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar(range(len(names)), 100.0 * np.asarray(fractions))
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=60, ha="right", fontsize=7)
    ax.set_ylabel("sign violations [%]")
    return _save(fig, path)


def plot_residual(path, X, T, R, title):
    """Residual of one barrier over its (x, tau) sample grid."""
    fig, ax = plt.subplots(figsize=(6, 4))
    mag = np.log10(np.abs(R) + 1e-300)
    im = ax.pcolormesh(X, T, mag, shading="auto")
    ax.set_xscale("log")
    ax.set_xlabel("x")
    ax.set_ylabel("tau")
    ax.set_title(title, fontsize=9)
    fig.colorbar(im, ax=ax, label="log10 |residual|")
    return _save(fig, path)


def plot_series(path, t, series, labels, ylabel, logy=True):
    fig, ax = plt.subplots(figsize=(6, 4))
    for y, lab in zip(series, labels):
        ax.plot(t, y, "o-", ms=3, label=lab)
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel("time")
    ax.set_ylabel(ylabel)
    ax.legend(fontsize=8)
    return _save(fig, path)
