"""Report figures (opt-in): renders analytic tables and experiment
summaries to PNG files next to the delimited output.

Matplotlib is imported lazily with the Agg backend so that importing the
package never touches a display, and environments without matplotlib only
fail if figures are actually requested.
"""

from __future__ import annotations

import math
import os

import numpy as np


def _plt():
    import matplotlib
    matplotlib.use("Agg", force=False)
    import matplotlib.pyplot as plt
    return plt


def apply_style(ax, xlabel="", ylabel="", title=""):
    ax.grid(True, which="both", alpha=0.3)
    if xlabel:
        ax.set_xlabel(xlabel)
    if ylabel:
        ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)


def _save(fig, out_dir, name):
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, name)
    fig.savefig(path, dpi=130, bbox_inches="tight")
    import matplotlib.pyplot as plt
    plt.close(fig)
    return path


def fig_moment_profile(table, out_dir, name="analytics.png"):
    """Descent-time profile: e_inf and its last-step share along levels."""
    plt = _plt()
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9.6, 3.8))
    lev = table.levels
    pos = lev > 0
    if np.all(np.isnan(table.log_e)):
        # tail not certified: fall back to the per-step columns
        ax1.plot(lev[pos], table.log_m[pos] / math.log(10),
                 label="log10 E[one-step time]")
        ax1.plot(lev[pos], table.log_v[pos] / (2 * math.log(10)),
                 label="log10 one-step sd", linestyle="--")
        ax2.plot(lev[pos], np.exp(table.log_v[pos] - 2 * table.log_m[pos]))
        ax2.set_yscale("log")
        apply_style(ax2, "level n", "per-step var/mean^2")
    else:
        ax1.plot(lev[pos], table.log_e[pos] / math.log(10),
                 label="log10 E[T from inf]")
        ax1.plot(lev[pos], table.log_var[pos] / (2 * math.log(10)),
                 label="log10 sd", linestyle="--")
        ax2.plot(lev[pos], table.r[pos])
        apply_style(ax2, "level n", "last-step share r_n")
    ax1.set_xscale("log")
    apply_style(ax1, "level n", "log10 time", table.model.describe())
    ax1.legend(fontsize=8)
    ax2.set_xscale("log")
    return _save(fig, out_dir, name)


def fig_laplace(sol, out_dir, name="laplace.png"):
    """Fixed-point transform and its self-consistency residual."""
    plt = _plt()
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9.6, 3.8))
    ax1.semilogx(sol.a_grid, sol.G)
    ax1.semilogx(sol.a_grid, 1.0 / (1.0 + sol.a_grid), linestyle=":",
                 label="1/(1+a)")
    apply_style(ax1, "a", "G(a)",
                f"fixed point  l={sol.l:g}  alpha={sol.alpha:g}")
    ax1.legend(fontsize=8)
    ax2.loglog(sol.a_grid, np.maximum(sol.residual, 1e-18))
    apply_style(ax2, "a", "|G - H(G)|")
    return _save(fig, out_dir, name)


def fig_path(record, out_dir, name="path.png"):
    plt = _plt()
    fig, ax = plt.subplots(figsize=(7.2, 3.8))
    ax.step(record.times, record.states, where="post")
    apply_style(ax, "time", "state", f"{record.events} events")
    return _save(fig, out_dir, name)


def fig_experiment(summary, out_dir, name=None):
    """Dispatch on the experiment kind; returns the written path."""
    kind = summary.experiment
    fname = name or f"{kind}.png"
    plt = _plt()
    rows = summary.rows
    if kind == "lln":
        fig, ax = plt.subplots(figsize=(6.4, 4.0))
        levels = [r["level"] for r in rows]
        for key in sorted(k for k in rows[0] if k.startswith("dev_prob")):
            ax.plot(levels, [max(r[key], 1e-5) for r in rows], marker="o",
                    label=key.replace("dev_prob_", "delta="))
        ax.set_xscale("log")
        ax.set_yscale("log")
        apply_style(ax, "level n", "deviation probability", summary.model)
        ax.legend(fontsize=8)
    elif kind == "clt":
        fig, ax = plt.subplots(figsize=(6.4, 4.0))
        hist = np.asarray(summary.statistics["z_hist"], dtype=float)
        edges = np.asarray(summary.statistics["z_edges"])
        mids = 0.5 * (edges[1:] + edges[:-1])
        width = edges[1] - edges[0]
        density = hist / (hist.sum() * width)
        ax.bar(mids, density, width=width * 0.92, alpha=0.6,
               label="standardized sample")
        xs = np.linspace(edges[0], edges[-1], 200)
        ax.plot(xs, np.exp(-xs * xs / 2) / math.sqrt(2 * math.pi), "k-",
                label="standard normal")
        apply_style(ax, "z", "density",
                    f"{summary.model}   KS={summary.statistics['ks']:.4f}")
        ax.legend(fontsize=8)
    elif kind == "fast-regime":
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9.6, 3.8))
        a = [r["a"] for r in rows]
        ax1.plot(a, [r["empirical"] for r in rows], label="empirical")
        ax1.plot(a, [r["theory"] for r in rows], "--", label="product transform")
        apply_style(ax1, "a", "E exp(-a T/E T)", summary.model)
        ax1.legend(fontsize=8)
        ax2.semilogy(a, [max(r["dev"], 1e-12) for r in rows])
        apply_style(ax2, "a", "|empirical - theory|")
    elif kind == "speed":
        fig, ax = plt.subplots(figsize=(6.4, 4.0))
        t = [r["t"] for r in rows]
        ax.loglog(t, [r["mean_state"] for r in rows], marker="o",
                  label="mean X(t)")
        ax.loglog(t, [r["v"] for r in rows], marker="s", linestyle="--",
                  label="profile v(t)")
        apply_style(ax, "t", "level", summary.model)
        ax.legend(fontsize=8)
    elif kind == "excursions":
        fig, ax = plt.subplots(figsize=(6.4, 4.0))
        levels = [r["level"] for r in rows]
        ax.plot(levels, [r["emp_m2"] for r in rows], marker="o",
                label="empirical E H^2")
        ax.plot(levels, [r["rec_m2"] for r in rows], "--", marker="x",
                label="recursion")
        ax.plot(levels, [r["compensated"] for r in rows], marker="s",
                label="compensated (mu/lam)")
        apply_style(ax, "level n", "second moment", summary.model)
        ax.legend(fontsize=8)
    elif kind == "slln-proxy":
        fig, ax = plt.subplots(figsize=(6.4, 4.0))
        levels = [r["level"] for r in rows]
        ax.semilogx(levels, [r["single_dev_prob"] for r in rows], marker="o",
                    label="single level")
        ax.semilogx(levels, [r["sup_dev_prob"] for r in rows], marker="s",
                    label="running sup over [n, 2n]")
        apply_style(ax, "level n", "P(deviation > delta)", summary.model)
        ax.legend(fontsize=8)
    else:
        raise ValueError(f"no figure defined for experiment {kind!r}")
    return _save(fig, out_dir, fname)
