"""Deterministic SVG figures plus the CSV behind each one."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_RC = {"svg.hashsalt": "lattice-extremes", "svg.fonttype": "none", "font.size": 9}


def _save(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)


def _ac(rep, outdir):
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    rows = []
    for cv in rep["curves"]:
        if "curve" not in cv:
            continue
        label = cv["variant"] if "E" not in cv else f"{cv['variant']} E={cv['E']}"
        ax.errorbar(cv["l"], cv["curve"], yerr=cv["se"], marker="o", ms=3, capsize=2, label=label)
        rows += [(label, l, c, s) for l, c, s in zip(cv["l"], cv["curve"], cv["se"])]
    ax.axhline(0.0, color="0.6", lw=0.8)
    ax.set_xlabel("l")
    ax.set_ylabel("P(max over R_l > u | exceedance)")
    ax.legend(frameon=False)
    fig.tight_layout()
    _save(fig, outdir / "ac_curve.svg")
    with open(outdir / "ac_curve.csv", "w") as fh:
        fh.write("variant,l,probability,se\n")
        for r in rows:
            fh.write(f"{r[0]},{r[1]},{r[2]!r},{r[3]!r}\n")
    return ["ac_curve.svg", "ac_curve.csv"]


def _frechet(rep, outdir):
    emp, th = np.asarray(rep["qq_empirical"]), np.asarray(rep["qq_theory"])
    fig, ax = plt.subplots(figsize=(3.6, 3.6))
    lim = float(np.quantile(np.concatenate([emp, th]), 0.99))
    ax.loglog(th, emp, ".", ms=2)
    ax.plot([th.min(), lim], [th.min(), lim], color="0.4", lw=0.8)
    ax.set_xlabel("Fréchet quantile")
    ax.set_ylabel("max |X| / a")
    ax.set_title(f"theta={rep['theta']:.3f}  KS={rep['ks']:.4f}")
    fig.tight_layout()
    _save(fig, outdir / "frechet_qq.svg")
    with open(outdir / "frechet_qq.csv", "w") as fh:
        fh.write("theory,empirical\n")
        for a, b in zip(th, emp):
            fh.write(f"{a!r},{b!r}\n")
    return ["frechet_qq.svg", "frechet_qq.csv"]


def _laplace(rep, outdir):
    rows = rep["rows"]
    sizes = rep["sizes"]
    nc = int(np.ceil(np.sqrt(len(rows))))
    nr = int(np.ceil(len(rows) / nc))
    fig, axes = plt.subplots(nr, nc, figsize=(2.6 * nc, 2.2 * nr), squeeze=False)
    out = []
    for i, row in enumerate(rows):
        ax = axes[i // nc][i % nc]
        e = [row["empirical"][n]["mean"] for n in sizes]
        s = [row["empirical"][n]["se"] for n in sizes]
        lim = row["limit"]["PsiL"]
        ax.errorbar(sizes, e, yerr=s, marker="o", ms=3, capsize=2)
        ax.axhline(lim["mean"], color="C1", lw=0.9)
        ax.axhspan(lim["mean"] - 2 * lim["se"], lim["mean"] + 2 * lim["se"], color="C1", alpha=0.2, lw=0)
        if len(sizes) > 1:
            ax.set_xscale("log")
        g = row["g"]
        ax.set_title(", ".join(f"{k}={g[k]:g}" for k in sorted(g) if k != "kind"), fontsize=7)
        out += [(i, n, a, b, lim["mean"], lim["se"]) for n, a, b in zip(sizes, e, s)]
    for j in range(len(rows), nr * nc):
        axes[j // nc][j % nc].axis("off")
    fig.tight_layout()
    _save(fig, outdir / "laplace_panel.svg")
    with open(outdir / "laplace_panel.csv", "w") as fh:
        fh.write("g_index,n,empirical,empirical_se,limit,limit_se\n")
        for r in out:
            fh.write(",".join(repr(x) for x in r) + "\n")
    return ["laplace_panel.svg", "laplace_panel.csv"]


def emit_plots(reports: dict, outdir) -> list:
    """Write one figure per available report; returns file names (empty when nothing to draw)."""
    makers = {"ac": _ac, "frechet": _frechet, "laplace": _laplace}
    todo = [(k, reports[k]) for k in makers if reports.get(k)]
    if not todo:
        return []
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    files = []
    with plt.rc_context(_RC):
        for k, rep in todo:
            files += makers[k](rep, outdir)
    return files
