"""
Delimited table output and figure rendering.

Tables are written as CSV (header row, '.' decimal, floats in scientific
notation with 17 significant digits, which round-trips IEEE doubles
exactly) or as JSON with a ``meta`` object carrying the invocation flags,
seed and timestamp next to the ``rows`` array.  Figures are rendered
non-interactively to files alongside the tables.
"""

import datetime
import json

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

INT_COLUMNS = {"level", "n_boundary", "iterations", "edge"}


def format_value(name, value):
    if name in INT_COLUMNS:
        return "%d" % int(value)
    return "%.16e" % float(value)


def parse_value(name, text):
    if name in INT_COLUMNS:
        return int(text)
    return float(text)


def table_to_csv(table):
    """Serialize a ConvergenceTable (or row dicts) to CSV text."""
    names = table.column_names
    lines = [",".join(names)]
    for row in table.rows:
        lines.append(",".join(format_value(n, row.get(n, np.nan))
                              for n in names))
    return "\n".join(lines) + "\n"


def rows_to_csv(rows, names):
    lines = [",".join(names)]
    for row in rows:
        lines.append(",".join(format_value(n, row.get(n, np.nan))
                              for n in names))
    return "\n".join(lines) + "\n"


def parse_csv(text):
    """Parse table CSV back into (column names, row dicts)."""
    lines = [ln for ln in text.strip().split("\n") if ln]
    names = lines[0].split(",")
    rows = []
    for ln in lines[1:]:
        rows.append({n: parse_value(n, v)
                     for n, v in zip(names, ln.split(","))})
    return names, rows


def make_meta(args=None, seed=None):
    meta = {
        "timestamp": datetime.datetime.now().isoformat(timespec="seconds"),
    }
    if seed is not None:
        meta["seed"] = seed
    if args is not None:
        meta["flags"] = {k: v for k, v in sorted(vars(args).items())
                         if not k.startswith("_") and not callable(v)}
    return meta


def table_to_json(table, meta):
    names = table.column_names
    rows = []
    for r in table.rows:
        out = {}
        for n in names:
            v = r.get(n, np.nan)
            if n in INT_COLUMNS:
                out[n] = int(v)
            else:
                v = float(v)
                out[n] = None if not np.isfinite(v) else v
        rows.append(out)
    return json.dumps({"meta": meta, "rows": rows}, indent=2, default=str)


def rows_to_json(rows, meta):
    return json.dumps({"meta": meta, "rows": rows}, indent=2, default=str)


# ----------------------------------------------------------------------
# figures
# ----------------------------------------------------------------------

def render_convergence_figure(table, path, title="Convergence study"):
    """Log-log error-versus-h plot with reference slopes 1/2, 1 and 2."""
    hs = table.column("h")
    fig, ax = plt.subplots(figsize=(6.0, 4.5))
    plotted = False
    for metric in table.metrics:
        errs = table.column(metric)
        if np.all(~np.isfinite(errs)):
            continue
        ax.loglog(hs, errs, "o-", label=metric.replace("_", " "))
        plotted = True
    if plotted:
        anchor = np.nanmax([np.nanmax(table.column(m)) for m in table.metrics])
        for slope, style in ((0.5, ":"), (1.0, "--"), (2.0, "-.")):
            guide = anchor * (hs / hs[0]) ** slope
            ax.loglog(hs, guide, "k" + style, linewidth=0.8,
                      label="slope %g" % slope)
    ax.set_xlabel("h")
    ax.set_ylabel("error")
    ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def render_control_figure(control, path, exact_s=None, flux=None,
                          title="Boundary control"):
    """Step plot of the control along the boundary arclength."""
    breaks, vals = control.arclength_segments()
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.step(breaks, np.append(vals, vals[-1]), where="post",
            label="discrete control")
    if exact_s is not None:
        s = np.linspace(0.0, breaks[-1], 600)
        ax.plot(s, exact_s(s), "k--", linewidth=1.0, label="exact")
    if flux is not None:
        s = np.linspace(0.0, breaks[-1], 600)
        ax.plot(s, flux.eval_at_arclength(s), ":", linewidth=1.0,
                label="recovered flux")
    ax.set_xlabel("boundary arclength")
    ax.set_ylabel("value")
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def render_operator_figure(rows, path, title="Boundary operator report"):
    """Per-level orthogonality defect and lift operator norm."""
    levels = [r["level"] for r in rows]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8.5, 3.8))
    ax1.semilogy(levels, [max(r["orthogonality"], 1e-18) for r in rows],
                 "o-", label="orthogonality")
    ax1.semilogy(levels, [max(r["round_trip"], 1e-18) for r in rows],
                 "s-", label="round trip")
    ax1.set_xlabel("level")
    ax1.set_ylabel("max defect")
    ax1.grid(True, which="both", alpha=0.3)
    ax1.legend(fontsize=8)
    ax2.plot(levels, [r["p1_norm"] for r in rows], "o-")
    ax2.set_xlabel("level")
    ax2.set_ylabel("lift operator norm")
    ax2.grid(True, alpha=0.3)
    fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def render_mesh_figure(mesh, path, title=None):
    """Wireframe of the triangulation."""
    fig, ax = plt.subplots(figsize=(5.0, 5.0))
    ax.triplot(mesh.vertices[:, 0], mesh.vertices[:, 1], mesh.triangles,
               linewidth=0.5, color="tab:blue")
    ax.set_aspect("equal")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
