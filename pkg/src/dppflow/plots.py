"""Diagram emission for benchmark CSVs.

Two output routes share one data extraction: gnuplot scripts plus
whitespace-separated data files (headless, no plotting stack needed), and
matplotlib PNG renderings written next to the CSV.
"""

from __future__ import annotations

from pathlib import Path

from .assembly import FIELDS
from .spectrum import SLOPE_SIGN_NOTE, read_csv

_FIELD_LABELS = {"u1": "macro velocity", "p1": "macro pressure",
                 "u2": "micro velocity", "p2": "micro pressure"}


def _load_columns(csv_path):
    rows = read_csv(csv_path)
    if not rows:
        raise ValueError(f"empty CSV: {csv_path}")
    cols = {key: [float(r[key]) for r in rows] for key in rows[0] if key not in
            ("formulation", "cell")}
    cols["formulation"] = rows[0]["formulation"]
    cols["cell"] = rows[0]["cell"]
    return cols


def _write_dat(path: Path, cols) -> None:
    names = ["dos"] + [f"doa_{f}" for f in FIELDS] + ["total_s", "dof_per_s_total"] \
        + [f"doe_{f}" for f in FIELDS]
    lines = ["# " + " ".join(names)]
    for i in range(len(cols["dos"])):
        lines.append(" ".join(f"{cols[n][i]:.12e}" for n in names))
    path.write_text("\n".join(lines) + "\n")


def _script(out_png, title, xlabel, ylabel, plots, logscale=None):
    lines = [
        "set terminal pngcairo size 900,650",
        f"set output '{out_png}'",
        f"set title '{title}'",
        f"set xlabel '{xlabel}'",
        f"set ylabel '{ylabel}'",
        "set key left top",
        "set grid",
    ]
    if logscale:
        lines.append(f"set logscale {logscale}")
    lines.append("plot " + ", \\\n     ".join(plots))
    return "\n".join(lines) + "\n"


def emit_plots(csv_path) -> list[Path]:
    """Write gnuplot scripts (one per diagram type) and their data files.

    Diagrams: accuracy digits against size digits, processing rate against
    wall time (log-log, the static-scaling convention), and efficacy digits
    against wall time.
    """
    csv_path = Path(csv_path)
    cols = _load_columns(csv_path)
    base = csv_path.with_suffix("")
    dat = base.with_name(base.name + "_tas.dat")
    _write_dat(dat, cols)
    tag = f"{cols['formulation']} / {cols['cell']}"

    outputs = [dat]
    specs = [
        ("doa_vs_dos", "DoA vs DoS", "DoS = -log10(DoF)", "DoA = -log10(L2 error)",
         [f"'{dat.name}' using 1:{2 + i} with linespoints title '{_FIELD_LABELS[f]}'"
          for i, f in enumerate(FIELDS)], None),
        ("rate_vs_time", "static scaling", "total wall time [s]", "DoF/s (total)",
         [f"'{dat.name}' using 6:7 with linespoints title 'total'"], "xy"),
        ("doe_vs_time", "DoE vs time", "total wall time [s]", "DoE = -log10(L2 x time)",
         [f"'{dat.name}' using 6:{8 + i} with linespoints title '{_FIELD_LABELS[f]}'"
          for i, f in enumerate(FIELDS)], "x"),
    ]
    for name, title, xl, yl, plots, log in specs:
        script = base.with_name(f"{base.name}_{name}.gp")
        png = f"{base.name}_{name}.png"
        script.write_text(f"# {SLOPE_SIGN_NOTE}\n" + _script(png, f"{title} ({tag})", xl, yl, plots, log))
        outputs.append(script)
    return outputs


def render_figures(csv_path) -> list[Path]:
    """Render the same three diagrams as PNG files via matplotlib (Agg)."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    csv_path = Path(csv_path)
    cols = _load_columns(csv_path)
    base = csv_path.with_suffix("")
    tag = f"{cols['formulation']} / {cols['cell']}"
    written = []

    fig, ax = plt.subplots(figsize=(6.5, 5))
    for f in FIELDS:
        ax.plot(cols["dos"], cols[f"doa_{f}"], "o-", label=_FIELD_LABELS[f])
    ax.set_xlabel("DoS = -log10(DoF)")
    ax.set_ylabel("DoA = -log10(L2 error)")
    ax.set_title(f"DoA vs DoS ({tag})")
    ax.grid(True, alpha=0.4)
    ax.legend()
    written.append(_save(fig, base, "doa_vs_dos"))

    fig, ax = plt.subplots(figsize=(6.5, 5))
    ax.loglog(cols["total_s"], cols["dof_per_s_total"], "s-")
    ax.set_xlabel("total wall time [s]")
    ax.set_ylabel("DoF/s (total)")
    ax.set_title(f"static scaling ({tag})")
    ax.grid(True, which="both", alpha=0.4)
    written.append(_save(fig, base, "rate_vs_time"))

    fig, ax = plt.subplots(figsize=(6.5, 5))
    for f in FIELDS:
        ax.semilogx(cols["total_s"], cols[f"doe_{f}"], "o-", label=_FIELD_LABELS[f])
    ax.set_xlabel("total wall time [s]")
    ax.set_ylabel("DoE = -log10(L2 x time)")
    ax.set_title(f"DoE vs time ({tag})")
    ax.grid(True, which="both", alpha=0.4)
    ax.legend()
    written.append(_save(fig, base, "doe_vs_time"))
    return written


def _save(fig, base: Path, name: str) -> Path:
    out = base.with_name(f"{base.name}_{name}.png")
    fig.tight_layout()
    fig.savefig(out, dpi=130)
    import matplotlib.pyplot as plt
    plt.close(fig)
    return out
