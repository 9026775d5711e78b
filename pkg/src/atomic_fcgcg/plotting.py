"""Convergence figures: residual vs iteration, residual vs time, active-set size.

:func:`emit_plot_script` writes a gnuplot script that reads the telemetry CSVs
directly, so nothing beyond a text editor is needed to regenerate the figures.
:func:`render_figures` draws the same three panels with matplotlib when it is
installed (the ``plot`` extra).
"""
from __future__ import annotations

import csv
import threading
from pathlib import Path

# pyplot keeps global state and its text parser is not reentrant
_MPL_LOCK = threading.Lock()


class IoError(OSError):
    pass


def _check(paths):
    for label, path in paths:
        if not Path(path).is_file():
            raise IoError(f"telemetry file for {label!r} not found: {path}")


def emit_plot_script(series, out_path, title: str = "", image: str = "convergence.png") -> Path:
    """Write a 3-panel gnuplot script for ``series = [(label, telemetry_csv), ...]``.

    Several series are overlaid in every panel.  Paths inside the script are
    relative to the script's directory when possible.
    """
    series = [(str(lbl), Path(p)) for lbl, p in series]
    _check(series)
    out_path = Path(out_path)
    base = out_path.parent.resolve()

    def rel(p):
        p = p.resolve()
        try:
            return str(p.relative_to(base))
        except ValueError:
            return str(p)

    def plot_line(xcol):
        parts = []
        for i, (label, p) in enumerate(series):
            parts.append(f"'{rel(p)}' using {xcol}:3 skip 1 with linespoints ls {i + 1} title '{label}'")
        return "plot " + ", \\\n     ".join(parts)

    lines = [
        "# gnuplot script: gnuplot " + out_path.name,
        "set datafile separator ','",
        "set terminal pngcairo size 1500,450",
        f"set output '{image}'",
        "set multiplot layout 1,3" + (f" title '{title}'" if title else ""),
        "set grid",
        "set key top right",
        "",
        "set logscale y",
        "set format y '10^{%L}'",
        "set xlabel 'k'",
        "set ylabel 'r_J(u_k)'",
        plot_line("1"),
        "",
        "set xlabel 'time [s]'",
        plot_line("($6/1000.0)"),
        "",
        "unset logscale y",
        "set format y '%g'",
        "set xlabel 'k'",
        "set ylabel 'active atoms'",
        "plot " + ", \\\n     ".join(
            f"'{rel(p)}' using 1:4 skip 1 with steps ls {i + 1} title '{label}'"
            for i, (label, p) in enumerate(series)
        ),
        "",
        "unset multiplot",
    ]
    try:
        out_path.write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise IoError(str(exc)) from exc
    return out_path


def _load(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    k = [int(r["k"]) for r in rows]
    res = [float(r["residual"]) if r["residual"] else float("nan") for r in rows]
    t = [float(r["wall_ms"]) / 1e3 for r in rows]
    n = [int(r["active_size"]) for r in rows]
    return k, res, t, n


def render_figures(series, out_path, title: str = "") -> Path:
    """Draw the three panels to ``out_path`` (PNG); needs matplotlib.

    Safe to call from several threads; drawing is serialized.
    """
    series = [(str(lbl), Path(p)) for lbl, p in series]
    _check(series)
    with _MPL_LOCK:
        return _render(series, Path(out_path), title)


def _render(series, out_path, title):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(1, 3, figsize=(15, 4.5))
    for label, p in series:
        k, res, t, n = _load(p)
        pos = [(a, b, c) for a, b, c in zip(k, res, t) if b > 0]
        axes[0].semilogy([a for a, _, _ in pos], [b for _, b, _ in pos], "o-", ms=3, label=label)
        axes[1].semilogy([c for _, _, c in pos], [b for _, b, _ in pos], "o-", ms=3, label=label)
        axes[2].step(k, n, where="post", label=label)
    axes[0].set_xlabel("k")
    axes[0].set_ylabel(r"$r_J(u_k)$")
    axes[1].set_xlabel("time [s]")
    axes[2].set_xlabel("k")
    axes[2].set_ylabel("active atoms")
    for ax in axes:
        ax.grid(True, which="both", alpha=0.3)
        ax.legend()
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def have_matplotlib() -> bool:
    try:
        import matplotlib  # noqa: F401
    except ImportError:
        return False
    return True
