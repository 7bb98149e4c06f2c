"""Rendering: telemetry CSV / comparison JSON in, image files out."""

import json

import matplotlib
matplotlib.use("Agg")  # headless; must precede pyplot
import matplotlib.pyplot as plt
import numpy as np

from .spec import PlotError


def read_telemetry(path):
    """Load one telemetry CSV; returns (column name -> index dict, data array).

    The first line is the comment header written by the harness
    ('# t,p_x,...'); columns are addressed by name everywhere below.
    """
    with open(path) as fh:
        header = fh.readline()
    if not header.startswith("#"):
        raise PlotError(f"{path}: missing column header line")
    names = header.lstrip("# ").strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] != len(names):
        raise PlotError(f"{path}: {data.shape[1]} columns, header names {len(names)}")
    return {name: k for k, name in enumerate(names)}, data


def read_comparison(path):
    with open(path) as fh:
        return json.load(fh)


def _columns(path, cols, channels):
    missing = [c for c in channels if c not in cols]
    if missing:
        raise PlotError(f"{path}: missing columns {missing}")


def band_stats(trials, channel, x_channel="t"):
    """Mean and sample sigma of one channel across trials, on the common grid.

    Trials are trimmed to the shortest run; sigma is the population standard
    deviation at each time sample (ddof = 0).
    """
    series = []
    n = None
    t = None
    for path in trials:
        cols, data = read_telemetry(path)
        _columns(path, cols, [channel, x_channel])
        series.append(data[:, cols[channel]])
        n = data.shape[0] if n is None else min(n, data.shape[0])
        t = data[:, cols[x_channel]]
    stack = np.stack([s[:n] for s in series])
    return t[:n], stack.mean(axis=0), stack.std(axis=0, ddof=0)


def _render_timeseries(spec):
    fig, axes = plt.subplots(len(spec.channels), 1, sharex=True,
                             figsize=(7, 1.8 * len(spec.channels)),
                             squeeze=False)
    for ax, ch in zip(axes[:, 0], spec.channels):
        if spec.band == "std" and len(spec.inputs) > 1:
            t, mean, sig = band_stats(spec.inputs, ch, spec.x_channel)
            ax.fill_between(t, mean - sig, mean + sig, alpha=0.3, lw=0)
            ax.plot(t, mean, lw=1.2)
        else:
            for path in spec.inputs:
                cols, data = read_telemetry(path)
                _columns(path, cols, [ch, spec.x_channel])
                ax.plot(data[:, cols[spec.x_channel]], data[:, cols[ch]], lw=1.0)
        ax.set_ylabel(ch)
        ax.grid(alpha=0.3)
    axes[-1, 0].set_xlabel(spec.x_channel)
    return fig


def _render_xy(spec):
    fig, ax = plt.subplots(figsize=(5, 5))
    cx, cy = spec.channels
    for path in spec.inputs:
        cols, data = read_telemetry(path)
        _columns(path, cols, [cx, cy])
        ax.plot(data[:, cols[cx]], data[:, cols[cy]], lw=1.0)
    ax.set_xlabel(cx)
    ax.set_ylabel(cy)
    ax.set_aspect("equal", adjustable="datalim")
    ax.grid(alpha=0.3)
    return fig


def _render_bars(spec):
    if len(spec.inputs) != 1:
        raise PlotError("bars spec takes exactly one comparison JSON")
    table = read_comparison(spec.inputs[0])
    rows = table["rows"]
    labels = [f"{r['scenario']}/s{r['seed']}" for r in rows]
    controllers = sorted({c for r in rows for c in r["controllers"]})
    fig, ax = plt.subplots(figsize=(1.0 + 1.2 * len(rows), 4))
    width = 0.8 / len(controllers)
    x = np.arange(len(rows))
    for k, ctrl in enumerate(controllers):
        vals = []
        for r in rows:
            m = r["controllers"].get(ctrl)
            vals.append(np.nan if m is None or m["diverged"] else m[spec.metric])
        ax.bar(x + k * width, vals, width, label=ctrl)
    ax.set_xticks(x + 0.4 - width / 2)
    ax.set_xticklabels(labels, rotation=20, ha="right")
    ax.set_ylabel(spec.metric)
    ax.legend()
    ax.grid(axis="y", alpha=0.3)
    return fig


def render(spec):
    """Render one PlotSpec; returns the written image path."""
    fig = {"timeseries": _render_timeseries,
           "xy": _render_xy,
           "bars": _render_bars}[spec.kind](spec)
    if spec.title:
        fig.suptitle(spec.title)
    fig.tight_layout()
    fig.savefig(spec.output, dpi=120)
    plt.close(fig)
    return spec.output
