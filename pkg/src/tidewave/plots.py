"""Standalone SVG figures for pipeline outputs.

Every figure is rendered byte-deterministically: the Agg backend, a fixed
SVG hash salt, no embedded creation date, and a provenance comment naming
the input files (basename and content hash only) injected after the XML
prolog. Rendering the same inputs twice yields identical files, which the
manifest rerun check relies on.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .detector import KIND_HIGH_LOW, KIND_MAX_FLOW
from .util import require

plt.rcParams["svg.hashsalt"] = "tidewave"

_FIGSIZE = (9.0, 4.0)


def _finish(fig, path, provenance: dict[str, str]) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    tags = " ".join(f"{name}={digest[:12]}" for name, digest in
                    sorted(provenance.items()))
    comment = f"<!-- tidewave inputs: {tags} -->\n" if tags else ""
    marker = "?>\n"
    head, sep, rest = text.partition(marker)
    require(sep == marker, "unexpected SVG prolog")
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(head + sep + comment + rest)


def _hours(times) -> np.ndarray:
    times = np.asarray(times, dtype=np.float64)
    return (times - times[0]) / 3600.0


def plot_tide(times, heights, path, pred_times=None, pred_values=None,
              provenance=None) -> None:
    """Water level vs time, with optional predicted levels overlaid."""
    fig, ax = plt.subplots(figsize=_FIGSIZE)
    th = _hours(times)
    ax.plot(th, heights, color="#1f5fa6", lw=1.2, label="water level")
    if pred_times is not None:
        pt = (np.asarray(pred_times, dtype=np.float64) - times[0]) / 3600.0
        ok = np.isfinite(pred_values)
        ax.plot(pt[ok], np.asarray(pred_values)[ok], color="#d1495b", lw=0.9,
                ls="--", label="estimate")
    ax.set_xlabel("time [h]")
    ax.set_ylabel("water level [m]")
    ax.legend(loc="upper right", frameon=False)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    _finish(fig, path, provenance or {})


def plot_feature(feature, events, path, provenance=None) -> None:
    """S(b) trace with turn (circle) and peak-flow (square) markers."""
    fig, ax = plt.subplots(figsize=_FIGSIZE)
    th = _hours(feature.times)
    ok = feature.valid & np.isfinite(feature.values)
    ax.plot(th[ok], feature.values[ok], color="#2a2a2a", lw=1.0, label="S(b)")
    t0 = feature.times[0]
    hl = [(e.time, e.value) for e in events if e.kind == KIND_HIGH_LOW]
    mf = [(e.time, e.value) for e in events if e.kind == KIND_MAX_FLOW]
    if hl:
        ax.scatter([(t - t0) / 3600.0 for t, _ in hl], [v for _, v in hl],
                   marker="o", s=60, facecolors="none", edgecolors="#d1495b",
                   lw=1.5, label="high/low water", zorder=3)
    if mf:
        ax.scatter([(t - t0) / 3600.0 for t, _ in mf], [v for _, v in mf],
                   marker="s", s=50, facecolors="none", edgecolors="#1a1a1a",
                   lw=1.5, label="max flow", zorder=3)
    ax.set_xlabel("time [h]")
    ax.set_ylabel("summed tide-band magnitude")
    ax.legend(loc="upper right", frameon=False)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    _finish(fig, path, provenance or {})


def plot_scalogram(sg, path, provenance=None) -> None:
    """|W(a, b)| heat map over time and pseudo-period, with the COI bound."""
    fig, ax = plt.subplots(figsize=_FIGSIZE)
    th = _hours(sg.times)
    periods_min = (sg.scales / sg.band.spec.center_freq) / 60.0
    mag = np.abs(sg.coeffs)
    mesh = ax.pcolormesh(th, periods_min, mag, shading="nearest",
                         cmap="viridis", rasterized=False)
    span_h = float(th[-1])
    coi_h = sg.coi / 3600.0
    ax.plot(coi_h, periods_min, color="w", lw=1.0, ls=":")
    ax.plot(span_h - coi_h, periods_min, color="w", lw=1.0, ls=":")
    ax.set_yscale("log")
    ax.set_xlim(0, span_h)
    ax.set_xlabel("time [h]")
    ax.set_ylabel("pseudo-period [min]")
    fig.colorbar(mesh, ax=ax, label="|W(a, b)|")
    fig.tight_layout()
    _finish(fig, path, provenance or {})
