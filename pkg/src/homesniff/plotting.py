"""PNG renderings of report series; output bytes depend only on the data."""

from __future__ import annotations

import io
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

DPI = 80
_STATE_COLORS = ("#d9d9d9", "#9ecae1", "#d62728")


def _png(fig) -> bytes:
    buf = io.BytesIO()
    # no Software/date chunks: identical data renders to identical bytes
    fig.savefig(buf, format="png", dpi=DPI, metadata={"Software": None})
    plt.close(fig)
    return buf.getvalue()


def _hours(t_s: np.ndarray) -> np.ndarray:
    return np.asarray(t_s, dtype=float) / 3600.0


def traffic_figure(title: str, t_s: np.ndarray, up: np.ndarray, down: np.ndarray,
                   states: Optional[np.ndarray], th: Optional[float]) -> bytes:
    fig, (ax, sx) = plt.subplots(2, 1, figsize=(10, 3.6), sharex=True,
                                 gridspec_kw={"height_ratios": [4, 1]})
    h = _hours(t_s)
    ax.plot(h, down, lw=0.6, color="#1f77b4", label="downlink")
    ax.plot(h, up, lw=0.6, color="#ff7f0e", label="uplink")
    if th is not None:
        ax.axhline(th, color="k", lw=0.6, ls="--", label="threshold")
    ax.set_ylabel("packets / window")
    ax.set_title(title, fontsize=9)
    ax.legend(loc="upper right", fontsize=7)
    if states is not None and len(states):
        sx.imshow(np.asarray(states)[None, :], aspect="auto", interpolation="nearest",
                  cmap=matplotlib.colors.ListedColormap(_STATE_COLORS), vmin=0, vmax=2,
                  extent=(h[0], h[-1] + (h[1] - h[0] if len(h) > 1 else 0), 0, 1))
    sx.set_yticks([])
    sx.set_xlabel("hours since start")
    fig.tight_layout()
    return _png(fig)


def rssi_figure(title: str, t_s: np.ndarray, values: np.ndarray, sniffers: Sequence[str]) -> bytes:
    fig, ax = plt.subplots(figsize=(10, 3))
    h = _hours(t_s)
    for j, sid in enumerate(sniffers):
        ax.plot(h, values[:, j], ".", ms=1.5, label=sid)
    ax.set_ylabel("median RSSI (dBm)")
    ax.set_xlabel("hours since start")
    ax.set_title(title, fontsize=9)
    if len(sniffers):
        ax.legend(loc="upper right", fontsize=7, markerscale=4)
    fig.tight_layout()
    return _png(fig)


def position_figure(title: str, xy: np.ndarray, anchors: Sequence[tuple[str, float, float]]) -> bytes:
    fig, ax = plt.subplots(figsize=(5, 4.5))
    ok = np.isfinite(xy).all(axis=1) if len(xy) else np.zeros(0, dtype=bool)
    ax.plot(xy[ok, 0], xy[ok, 1], ".", ms=2, alpha=0.4, color="#1f77b4", label="estimates")
    for sid, x, y in anchors:
        ax.plot([x], [y], "^", color="k", ms=7)
        ax.annotate(sid, (x, y), textcoords="offset points", xytext=(4, 4), fontsize=7)
    ax.set_aspect("equal", adjustable="datalim")
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    ax.set_title(title, fontsize=9)
    fig.tight_layout()
    return _png(fig)


def timeline_figure(rows: Sequence[tuple[str, float, float]], title: str = "activities") -> bytes:
    """``rows`` are (label, start_h, end_h); one lane per label in first-seen order."""
    lanes: dict[str, int] = {}
    for label, _, _ in rows:
        lanes.setdefault(label, len(lanes))
    fig, ax = plt.subplots(figsize=(10, 0.6 + 0.35 * max(1, len(lanes))))
    cmap = plt.get_cmap("tab10")
    for label, a, b in rows:
        k = lanes[label]
        ax.broken_barh([(a, b - a)], (k - 0.4, 0.8), color=cmap(k % 10))
    ax.set_yticks(list(lanes.values()))
    ax.set_yticklabels(list(lanes.keys()), fontsize=7)
    ax.set_xlabel("hours since start")
    ax.set_title(title, fontsize=9)
    fig.tight_layout()
    return _png(fig)
