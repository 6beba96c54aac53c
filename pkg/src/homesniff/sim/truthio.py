"""Ground truth as tab-separated files in one directory."""

from __future__ import annotations

import io
import math
from pathlib import Path
from typing import Optional

import numpy as np

from homesniff.errors import FormatError
from homesniff.mac import MacAddress
from homesniff.sim.simulate import GroundTruth
from homesniff.traffic import State

GRID_FILE = "truth_grid.tsv"
DEVICES_FILE = "truth_devices.tsv"
WINDOWS_FILE = "truth_windows.tsv"
ACTIVITIES_FILE = "truth_activities.tsv"
GUESTS_FILE = "truth_guests.tsv"

_NONE = "-"


def _opt(v) -> str:
    return _NONE if v is None else str(v)


def _float(v: float) -> str:
    return "nan" if math.isnan(v) else f"{v:.6f}"


def format_truth(truth: GroundTruth) -> dict[str, str]:
    """File name to content; rows are ordered by device address then window."""
    grid = f"start_us\twindow_s\tn\n{truth.start_us}\t{truth.window_s}\t{truth.n}\n"

    dev = io.StringIO()
    dev.write("mac\tlabel\tkind\tstationary\thas_states\n")
    macs = sorted(truth.positions)
    for mac in macs:
        dev.write(f"{mac}\t{truth.labels.get(mac, '')}\t{_opt(truth.kinds.get(mac))}\t"
                  f"{int(truth.stationary.get(mac, False))}\t{int(truth.states.get(mac) is not None)}\n")

    win = io.StringIO()
    win.write("mac\twindow\tx\ty\tzone\tstate\n")
    for mac in macs:
        pos = truth.positions[mac]
        zones = truth.zones[mac]
        st = truth.states.get(mac)
        for i in range(truth.n):
            s = _NONE if st is None else State(int(st[i])).name.lower()
            win.write(f"{mac}\t{i}\t{_float(pos[i, 0])}\t{_float(pos[i, 1])}\t{zones[i]}\t{s}\n")

    act = io.StringIO()
    act.write("label\tstart_us\tend_us\n")
    for label, a, b in truth.activities:
        act.write(f"{label}\t{a}\t{b}\n")

    gst = io.StringIO()
    gst.write("mac\tarrival_us\tdeparture_us\n")
    for mac, a, b in truth.guests:
        gst.write(f"{mac}\t{a}\t{_opt(b)}\n")

    return {GRID_FILE: grid, DEVICES_FILE: dev.getvalue(), WINDOWS_FILE: win.getvalue(),
            ACTIVITIES_FILE: act.getvalue(), GUESTS_FILE: gst.getvalue()}


def _rows(path: Path, header: list[str]) -> list[list[str]]:
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except FileNotFoundError:
        raise FormatError(f"missing truth file {path}") from None
    if not lines or lines[0].split("\t") != header:
        raise FormatError(f"{path}: expected header {' '.join(header)}")
    rows = [ln.split("\t") for ln in lines[1:] if ln]
    for k, r in enumerate(rows, start=2):
        if len(r) != len(header):
            raise FormatError(f"{path}:{k}: expected {len(header)} fields, got {len(r)}")
    return rows


def read_truth(directory) -> GroundTruth:
    d = Path(directory)
    try:
        (g,) = _rows(d / GRID_FILE, ["start_us", "window_s", "n"])
        truth = GroundTruth(int(g[0]), int(g[1]), int(g[2]))
        has_states = {}
        for mac, label, kind, stationary, hs in _rows(d / DEVICES_FILE,
                                                      ["mac", "label", "kind", "stationary", "has_states"]):
            m = MacAddress.parse(mac)
            truth.labels[m] = label
            truth.kinds[m] = None if kind == _NONE else kind
            truth.stationary[m] = stationary == "1"
            truth.positions[m] = np.full((truth.n, 2), np.nan)
            truth.zones[m] = [""] * truth.n
            has_states[m] = hs == "1"
            truth.states[m] = np.zeros(truth.n, dtype=np.int8) if hs == "1" else None
        for mac, i, x, y, zone, state in _rows(d / WINDOWS_FILE, ["mac", "window", "x", "y", "zone", "state"]):
            m = MacAddress.parse(mac)
            if m not in truth.positions:
                raise FormatError(f"{d / WINDOWS_FILE}: unknown device {mac}")
            k = int(i)
            if not 0 <= k < truth.n:
                raise FormatError(f"{d / WINDOWS_FILE}: window {k} outside grid")
            truth.positions[m][k] = (float(x), float(y))
            truth.zones[m][k] = zone
            if has_states[m]:
                truth.states[m][k] = int(State[state.upper()])
        for label, a, b in _rows(d / ACTIVITIES_FILE, ["label", "start_us", "end_us"]):
            truth.activities.append((label, int(a), int(b)))
        for mac, a, b in _rows(d / GUESTS_FILE, ["mac", "arrival_us", "departure_us"]):
            dep: Optional[int] = None if b == _NONE else int(b)
            truth.guests.append((MacAddress.parse(mac), int(a), dep))
    except (ValueError, KeyError) as exc:
        raise FormatError(f"malformed truth in {d}: {exc}") from None
    return truth
