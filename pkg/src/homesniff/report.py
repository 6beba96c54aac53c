"""Tabular views of an analysis, plot-data files and the report bundle."""

from __future__ import annotations

import csv
import io
import math
import os
import tempfile
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from homesniff.identity import DeviceKind
from homesniff.mac import MacAddress
from homesniff.pipeline import Analysis
from homesniff.timeutil import US, format_hhmm, iso
from homesniff.traffic import State

Table = tuple[list[str], list[list[str]]]

_KIND_TYPE = {DeviceKind.SMART: "smart device", DeviceKind.MANUAL: "multimedia device",
              DeviceKind.UNKNOWN: "unknown"}


def fnum(v: Optional[float], digits: int = 3) -> str:
    if v is None:
        return ""
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    s = f"{v:.{digits}f}"
    return "0." + "0" * digits if s == "-0." + "0" * digits else s


def render_csv(table: Table) -> str:
    header, rows = table
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def render_lines(table: Table) -> str:
    """One record per line as space-separated ``key=value``; spaces in values become ``_``."""
    header, rows = table
    return "".join(" ".join(f"{k}={str(v).replace(' ', '_')}" for k, v in zip(header, r)) + "\n"
                   for r in rows)


def render(table: Table, fmt: str) -> str:
    return render_lines(table) if fmt == "lines" else render_csv(table)


# --- tables ---------------------------------------------------------------------

def device_type(an: Analysis, mac: MacAddress) -> str:
    if mac in an.labels:
        return an.labels[mac]
    p = an.profiles[mac]
    return "router" if p.is_router else _KIND_TYPE[p.kind]


def device_rows(an: Analysis) -> list[list[str]]:
    rows = []
    for mac in an.devices:
        p = an.profiles[mac]
        manufacturer = p.vendor or ("randomized address" if p.randomized_mac else "unknown")
        sources = []
        if p.vendor:
            sources.append("oui")
        if p.ble_name or p.ble_services or p.ble_manufacturer is not None:
            sources.append("ble")
        if mac in an.labels:
            sources.append("label")
        rows.append([str(mac), device_type(an, mac), manufacturer, p.ble_name or "-",
                     "+".join(sources) or "-"])
    return rows


def identify_table(an: Analysis) -> Table:
    header = ["mac", "type", "manufacturer", "model", "source", "kind", "randomized", "frames",
              "first_seen", "last_seen", "ble_services", "ble_company_id"]
    rows = []
    for base, mac in zip(device_rows(an), an.devices):
        p = an.profiles[mac]
        rows.append(base + [p.kind.value,
                            str(int(p.randomized_mac)), str(p.frame_count), iso(p.first_seen),
                            iso(p.last_seen), ";".join(p.ble_services),
                            "" if p.ble_manufacturer is None else f"0x{p.ble_manufacturer:04x}"])
    return header, rows


def probe_table(an: Analysis) -> Table:
    rows = []
    for mac in sorted(an.probes):
        for ssid in sorted(an.probes[mac]):
            e = an.probes[mac][ssid]
            rows.append([str(mac), e.text(), str(e.count), iso(e.first_seen), iso(e.last_seen)])
    return ["mac", "ssid", "count", "first_seen", "last_seen"], rows


def state_table(an: Analysis) -> Table:
    header = ["mac", "window_start", "up_pkts", "down_pkts", "total", "state"]
    rows = []
    for mac in sorted(an.timelines):
        s = an.series[mac]
        tl = an.timelines[mac]
        up, down = s.up_pkts.tolist(), s.down_pkts.tolist()
        st = tl.states.tolist()
        m = str(mac)
        for i in range(len(tl)):
            rows.append([m, iso(tl.window_start(i)), str(up[i]), str(down[i]), str(up[i] + down[i]),
                         State(st[i]).label])
    return header, rows


def kind_table(an: Analysis) -> Table:
    header = ["mac", "kind", "threshold", "hourly_coverage", "night_coverage", "hours",
              "off_fraction", "idle_fraction", "active_fraction"]
    rows = []
    for mac in sorted(an.timelines):
        ev = an.kinds.get(mac)
        st = an.timelines[mac].states
        n = max(1, len(st))
        frac = [fnum(float((st == s).sum()) / n) for s in (State.OFF, State.IDLE, State.ACTIVE)]
        rows.append([str(mac), an.profiles[mac].kind.value, fnum(an.timelines[mac].th),
                     fnum(ev.hourly_coverage) if ev else "", fnum(ev.night_coverage) if ev else "",
                     str(ev.hours) if ev else "0", *frac])
    return header, rows


def position_table(an: Analysis) -> Table:
    header = ["mac", "window_start", "x", "y", "linear_x", "linear_y", "residual", "zone"]
    rows = []
    g = an.grid
    for mac in sorted(an.tracks):
        t = an.tracks[mac]
        m = str(mac)
        for i in np.flatnonzero(t.usable).tolist():
            rows.append([m, iso(g.start_us + i * g.window_s * US), fnum(t.xy[i, 0]), fnum(t.xy[i, 1]),
                         fnum(t.linear_xy[i, 0]), fnum(t.linear_xy[i, 1]), fnum(t.residual[i]),
                         t.zones[i] or ""])
    return header, rows


def mobility_table(an: Analysis) -> Table:
    header = ["mac", "mobility", "max_iqr_db", "fingerprints", "usable_windows"]
    rows = []
    for mac in sorted(an.mobility):
        r = an.mobility[mac]
        t = an.tracks.get(mac)
        usable = str(int(t.usable.sum())) if t is not None else "0"
        if r is None:
            rows.append([str(mac), "undetermined", "", "0", usable])
        else:
            rows.append([str(mac), r.mobility.value, fnum(r.max_iqr_db), str(r.fingerprints), usable])
    return header, rows


def zone_table(an: Analysis) -> Table:
    zones = sorted({z for t in an.tracks.values() for z in t.zones if z})
    rows = []
    for mac in sorted(an.tracks):
        t = an.tracks[mac]
        counts = [sum(1 for z in t.zones if z == name) for name in zones]
        if any(counts):
            rows.append([str(mac)] + [str(c) for c in counts])
    return ["mac"] + zones, rows


def event_table(an: Analysis) -> Table:
    rows = [[e.label, iso(e.start_us), iso(e.end_us), fnum(e.confidence), e.rule,
             ";".join(f"{who}:{what}" for who, what in e.evidence)] for e in an.events]
    return ["label", "start", "end", "confidence", "rule", "evidence"], rows


def guest_table(an: Analysis) -> Table:
    rows = [[str(g.guest_mac), iso(g.arrival_us), iso(g.departure_us) if g.departure_us is not None else "",
             g.resembles.value] for g in an.guests]
    return ["mac", "arrival", "departure", "resembles"], rows


def sleep_table(an: Analysis) -> Table:
    rows = [[iso(d)[:10], iso(s), iso(w)] for d, s, w in an.sleep_wake]
    return ["day", "sleep", "wake"], rows


def presence_table(an: Analysis) -> Table:
    rows = [[str(mac), iso(a), iso(b)] for mac in sorted(an.presence) for a, b in an.presence[mac].intervals]
    return ["mac", "start", "end"], rows


def routine_table(an: Analysis) -> Table:
    rows = []
    for name in sorted(an.routine or {}):
        r = an.routine[name]
        wake = format_hhmm(r.wake_s) if r.wake_s is not None else ""
        absences = ";".join(f"{format_hhmm(a)}-{format_hhmm(b)}" for a, b in r.absences)
        rows.append([name, str(r.days), str(r.cell_s), wake, absences])
    return ["day_class", "days", "cell_s", "wake", "absences"], rows


def metrics_table(rows: Iterable[tuple[str, str]]) -> Table:
    return ["metric", "value"], [list(r) for r in rows]


# --- plot data --------------------------------------------------------------------

def _stem(mac: MacAddress) -> str:
    return str(mac).replace(":", "")


def _tsv(header: Sequence[str], cols: Sequence[Sequence[str]]) -> str:
    lines = ["\t".join(header)]
    lines.extend("\t".join(r) for r in zip(*cols))
    return "\n".join(lines) + "\n"


def plot_data(an: Analysis) -> dict[str, str]:
    """Per device and series a two- or three-column file; time is seconds from grid start."""
    out: dict[str, str] = {}
    g = an.grid
    t = [str(i * g.window_s) for i in range(g.n)]
    for mac in sorted(an.timelines):
        s = an.series[mac]
        stem = _stem(mac)
        out[f"{stem}.traffic.tsv"] = _tsv(["t_s", "up_pkts", "down_pkts"],
                                          [t, [str(v) for v in s.up_pkts.tolist()],
                                           [str(v) for v in s.down_pkts.tolist()]])
        out[f"{stem}.state.tsv"] = _tsv(["t_s", "state"],
                                        [t, [str(v) for v in an.timelines[mac].states.tolist()]])
    for mac in sorted(an.fingerprints):
        fps = an.fingerprints[mac]
        if not fps or an.layout is None:
            continue
        stem = _stem(mac)
        for j, sid in enumerate(an.layout.ids):
            pts = [(str((fp.window_start_us - g.start_us) // US), fnum(fp.values[j], 1))
                   for fp in fps if j < len(fp.values) and fp.values[j] is not None]
            out[f"{stem}.rssi-{sid}.tsv"] = _tsv(["t_s", "rssi_dbm"],
                                                 [[a for a, _ in pts], [b for _, b in pts]])
    for mac in sorted(an.tracks):
        tr = an.tracks[mac]
        idx = np.flatnonzero(tr.usable).tolist()
        out[f"{_stem(mac)}.position.tsv"] = _tsv(
            ["t_s", "x_m", "y_m"],
            [[t[i] for i in idx], [fnum(tr.xy[i, 0]) for i in idx], [fnum(tr.xy[i, 1]) for i in idx]])
    return out


# --- summary ----------------------------------------------------------------------

def _aligned(table: Table) -> str:
    header, rows = table
    if not rows:
        return "  ".join(header) + "\n(none)\n"
    widths = [max(len(h), *(len(r[k]) for r in rows)) for k, h in enumerate(header)]
    fmt = lambda r: "  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip()  # noqa: E731
    return "\n".join([fmt(header), fmt(["-" * w for w in widths])] + [fmt(r) for r in rows]) + "\n"


def summary_text(an: Analysis, metrics: Optional[Iterable[tuple[str, str]]] = None) -> str:
    g = an.grid
    parts = ["homesniff report", "",
             f"network   {an.bssid if an.bssid is not None else '-'}",
             f"windows   {g.n} x {g.window_s} s from {iso(g.start_us)}", ""]

    parts += ["DEVICES", _aligned((["mac", "type", "manufacturer", "model", "source"], device_rows(an)))]
    parts += ["STATES", _aligned(kind_table(an))]
    parts += ["MOBILITY", _aligned(mobility_table(an))]
    parts += ["ZONES (usable windows per zone)", _aligned(zone_table(an))]

    timeline = [[iso(e.start_us), iso(e.end_us), e.label, fnum(e.confidence, 2)] for e in an.events]
    for gst in an.guests:
        timeline.append([iso(gst.arrival_us), iso(gst.departure_us) if gst.departure_us is not None else "open",
                         f"guest {gst.guest_mac} ({gst.resembles.value})", ""])
    for _, s, w in an.sleep_wake:
        timeline.append([iso(w), "", "wake (first resident device on)", ""])
        timeline.append([iso(s), "", "sleep (last resident device off)", ""])
    timeline.sort(key=lambda r: (r[0], r[2]))
    parts += ["EVENT TIMELINE", _aligned((["start", "end", "event", "confidence"], timeline))]
    parts += ["ROUTINE", _aligned(routine_table(an))]
    parts += ["PROBED NETWORKS", _aligned(probe_table(an))]
    if metrics is not None:
        parts += ["SCORE", _aligned(metrics_table(metrics))]
    return "\n".join(parts)


# --- bundle -----------------------------------------------------------------------

def report_bundle(an: Analysis, metrics: Optional[Iterable[tuple[str, str]]] = None,
                  images: bool = True) -> dict[str, bytes]:
    """Relative path to file content for the whole report."""
    bundle: dict[str, bytes] = {"summary.txt": summary_text(an, metrics).encode("utf-8")}
    for name, table in (("devices.csv", identify_table(an)), ("events.csv", event_table(an)),
                        ("guests.csv", guest_table(an)), ("zones.csv", zone_table(an))):
        bundle[name] = render_csv(table).encode("utf-8")
    for name, text in plot_data(an).items():
        bundle[f"plots/{name}"] = text.encode("utf-8")
    if images:
        bundle.update(_images(an))
    return dict(sorted(bundle.items()))


def _images(an: Analysis) -> dict[str, bytes]:
    from homesniff import plotting

    out = {}
    g = an.grid
    t = np.arange(g.n, dtype=np.int64) * g.window_s
    for mac in sorted(an.timelines):
        s = an.series[mac]
        tl = an.timelines[mac]
        title = f"{an.label_of(mac)} ({mac})"
        out[f"plots/{_stem(mac)}.traffic.png"] = plotting.traffic_figure(
            title, t, s.up_pkts, s.down_pkts, tl.states, tl.th)
    if an.layout is not None:
        k = len(an.layout.ids)
        for mac in sorted(an.fingerprints):
            fps = an.fingerprints[mac]
            if not fps:
                continue
            ts = np.array([(fp.window_start_us - g.start_us) // US for fp in fps], dtype=np.int64)
            vals = np.array([[np.nan if v is None else v for v in fp.values[:k]] for fp in fps], dtype=float)
            out[f"plots/{_stem(mac)}.rssi.png"] = plotting.rssi_figure(
                f"{an.label_of(mac)} ({mac})", ts, vals, an.layout.ids)
        for mac in sorted(an.tracks):
            tr = an.tracks[mac]
            if tr.usable.any():
                out[f"plots/{_stem(mac)}.position.png"] = plotting.position_figure(
                    f"{an.label_of(mac)} ({mac})", tr.xy[tr.usable], an.layout.sniffers)
    rows = [(e.label, (e.start_us - g.start_us) / (3600 * US), (e.end_us - g.start_us) / (3600 * US))
            for e in an.events]
    out["plots/events.png"] = plotting.timeline_figure(rows)
    return out


_UMASK = os.umask(0)
os.umask(_UMASK)


def atomic_write(path, data) -> None:
    """Write via a temporary sibling and rename, so readers never see a partial file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.chmod(tmp, 0o666 & ~_UMASK)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def write_bundle(bundle: Mapping[str, bytes], out_dir) -> list[Path]:
    out = Path(out_dir)
    written = []
    for rel, data in bundle.items():
        p = out / rel
        atomic_write(p, data)
        written.append(p)
    return written
