"""Write a simulation run as an analysis-ready directory."""

from __future__ import annotations

import io
from pathlib import Path

from homesniff.ble import write_ble_log
from homesniff.localization import format_layout, format_zone_model
from homesniff.pipeline import learn_zone_model
from homesniff.report import atomic_write
from homesniff.sim.pcapout import write_records_pcap
from homesniff.sim.scenario import Scenario
from homesniff.sim.simulate import SimulationResult, simulate_calibration
from homesniff.sim.truthio import format_truth
from homesniff.wire.records import write_records

FRAMES_FILE = "frames.jsonl"
BLE_FILE = "ble.jsonl"
LAYOUT_FILE = "layout.tsv"
LABELS_FILE = "labels.tsv"
ZONES_FILE = "zones.tsv"
CALIBRATION_FILE = "calibration.jsonl"
CALIBRATION_LABELS_FILE = "calibration_intervals.tsv"
TRUTH_DIR = "truth"


def _text(write, items) -> str:
    buf = io.StringIO()
    write(items, buf)
    return buf.getvalue()


def simulation_files(scn: Scenario, res: SimulationResult, pcap: bool = False) -> dict[str, bytes]:
    """Relative path to content. Zone references come from a calibration walk with the same channel."""
    files: dict[str, bytes] = {
        FRAMES_FILE: _text(write_records, res.all_frames()).encode(),
        BLE_FILE: _text(write_ble_log, res.ble).encode(),
        LAYOUT_FILE: format_layout(scn.layout).encode(),
        LABELS_FILE: "".join(f"{d.mac}\t{d.label}\n" for d in sorted(scn.all_devices, key=lambda d: d.mac)
                             if d.label).encode(),
    }
    if scn.rooms:
        cal_frames, intervals = simulate_calibration(scn)
        if cal_frames:
            files[CALIBRATION_FILE] = _text(write_records, cal_frames).encode()
            files[CALIBRATION_LABELS_FILE] = "".join(f"{lab}\t{a}\t{b}\n" for lab, a, b in intervals).encode()
            model = learn_zone_model(cal_frames, intervals, scn.layout, scn.window_s)
            files[ZONES_FILE] = format_zone_model(model).encode()
    for name, text in format_truth(res.truth).items():
        files[f"{TRUTH_DIR}/{name}"] = text.encode()
    if pcap:
        for sid in sorted(res.frames):
            buf = io.BytesIO()
            write_records_pcap(buf, res.frames[sid])
            files[f"pcap/{sid}.pcap"] = buf.getvalue()
    return dict(sorted(files.items()))


def write_simulation(scn: Scenario, res: SimulationResult, out_dir, pcap: bool = False) -> list[Path]:
    out = Path(out_dir)
    written = []
    for rel, data in simulation_files(scn, res, pcap).items():
        atomic_write(out / rel, data)
        written.append(out / rel)
    return written
