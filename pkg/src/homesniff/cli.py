"""Command-line front end: ``homesniff <subcommand> [options]``.

Exit status is 0 on success, 1 for bad input or arguments, 2 for internal failures.
"""

from __future__ import annotations

import argparse
import io
import logging
import os
import sys
import traceback
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

from homesniff.ble import BleAdvRecord, iter_ble_log
from homesniff.errors import HomesniffError
from homesniff.har import compile_rules
from homesniff.identity import OuiDatabase, parse_oui_db
from homesniff.localization import PathLossParams, SnifferLayout, ZoneModel, parse_layout, parse_zone_model
from homesniff.mac import MacAddress
from homesniff.pipeline import Analysis, PipelineConfig, parse_labels, run_pipeline
from homesniff.report import (
    Table,
    atomic_write,
    event_table,
    guest_table,
    identify_table,
    kind_table,
    metrics_table,
    mobility_table,
    position_table,
    presence_table,
    probe_table,
    render,
    report_bundle,
    routine_table,
    sleep_table,
    state_table,
    write_bundle,
    zone_table,
)
from homesniff.wire import decode_capture
from homesniff.wire.records import FrameRecord, iter_records, write_records

log = logging.getLogger("homesniff")

SUBCOMMANDS = ("ingest", "identify", "states", "localize", "schedule", "har", "simulate", "score", "report")

# companion files looked up in an input directory when the matching flag is absent
_COMPANIONS = {"ble": "ble.jsonl", "layout": "layout.tsv", "zones": "zones.tsv", "labels": "labels.tsv",
               "truth": "truth"}
_FRAME_FILE = "frames.jsonl"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


@dataclass
class Inputs:
    frames: list[FrameRecord]
    ble: list[BleAdvRecord]
    layout: Optional[SnifferLayout] = None
    zones: Optional[ZoneModel] = None
    labels: dict = field(default_factory=dict)
    truth_dir: Optional[Path] = None
    sources: list[tuple[str, int]] = field(default_factory=list)


# --- argument parsing ----------------------------------------------------------

def _mac_arg(text: str) -> MacAddress:
    try:
        return MacAddress.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _analysis_flags(p: argparse.ArgumentParser, need_input: bool = True) -> None:
    p.add_argument("--input", nargs="+", required=need_input, type=Path, metavar="PATH",
                   help="pcap or frame-record files, or directories holding them")
    p.add_argument("--ble", type=Path, help="BLE advertisement log")
    p.add_argument("--bssid", type=_mac_arg, help="target network; inferred from data frames when absent")
    p.add_argument("--window", type=_positive_int, default=10, help="window length in seconds (default 10)")
    p.add_argument("--layout", type=Path, help="sniffer layout: id, x, y per line (tab-separated)")
    p.add_argument("--pathloss-n", type=float, default=PathLossParams.n, help="path-loss exponent")
    p.add_argument("--pathloss-p0", type=float, default=PathLossParams.p0_dbm, help="RSSI at 1 m in dBm")
    p.add_argument("--zones", type=Path, help="zone reference-point table")
    p.add_argument("--rules", type=Path, help="activity rule file; built-in rules when absent")
    p.add_argument("--labels", type=Path, help="mac and label per line")
    p.add_argument("--oui", type=Path, help="IEEE OUI listing; a small bundled sample when absent")
    p.add_argument("--out", type=Path, help="output directory; tables go to stdout when absent")
    p.add_argument("--format", choices=("csv", "lines"), default="csv")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="homesniff", description="Passive WiFi/BLE smart-home traffic analysis.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", metavar="{" + ",".join(SUBCOMMANDS) + "}",
                                parser_class=_Parser)
    helps = {
        "ingest": "decode captures into one frame-record file",
        "identify": "device table with vendor, BLE name and kind",
        "states": "per-window traffic and off/idle/active states",
        "localize": "positions, zones and mobility",
        "schedule": "sleep/wake, presence and weekly routine",
        "har": "activity events and guests",
        "score": "compare an analysis with simulator ground truth",
        "report": "summary, plot data and figures",
    }
    for name in SUBCOMMANDS:
        if name == "simulate":
            p = sub.add_parser(name, help="generate a labelled synthetic capture")
            p.add_argument("--scenario", default="paper_flat", help="bundled scenario name or JSON file")
            p.add_argument("--seed", type=int, help="override the scenario seed")
            p.add_argument("--out", type=Path, required=True)
            p.add_argument("--pcap", action="store_true", help="also write one radiotap pcap per sniffer")
            continue
        p = sub.add_parser(name, help=helps[name])
        _analysis_flags(p)
        if name in ("score", "report"):
            p.add_argument("--truth", type=Path, help="ground-truth directory written by simulate")
        if name in ("ingest", "report"):
            p.set_defaults(out_required=True)
    return parser


# --- input loading -------------------------------------------------------------

def _read_text(path: Path) -> str:
    try:
        return path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise UsageError(f"no such file: {path}") from None
    except IsADirectoryError:
        raise UsageError(f"expected a file, got a directory: {path}") from None


def _frame_files(path: Path) -> list[Path]:
    if path.is_file():
        return [path]
    if path.is_dir():
        if (path / _FRAME_FILE).is_file():
            return [path / _FRAME_FILE]
        files = sorted(list(path.glob("*.pcap")) + list(path.glob("pcap/*.pcap")) + list(path.glob("*.jsonl")))
        files = [f for f in files if f.name not in ("ble.jsonl", "calibration.jsonl")]
        if not files:
            raise UsageError(f"no capture files in {path}")
        return files
    raise UsageError(f"no such file or directory: {path}")


def _read_frames(path: Path) -> list[FrameRecord]:
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head in (b"\xd4\xc3\xb2\xa1", b"\xa1\xb2\xc3\xd4", b"\x4d\x3c\xb2\xa1", b"\xa1\xb2\x3c\x4d"):
        with open(path, "rb") as fh:
            return list(decode_capture(fh, path.stem))
    with open(path, encoding="utf-8") as fh:
        return list(iter_records(fh))


def _companion(args, key: str) -> Optional[Path]:
    given = getattr(args, key, None)
    if given is not None:
        return given
    for p in args.input or ():
        if p.is_dir() and (p / _COMPANIONS[key]).exists():
            return p / _COMPANIONS[key]
    return None


def load_inputs(args) -> Inputs:
    frames: list[FrameRecord] = []
    sources = []
    for p in args.input:
        for f in _frame_files(p):
            got = _read_frames(f)
            sources.append((str(f), len(got)))
            frames.extend(got)
    frames.sort(key=lambda f: (f.ts_us, f.sniffer_id))
    inp = Inputs(frames=frames, ble=[], sources=sources)
    ble = _companion(args, "ble")
    if ble is not None:
        inp.ble = list(iter_ble_log(io.StringIO(_read_text(ble))))
    layout = _companion(args, "layout")
    if layout is not None:
        inp.layout = parse_layout(_read_text(layout))
    zones = _companion(args, "zones")
    if zones is not None:
        inp.zones = parse_zone_model(_read_text(zones))
    labels = _companion(args, "labels")
    if labels is not None:
        inp.labels = parse_labels(_read_text(labels))
    inp.truth_dir = _companion(args, "truth") if hasattr(args, "truth") else None
    return inp


def _oui_db(args) -> OuiDatabase:
    if args.oui is not None:
        return parse_oui_db(_read_text(args.oui))
    return parse_oui_db(resources.files("homesniff.data").joinpath("oui_sample.txt").read_text(encoding="utf-8"))


def config_from_args(args, inp: Inputs) -> PipelineConfig:
    rules = compile_rules(_read_text(args.rules)) if args.rules is not None else None
    return PipelineConfig(
        window_s=args.window, bssid=args.bssid, layout=inp.layout,
        pathloss=PathLossParams(p0_dbm=args.pathloss_p0, n=args.pathloss_n),
        zone_model=inp.zones, rules=rules, labels=inp.labels, oui_db=_oui_db(args),
    )


# --- output -------------------------------------------------------------------

def _emit(args, tables: Sequence[tuple[str, Table]], stdout) -> None:
    """Write each named table under --out, or the first one to stdout."""
    ext = "csv" if args.format == "csv" else "txt"
    if args.out is None:
        stdout.write(render(tables[0][1], args.format))
        return
    for name, table in tables:
        atomic_write(args.out / f"{name}.{ext}", render(table, args.format))


def _analyze(args) -> tuple[Analysis, Inputs]:
    try:
        inp = load_inputs(args)
        cfg = config_from_args(args, inp)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return run_pipeline(inp.frames, inp.ble, cfg), inp


def _metrics(an: Analysis, truth_dir: Path):
    from homesniff.sim.score import score_against_truth
    from homesniff.sim.truthio import read_truth

    return score_against_truth(an, read_truth(truth_dir)).as_rows()


# --- subcommands ------------------------------------------------------------------

def cmd_ingest(args, stdout) -> None:
    try:
        inp = load_inputs(args)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    buf = io.StringIO()
    write_records(inp.frames, buf)
    atomic_write(args.out / _FRAME_FILE, buf.getvalue())
    # carry companion files forward so the ingest directory is itself a valid input
    for key, name in _COMPANIONS.items():
        src = _companion(args, key)
        if src is None or key == "truth":
            continue
        atomic_write(args.out / name, src.read_bytes())
    per_sniffer: dict[str, list[int]] = {}
    for f in inp.frames:
        s = per_sniffer.setdefault(f.sniffer_id, [0, f.ts_us, f.ts_us])
        s[0] += 1
        s[2] = f.ts_us
    rows = [[sid, str(n), str(a), str(b)] for sid, (n, a, b) in sorted(per_sniffer.items())]
    _emit(args, [("ingest", (["sniffer", "frames", "first_ts_us", "last_ts_us"], rows))], stdout)


def cmd_identify(args, stdout) -> None:
    an, _ = _analyze(args)
    _emit(args, [("devices", identify_table(an)), ("probes", probe_table(an))], stdout)


def cmd_states(args, stdout) -> None:
    an, _ = _analyze(args)
    _emit(args, [("states", state_table(an)), ("kinds", kind_table(an))], stdout)


def cmd_localize(args, stdout) -> None:
    an, _ = _analyze(args)
    _emit(args, [("positions", position_table(an)), ("mobility", mobility_table(an)),
                 ("zones", zone_table(an))], stdout)


def cmd_schedule(args, stdout) -> None:
    an, _ = _analyze(args)
    _emit(args, [("sleep_wake", sleep_table(an)), ("presence", presence_table(an)),
                 ("routine", routine_table(an))], stdout)


def cmd_har(args, stdout) -> None:
    an, _ = _analyze(args)
    _emit(args, [("events", event_table(an)), ("guests", guest_table(an))], stdout)


def cmd_score(args, stdout) -> None:
    an, inp = _analyze(args)
    if inp.truth_dir is None:
        raise UsageError("score needs --truth (or an input directory with a truth/ folder)")
    _emit(args, [("metrics", metrics_table(_metrics(an, inp.truth_dir)))], stdout)


def cmd_report(args, stdout) -> None:
    an, inp = _analyze(args)
    metrics = _metrics(an, inp.truth_dir) if inp.truth_dir is not None else None
    write_bundle(report_bundle(an, metrics), args.out)


def cmd_simulate(args, stdout) -> None:
    import dataclasses

    from homesniff.sim.output import write_simulation
    from homesniff.sim.scenario import load_scenario
    from homesniff.sim.simulate import simulate

    scn = load_scenario(args.scenario)
    if args.seed is not None:
        scn = dataclasses.replace(scn, seed=args.seed)
    res = simulate(scn)
    write_simulation(scn, res, args.out, pcap=args.pcap)


_COMMANDS = {
    "ingest": cmd_ingest, "identify": cmd_identify, "states": cmd_states, "localize": cmd_localize,
    "schedule": cmd_schedule, "har": cmd_har, "simulate": cmd_simulate, "score": cmd_score,
    "report": cmd_report,
}


def run_subcommand(argv: Sequence[str], stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(list(argv))
        if args.command is None:
            raise UsageError("a subcommand is required")
        if getattr(args, "out_required", False) and args.out is None:
            raise UsageError(f"{args.command} needs --out")
    except UsageError as exc:
        stderr.write(f"homesniff: error: {exc}\n")
        if "subcommand is required" in str(exc):
            stderr.write(parser.format_usage())
        return 1
    except SystemExit as exc:  # --help
        return 0 if exc.code in (0, None) else 1
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _COMMANDS[args.command](args, stdout)
    except BrokenPipeError:
        # reader went away (e.g. piped into head); stay quiet at interpreter shutdown too
        try:
            os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        except (OSError, ValueError):
            pass
        return 1
    except (UsageError, HomesniffError, OSError) as exc:
        stderr.write(f"homesniff {args.command}: error: {exc}\n")
        return 1
    except Exception:
        stderr.write(f"homesniff {args.command}: internal error\n")
        traceback.print_exc(file=stderr)
        return 2
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    return run_subcommand(sys.argv[1:] if argv is None else argv)


if __name__ == "__main__":
    sys.exit(main())
