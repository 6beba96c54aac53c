import os
import stat

import pytest

from homesniff.pipeline import PipelineConfig, learn_zone_model, run_pipeline
from homesniff.report import (
    atomic_write,
    fnum,
    identify_table,
    plot_data,
    render_csv,
    render_lines,
    report_bundle,
    write_bundle,
)
from homesniff.sim.scenario import bundled_scenario_data, load_scenario
from homesniff.sim.simulate import simulate, simulate_calibration

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


def analyse():
    data = bundled_scenario_data("paper_flat")
    data["duration_s"] = 2 * 3600
    scn = load_scenario(data)
    res = simulate(scn)
    zm = learn_zone_model(*simulate_calibration(scn), scn.layout, scn.window_s)
    cfg = PipelineConfig(layout=scn.layout, zone_model=zm,
                         labels={d.mac: d.label for d in scn.all_devices})
    return run_pipeline(res.all_frames(), res.ble, cfg)


@pytest.fixture(scope="module")
def an():
    return analyse()


def test_number_formatting():
    assert fnum(None) == ""
    assert fnum(float("nan")) == "nan"
    assert fnum(float("-inf")) == "-inf"
    assert fnum(-0.0001) == "0.000"
    assert fnum(2.5, 1) == "2.5"


def test_csv_quotes_and_lines_escape_spaces():
    table = (["mac", "vendor"], [["aa", "TP-LINK, Inc."], ["bb", ""]])
    assert render_csv(table) == 'mac,vendor\naa,"TP-LINK, Inc."\nbb,\n'
    assert render_lines(table) == "mac=aa vendor=TP-LINK,_Inc.\nmac=bb vendor=\n"
    assert render_lines((["a"], [])) == ""


def test_identify_table_lists_every_device(an):
    header, rows = identify_table(an)
    assert "mac" in header
    assert sorted(r[header.index("mac")] for r in rows) == sorted(str(m) for m in an.devices)


def test_plot_data_is_tab_separated_with_header(an):
    files = plot_data(an)
    assert files
    for text in files.values():
        lines = text.splitlines()
        width = len(lines[0].split("\t"))
        assert all(len(line.split("\t")) == width for line in lines[1:])


def test_bundle_is_deterministic_and_has_figures(an):
    first = report_bundle(an)
    assert first == report_bundle(analyse())
    assert list(first) == sorted(first)
    pngs = [k for k in first if k.endswith(".png")]
    assert "plots/events.png" in pngs
    assert all(first[k].startswith(PNG_MAGIC) for k in pngs)
    # every figure sits next to its delimited data
    stems = {k.rsplit(".", 2)[0] for k in first if k.startswith("plots/") and not k.endswith(".png")}
    assert {k.rsplit(".", 2)[0] for k in pngs if k != "plots/events.png"} <= stems
    assert report_bundle(an, images=False).keys() == {k for k in first if not k.endswith(".png")}


def test_atomic_write_respects_umask_and_leaves_no_temp(tmp_path):
    old = os.umask(0o027)
    os.umask(old)
    target = tmp_path / "sub" / "f.txt"
    atomic_write(target, "x")
    atomic_write(target, b"yz")
    assert target.read_bytes() == b"yz"
    assert os.listdir(target.parent) == ["f.txt"]
    assert stat.S_IMODE(target.stat().st_mode) == 0o666 & ~old


def test_write_bundle(tmp_path):
    paths = write_bundle({"a.txt": b"1", "plots/b.tsv": b"2"}, tmp_path)
    assert [p.relative_to(tmp_path).as_posix() for p in paths] == ["a.txt", "plots/b.tsv"]
