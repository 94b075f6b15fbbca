import math
import xml.etree.ElementTree as ET

import pytest

from conftest import tiny_spec
from qatlab.numerics import DataError
from qatlab.report import AxisMap, contrast_figure, scaling_figure, warmdown_figure
from qatlab.stats import fit_log_linear, predict_interval
from qatlab.trainer import RunRecord
from reference_values import FIT_MEANS, HELDOUT

NS = "{http://www.w3.org/2000/svg}"


def _records(drop=()):
    out = []
    for size, base in (("desk-S", 2.4), ("desk-M", 2.2)):
        for bits, extra in (("FP16", 0.0), ("INT8", 0.001), ("INT6", 0.004)):
            for wd in (0.0, 0.10, 0.33, 0.50):
                if (size, bits, wd) in drop:
                    continue
                for i, seed in enumerate((1337, 42, 0)):
                    spec = tiny_spec(size=size, bits=bits, warmdown=wd, seed=seed)
                    v = base + extra + 0.1 * (wd - 0.4) ** 2 + 0.002 * i
                    out.append(RunRecord(spec=spec.to_dict(), key=spec.cell_key(), final_bpb=v, status="completed"))
    return out


def _points(svg_el):
    return [tuple(map(float, p.split(","))) for p in svg_el.get("points").split()]


def test_warmdown_figure_structure():
    svg = warmdown_figure(_records(), size="desk-S").render()
    root = ET.fromstring(svg.encode())
    lines = root.findall(f"{NS}polyline")
    assert sorted(l.get("class") for l in lines) == ["series-FP16", "series-INT6", "series-INT8"]
    assert all(len(_points(l)) == 4 for l in lines)
    assert len(root.findall(f"{NS}circle")) == 12


def test_warmdown_figure_values_round_trip():
    svg = warmdown_figure(_records(), size="desk-M").render()
    axes = AxisMap.parse(svg)
    line = next(l for l in ET.fromstring(svg.encode()).findall(f"{NS}polyline") if l.get("class") == "series-FP16")
    (px, py) = _points(line)[2]
    assert axes.inv_x(px) == pytest.approx(0.33, abs=1e-6)
    assert axes.inv_y(py) == pytest.approx(2.2 + 0.1 * 0.07 ** 2 + 0.002, abs=1e-6)


def test_missing_cell_breaks_line_and_warns():
    svg = warmdown_figure(_records(drop={("desk-S", "INT6", 0.10)}), size="desk-S").render()
    assert "<!-- warning: missing cell INT6 wd10 -->" in svg
    root = ET.fromstring(svg.encode())
    int6 = [l for l in root.findall(f"{NS}polyline") if l.get("class") == "series-INT6"]
    assert [len(_points(l)) for l in int6] == [2]  # wd00 alone is a point, wd33-wd50 a segment


def test_figures_are_deterministic():
    a = warmdown_figure(_records(), "desk-S").render()
    assert a == warmdown_figure(_records(), "desk-S").render()
    pts = {f"{s}M": v for s, v in FIT_MEANS}
    assert scaling_figure([], points=pts)[0].render() == scaling_figure([], points=pts)[0].render()


def test_scaling_band_round_trips_to_predict_interval():
    pts = {f"{s}M": v for s, v in FIT_MEANS}
    pts.update({f"{s}M": m for s, m, _, _ in HELDOUT})
    held = {f"{s}M" for s, _, _, _ in HELDOUT}
    fig, fit = scaling_figure([], heldout=held, points=pts)
    assert fit == fit_log_linear(FIT_MEANS)
    svg = fig.render()
    axes = AxisMap.parse(svg)
    root = ET.fromstring(svg.encode())
    band = _points(root.find(f"{NS}polygon"))
    n = len(band) // 2
    upper, lower = band[:n], band[n:][::-1]
    for (ux, uy), (lx, ly) in zip(upper, lower):
        assert ux == lx
        size = axes.inv_x(ux)
        pred, half = predict_interval(fit, size)
        assert axes.inv_y(uy) == pytest.approx(pred + half, abs=1e-6)
        assert axes.inv_y(ly) == pytest.approx(pred - half, abs=1e-6)
    assert axes.inv_x(upper[0][0]) == pytest.approx(5, rel=1e-6)
    assert axes.inv_x(upper[-1][0]) == pytest.approx(350, rel=1e-6)
    assert len(root.findall(f"{NS}rect[@class='heldout-point']")) == 5
    assert len(root.findall(f"{NS}circle[@class='fit-point']")) == 4


def test_contrast_figure():
    fig = contrast_figure(_records(), "warmdown", 0.10, 0.33, bits="FP16")
    root = ET.fromstring(fig.render().encode())
    assert root.find(f"{NS}polygon").get("class") == "ci-band"
    assert len(root.findall(f"{NS}circle[@class='penalty-point']")) == 2
    with pytest.raises(DataError):
        contrast_figure(_records(), "warmdown", 0.10, 0.33, bits="INT4")


def test_axis_map_inverse():
    m = AxisMap(math.log(3), math.log(400), -1, 7, "ln")
    for u, v in ((3, -1), (20, 2.5), (400, 7)):
        assert m.inv_x(m.fx(u)) == pytest.approx(u) and m.inv_y(m.fy(v)) == pytest.approx(v)
    assert AxisMap.parse(m.header() + "\n") == m


def test_empty_records():
    with pytest.raises(DataError):
        warmdown_figure([])
