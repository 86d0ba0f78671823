import math
import xml.etree.ElementTree as ET

from edgenids.svgplot import Chart, render, write

NS = "{http://www.w3.org/2000/svg}"


def test_parses_and_embeds_points(tmp_path):
    c = Chart("t", "x", "y", logx=True).add("a", [1, 10, 100], [0.5, 0.25, 0.125])
    write(c, tmp_path / "c.svg")
    root = ET.parse(tmp_path / "c.svg").getroot()
    titles = [t.text for t in root.iter(f"{NS}title")]
    assert titles == ["a: x=1 y=0.5", "a: x=10 y=0.25", "a: x=100 y=0.125"]
    (line,) = root.iter(f"{NS}polyline")
    assert line.get("data-label") == "a"


def test_reference_line_and_secondary_axis():
    c = Chart("t", "x", "y", hline=1.0, y2label="ms", logy=True)
    c.add("r", [1, 2], [0.5, 2.0]).add("lat", [1, 2], [3.0, 4.0], secondary=True)
    svg = render(c)
    ET.fromstring(svg)
    assert svg.count('class="reference"') == 1
    assert "stroke-dasharray" in svg and ">ms<" in svg


def test_drops_unplottable_points():
    c = Chart("t", "x", "y", logy=True).add("a", [1, 2, 3], [1.0, math.nan, 0.0])
    svg = render(c)
    assert svg.count("<circle") == 1


def test_escapes_labels():
    svg = render(Chart("a<b", "x", "y").add("p&q", [0, 1], [0, 1]))
    ET.fromstring(svg)
    assert "p&amp;q" in svg


def test_empty_chart_renders():
    ET.fromstring(render(Chart("empty", "x", "y")))
