import csv
import json
import xml.etree.ElementTree as ET

import numpy as np

from dbsirads import report as rp


def test_csv_and_json(tmp_path):
    rp.write_csv(tmp_path / "a.csv", ["x_um", "y"], [(1, 0.1 + 0.2), ("s", np.float64(2.5))])
    rows = list(csv.reader(open(tmp_path / "a.csv")))
    assert rows == [["x_um", "y"], ["1", "0.3"], ["s", "2.5"]]
    rp.write_json(tmp_path / "a.json", {"a": np.arange(3), "b": np.float32(1.5), "c": float("nan"),
                                        "d": (np.int64(4),)})
    d = json.loads((tmp_path / "a.json").read_text())
    assert d == {"a": [0, 1, 2], "b": 1.5, "c": "nan", "d": [4]}


def test_charts_parse_including_degenerate_axes(tmp_path):
    rp.line_chart(tmp_path / "l.svg", [("a", [0, 1, 2], [1, 0.5, 0.2]), ("b", [0, 2], [1, 1e-4])],
                  "t", "x", "y", ylog=True)
    rp.line_chart(tmp_path / "one.svg", [("a", [0.5], [0.5])], "t", "x", "y")
    rp.bar_chart(tmp_path / "b.svg", [("g", [0, 0.1, 0.2], [0.0, 0.3, 0.7]),
                                      ("h", [0, 0.1], [0.2, 0.0])], "t", "x", "y")
    for name in ("l.svg", "one.svg", "b.svg"):
        root = ET.parse(tmp_path / name).getroot()
        assert root.tag.endswith("svg")
    assert "<rect" in (tmp_path / "b.svg").read_text()
