import json
import math

import numpy as np
import pandas as pd

from riq.constants import RESIDUAL_COLUMNS, TOOL_VERSION, VEC_CONVENTION
from riq.reporting import matrix_to_pairs, residual_frame, worst_failure, write_csv, write_json, write_markdown_report


def test_write_json_is_sorted_and_tagged(tmp_path):
    path = write_json(
        {"zeta": np.float64(0.5), "alpha": math.inf, "z": 1 + 2j, "count": np.int64(3), "flag": np.bool_(True)},
        tmp_path / "nested" / "report.json",
    )
    text = path.read_text()
    assert text.endswith("}\n")
    document = json.loads(text)
    assert list(document) == sorted(document)
    assert document["alpha"] == "inf"
    assert document["z"] == [1.0, 2.0]
    assert document["count"] == 3 and document["flag"] is True
    assert document["convention"] == VEC_CONVENTION
    assert document["version"] == TOOL_VERSION


def test_matrix_to_pairs_is_row_major():
    assert matrix_to_pairs(np.array([[1, 2j], [3, 4]])) == [[[1.0, 0.0], [0.0, 2.0]], [[3.0, 0.0], [4.0, 0.0]]]


def test_write_csv_uses_fixed_float_format(tmp_path):
    path = write_csv(pd.DataFrame({"k": [1, 2], "error": [0.25, 1e-3]}), tmp_path / "sweep.csv")
    header = f"# convention={VEC_CONVENTION}; version={TOOL_VERSION}\n"
    assert path.read_text() == header + "k,error\n1,2.500000000000e-01\n2,1.000000000000e-03\n"
    frame = pd.read_csv(path, comment="#")
    assert list(frame.columns) == ["k", "error"]
    assert frame["error"].tolist() == [0.25, 1e-3]


def test_residual_frame_and_worst_failure():
    frame = residual_frame(
        {"a": 1e-12, "b": 1e-3, "c": 5e-2, "gap": 0.5},
        {"b": 1e-2},
        1e-9,
        lower_bounds={"gap": 1e-3},
    )
    assert list(frame.columns) == RESIDUAL_COLUMNS
    assert list(frame["passed"]) == [True, True, False, True]
    assert worst_failure(frame)["check"] == "c"
    assert worst_failure(frame[frame["passed"]]) is None


def test_markdown_report_has_sections(tmp_path):
    frame = residual_frame({"a": 0.0}, {}, 1e-9)
    path = write_markdown_report(tmp_path / "r.md", "Checks", {"Residuals": frame}, notes=["skipped one"])
    text = path.read_text()
    assert text.startswith("# Checks\n")
    assert "## Residuals" in text
    assert "- skipped one" in text
    assert TOOL_VERSION in text
