import xml.etree.ElementTree as ET

import numpy as np
import pytest

from homsurf.convergence import CSV_HEADER, ConvergenceTable
from homsurf.export import convergence_svg, write_csv, write_surface, write_svg
from homsurf.geometry import builtin_scenario

SVG = "{http://www.w3.org/2000/svg}"


def table(k=2):
    t = ConvergenceTable.empty("star_graph", [0.5, 0.25, 0.125], k)
    t.lambda_hom[:] = np.arange(1, k + 1)
    t.lambda_eps[:] = t.lambda_hom * (1 + np.array([[1e-1], [1e-2], [1e-3]]))
    return t


def test_svg_has_one_series_per_k():
    root = ET.fromstring(convergence_svg(table(3)))
    assert len(root.findall(f".//{SVG}polyline")) == 3
    labels = [t.text for t in root.iter(f"{SVG}text")]
    assert {"k = 1", "k = 2", "k = 3"} <= set(labels)


def test_svg_survives_zero_and_nan_errors():
    t = table(2)
    t.lambda_eps[:, 0] = t.lambda_hom[0]  # exact: zero error cannot go on a log axis
    t.lambda_eps[1, 1] = np.nan
    text = convergence_svg(t)
    ET.fromstring(text)
    assert "nan" not in text and "inf" not in text
    ET.fromstring(convergence_svg(ConvergenceTable.empty("s", [0.5], 1)))


def test_csv_and_svg_files(tmp_path):
    t = table()
    p = write_csv(t, tmp_path / "t.csv")
    assert p.read_text().splitlines()[0] == ",".join(CSV_HEADER)
    q = write_svg(t, tmp_path / "t.svg")
    assert ET.parse(q).getroot().tag == f"{SVG}svg"


def test_write_surface(tmp_path):
    imm = builtin_scenario("sphere_latitude", eps=0.25)
    p = write_surface(imm, tmp_path / "s.obj", 8, 16, name="lat")
    lines = p.read_text().splitlines()
    assert lines[0] == "o lat"
    assert sum(s.startswith("v ") for s in lines) == 9 * 16
    assert sum(s.startswith("f ") for s in lines) == 2 * 8 * 16


def test_write_surface_rejects_non_finite(tmp_path):
    imm = builtin_scenario("star_graph", eps=0.25)

    class Broken:
        domain = imm.domain
        name = "broken"

        def __call__(self, p):
            out = imm(p)
            out[..., 0] = np.nan
            return out

    with pytest.raises(ValueError):
        write_surface(Broken(), tmp_path / "bad.obj", 4, 8)
    assert not (tmp_path / "bad.obj").exists()
