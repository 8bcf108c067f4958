import json

import numpy as np
import pytest

from fibrve import io
from fibrve.generate import regime_params, srm_generate, domain_for
from fibrve.homogenize import effective_properties, PHASE_SETS

from conftest import FIXTURES, random_disks


@pytest.fixture
def ms():
    m, _ = srm_generate(regime_params("equilibrium", 30, 0.5, seed=3), domain_for(30, 0.5))
    return m


def test_json_round_trip_is_bit_exact(tmp_path, ms):
    path = io.save_microstructure(ms, tmp_path / "a.json")
    back = io.load_microstructure(path)
    assert np.array_equal(back.centers, ms.centers) and np.array_equal(back.radii, ms.radii)
    assert back.domain == ms.domain
    assert back.meta["seed"] == 3
    assert not list(tmp_path.glob(".*.tmp"))


def test_csv_round_trip(tmp_path, ms):
    back = io.import_fibers_csv(io.export_fibers_csv(ms, tmp_path / "a.csv"))
    assert np.array_equal(back.centers, ms.centers) and np.array_equal(back.radii, ms.radii)
    assert back.domain == ms.domain


def test_schema_version_checked(tmp_path, ms):
    doc = io.microstructure_to_dict(ms)
    doc["schema_version"] = 99
    p = tmp_path / "v.json"
    p.write_text(json.dumps(doc))
    with pytest.raises(io.SchemaVersionError, match="99"):
        io.load_microstructure(p)
    del doc["schema_version"]
    p.write_text(json.dumps(doc))
    with pytest.raises(io.SchemaVersionError):
        io.load_microstructure(p)


def test_malformed_json_reports_location(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{"schema_version": 1,\n "domain": {"lx": 1, }\n}')
    with pytest.raises(io.FileFormatError, match="line 2, column"):
        io.load_microstructure(p)


def test_bad_fiber_entry_names_the_field(tmp_path):
    doc = {"schema_version": 1, "domain": {"lx": 1, "ly": 1}, "fibers": [[0.5, 0.5, 0.1], [0.2, "x", 0.1]]}
    with pytest.raises(io.FileFormatError, match=r"fibers\[1\]"):
        io.microstructure_from_dict(doc)
    doc["fibers"] = [[0.5, 0.5, -0.1]]
    with pytest.raises(io.FileFormatError, match=r"fibers\[0\]"):
        io.microstructure_from_dict(doc)
    with pytest.raises(io.FileFormatError, match="domain"):
        io.microstructure_from_dict({"schema_version": 1, "fibers": []})


def test_column_mapping_and_crop(tmp_path):
    p = tmp_path / "imagej.csv"
    p.write_text(" ,Area,X,Y,Feret\n1,3.1,10,10,2\n2,3.1,20,10,2\n3,3.1,15,30,2\n4,3.1,40,40,2\n")
    with pytest.raises(io.FileFormatError, match="not found"):
        io.read_micrograph_csv(p)
    data = io.read_micrograph_csv(p, "x=X,y=Y,d=Feret")
    assert data.shape == (4, 3) and data[2, 1] == 30
    ms = io.ingest_micrograph(p, crop=(5, 5, 25, 35), columns={"x": "X", "y": "Y", "d": "Feret"})
    assert not ms.domain.periodic
    assert ms.domain.lx == 20 and ms.domain.ly == 30
    assert ms.n == 4  # fibers outside the window are kept
    assert np.allclose(ms.centers[0], [5, 5])
    with pytest.raises(ValueError):
        io.parse_column_map("x:X")
    with pytest.raises(ValueError):
        io.parse_column_map("z=Z")
    with pytest.raises(ValueError):
        io.ingest_micrograph(p, crop=(30, 30, 10, 10), columns="x=X,y=Y,d=Feret")


def test_micrograph_rows_are_validated(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("x,y,d\n1,2,3\n1,nan,3\n")
    with pytest.raises(io.FileFormatError, match="data row 2"):
        io.read_micrograph_csv(p)
    p.write_text("x,y,d\n1,2,-3\n")
    with pytest.raises(io.FileFormatError, match="positive"):
        io.read_micrograph_csv(p)
    p.write_text("# only a comment\n")
    with pytest.raises(io.FileFormatError, match="header"):
        io.read_micrograph_csv(p)


def test_fixture_micrographs_ingest():
    for name, vf in (("micrograph_547.csv", 0.547), ("micrograph_673.csv", 0.673)):
        ms = io.ingest_micrograph(FIXTURES / name)
        from fibrve.geometry import volume_fraction

        assert volume_fraction(ms) == pytest.approx(vf, abs=0.03)
        assert ms.meta["units"] == "um"


def test_field_dump_round_trip_and_truncation(tmp_path):
    f = np.random.default_rng(0).normal(size=(5, 4, 2))
    p = io.dump_field(tmp_path / "f.bin", f)
    assert np.array_equal(io.load_field(p), f)
    p.write_bytes(p.read_bytes()[:-8])
    with pytest.raises(io.FileFormatError, match="offset"):
        io.load_field(p)
    p.write_bytes(b"\x01\x00")
    with pytest.raises(io.FileFormatError, match="truncated"):
        io.load_field(p)


def test_results_csv_has_fixed_columns(tmp_path):
    ms = random_disks(8, lx=5, ly=5, r=0.6, seed=0)
    props = effective_properties(ms, PHASE_SETS["contrast_25"], nx=16)
    row = io.result_row(props, "demo")
    path = io.write_results_csv(tmp_path / "r.csv", [row])
    header, rows, _ = io.read_csv_rows(path)
    assert header[: len(io.RESULT_FIELDS)] == list(io.RESULT_FIELDS)
    assert rows[0][0] == "demo"
    assert float(rows[0][header.index("E_transverse")]) == pytest.approx(props.E_transverse)


def test_config_loading(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("phases: contrast_25\nsrm:\n  min_gap: 0.02\n")
    assert io.load_config(p) == {"phases": "contrast_25", "srm": {"min_gap": 0.02}}
    p.write_text("phases: [unclosed\n")
    with pytest.raises(io.FileFormatError):
        io.load_config(p)
