import json

import numpy as np
import pytest

from cpt.io import (DataError, Manifest, dump_json, read_contrast, read_permutation,
                    read_table, validate, write_permutation)


def test_read_table(tmp_path):
    f = tmp_path / "d.csv"
    f.write_text('y,"x 1"\n1,2\n\n3.5,-4e-1\n')
    t = read_table(f)
    assert t.columns == ["y", "x 1"]
    np.testing.assert_array_equal(t.values, [[1, 2], [3.5, -0.4]])
    np.testing.assert_array_equal(t.column("x 1"), [2, -0.4])
    with pytest.raises(DataError, match="no column"):
        t.column("z")


@pytest.mark.parametrize("body,line", [
    ("y,x\n1,2\n3\n", 3),
    ("y,x\n1,2\n3,abc\n", 3),
    ("y,x\n1,nan\n", 2),
    ("y,y\n1,2\n", 1),
    ('y,x\n1,"2\n', 2),
])
def test_malformed_tables_name_the_line(tmp_path, body, line):
    f = tmp_path / "bad.csv"
    f.write_text(body)
    with pytest.raises(DataError, match=f"bad.csv:{line}:"):
        read_table(f)


def test_missing_and_empty(tmp_path):
    with pytest.raises(DataError):
        read_table(tmp_path / "nope.csv")
    (tmp_path / "e.csv").write_text("")
    with pytest.raises(DataError, match="empty"):
        read_table(tmp_path / "e.csv")
    (tmp_path / "h.csv").write_text("y,x\n")
    with pytest.raises(DataError, match="no data"):
        read_table(tmp_path / "h.csv")


def test_contrast_file(tmp_path):
    f = tmp_path / "R.csv"
    f.write_text("c1,c2\n1,0\n-1,0\n0,1\n")
    np.testing.assert_array_equal(read_contrast(f, 3), [[1, 0], [-1, 0], [0, 1]])
    with pytest.raises(DataError, match="4 rows"):
        read_contrast(f, 4)


def test_permutation_round_trip(tmp_path):
    perm = np.random.default_rng(0).permutation(9)
    f = write_permutation(perm, tmp_path / "p.txt")
    assert f.read_text().split()[0] == str(perm[0] + 1)
    np.testing.assert_array_equal(read_permutation(f, 9), perm)
    with pytest.raises(DataError):
        read_permutation(f, 10)
    f.write_text("1\n1\n2\n")
    with pytest.raises(DataError):
        read_permutation(f, 3)


def test_json_cleaning(tmp_path):
    f = dump_json({"b": np.float64(np.nan), "a": [np.int64(2), np.inf], "c": np.bool_(True)},
                  tmp_path / "o.json")
    assert json.loads(f.read_text()) == {"a": [2, "inf"], "b": None, "c": True}
    assert f.read_text().index('"a"') < f.read_text().index('"b"')


def test_schema_violation_reports_path():
    with pytest.raises(DataError, match=r"\$\.signalLevels"):
        validate({"signalLevels": []}, "scenario")
    with pytest.raises(DataError, match=r"\$\.designFamily"):
        validate({"signalLevels": [0], "designFamily": "poisson"}, "scenario")


def test_manifest(tmp_path):
    src = tmp_path / "in.csv"
    src.write_text("y\n1\n")
    out = tmp_path / "out.txt"
    out.write_text("x")
    man = Manifest("test", ["test", str(src)], {"alpha": 0.05}, 7, [src])
    man.outputs.append(str(out))
    data = json.loads(man.write(tmp_path / "m.json").read_text())
    assert data["seed"] == 7 and data["inputs"][0]["sha256"]
    assert data["outputs"][0]["path"] == str(out)
    assert "elapsed_seconds" in data["wall_clock"]
