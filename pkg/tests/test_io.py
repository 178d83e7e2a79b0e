import json

import numpy as np
import pytest

from r4.exceptions import InvalidInput, OutputError
from r4.io import (
    build_var_design,
    ensure_dir,
    load_csv_matrix,
    trimmed_mse,
    write_fit,
    write_matrix,
)
from r4.rrr import RegressionData
from r4.solver import PenalizedRowwise, R4Problem, r4_fit
from r4.thresholding import ThresholdRule


def _write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_load_csv_plain_and_header(tmp_path):
    a = load_csv_matrix(_write(tmp_path, "a.csv", "1,2\n3,4.5\n"))
    np.testing.assert_array_equal(a, [[1, 2], [3, 4.5]])
    b = load_csv_matrix(_write(tmp_path, "b.csv", "x1,x2\n1,2\n\n3,4\n"))
    np.testing.assert_array_equal(b, [[1, 2], [3, 4]])
    c = load_csv_matrix(_write(tmp_path, "c.csv", "1e-3\n-2\n"))
    assert c.shape == (2, 1)


@pytest.mark.parametrize("text,needle", [
    ("1,2\n3\n", "row 2"),
    ("1,2\n3,abc\n", "row 2, column 2"),
    ("1,nan\n", "row 1, column 2"),
    ("a,b\n1,inf\n", "row 2, column 2"),
    ("", "no data"),
    ("a,b\n", "header only"),
])
def test_load_csv_errors(tmp_path, text, needle):
    with pytest.raises(InvalidInput, match=needle):
        load_csv_matrix(_write(tmp_path, "bad.csv", text))


def test_load_missing_file(tmp_path):
    with pytest.raises(InvalidInput, match="cannot read"):
        load_csv_matrix(tmp_path / "nope.csv")


def test_var_design():
    S = np.arange(12.0).reshape(6, 2)
    d = build_var_design(S, 1)
    np.testing.assert_array_equal(d.X, S[:5])
    np.testing.assert_array_equal(d.Y, S[1:])
    d2 = build_var_design(S, 2)
    assert d2.n == 4
    np.testing.assert_array_equal(d2.Y[0], S[2])
    with pytest.raises(InvalidInput):
        build_var_design(S, 0)
    with pytest.raises(InvalidInput):
        build_var_design(S, 6)


def test_trimmed_mse():
    pred = np.zeros(10)
    actual = np.arange(1.0, 11.0)
    assert trimmed_mse(pred, actual, 0.0) == pytest.approx(np.mean(actual ** 2))
    # drop the 4 largest squared errors
    assert trimmed_mse(pred, actual, 0.4) == pytest.approx(np.mean(actual[:6] ** 2))
    assert trimmed_mse(pred, actual, 0.05) == pytest.approx(np.mean(actual ** 2))
    with pytest.raises(InvalidInput):
        trimmed_mse(pred, actual, 0.5)
    with pytest.raises(InvalidInput):
        trimmed_mse(pred, actual[:3], 0.1)


def test_matrix_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    A = rng.standard_normal((7, 3)) * 10.0 ** rng.integers(-300, 300, size=(7, 3))
    A[0, 0] = 0.1
    A[1, 1] = -0.0
    write_matrix(tmp_path / "a.csv", A)
    assert np.array_equal(load_csv_matrix(tmp_path / "a.csv"), A)


def test_write_fit_files(tmp_path):
    rng = np.random.default_rng(1)
    X = rng.standard_normal((20, 3))
    Y = X @ rng.standard_normal((3, 2)) + 0.1 * rng.standard_normal((20, 2))
    Y[4] += 30
    fit = r4_fit(R4Problem(RegressionData(X, Y), 1, PenalizedRowwise(ThresholdRule("hard", 5.0))))
    files = write_fit(fit, tmp_path / "out", pic_value=1.5)
    assert [f.name for f in files] == ["B_hat.csv", "C_hat.csv", "outliers.csv", "fit.json"]
    assert np.array_equal(load_csv_matrix(tmp_path / "out" / "B_hat.csv"), fit.B_hat)
    assert np.array_equal(load_csv_matrix(tmp_path / "out" / "C_hat.csv"), fit.C_hat)
    lines = (tmp_path / "out" / "outliers.csv").read_text().splitlines()
    assert lines[0] == "row,norm" and lines[1].startswith("4,")
    meta = json.loads((tmp_path / "out" / "fit.json").read_text())
    assert meta["outlier_rows"] == [4] and meta["pic"] == 1.5 and meta["rule"] == "hard"


def test_outliers_header_only_when_none(tmp_path):
    rng = np.random.default_rng(2)
    X, Y = rng.standard_normal((10, 2)), rng.standard_normal((10, 2))
    fit = r4_fit(R4Problem(RegressionData(X, Y), 1, PenalizedRowwise(ThresholdRule("hard", 1e6))))
    write_fit(fit, tmp_path)
    assert (tmp_path / "outliers.csv").read_text() == "row,norm\n"


def test_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OutputError):
        ensure_dir(blocker / "sub")
