import io
import math

import numpy as np
import pytest

from covbreak.exceptions import DataFormatError
from covbreak.io import IngestSpec, ingest, log_returns, mean_to_sd_ratio


def read(text, **kw):
    return ingest(IngestSpec(**kw), io.StringIO(text))


def test_constants_with_log_returns_are_zero():
    X = read("5,2\n5,2\n5,2\n", log_returns=True)
    assert X.shape == (2, 2)
    np.testing.assert_array_equal(X, 0.0)


def test_exponential_prices_give_unit_returns():
    text = "\n".join(repr(math.exp(k)) for k in range(3)) + "\n"
    X = read(text, log_returns=True)
    np.testing.assert_allclose(X[:, 0], [1.0, 1.0], rtol=1e-15)


def test_center_zeroes_means():
    rng = np.random.default_rng(0)
    rows = rng.normal(loc=50.0, size=(30, 3))
    text = "\n".join(",".join(repr(float(v)) for v in r) for r in rows)
    X = read(text, center=True)
    assert np.abs(X.mean(axis=0)).max() < 1e-12


def test_header_autodetect_and_crlf():
    X = read("a,b\r\n1,2\r\n3,4\r\n")
    np.testing.assert_array_equal(X, [[1, 2], [3, 4]])
    X = read("1,2\n3,4\n")
    assert X.shape == (2, 2)
    with pytest.raises(DataFormatError):
        read("a,b\n1,2\n", header=False)


def test_blank_lines_skipped_and_custom_delimiter():
    X = read("1;2\n\n3;4\n", delimiter=";")
    np.testing.assert_array_equal(X, [[1, 2], [3, 4]])


def test_non_numeric_cell_location():
    with pytest.raises(DataFormatError) as exc:
        read("1,2\n3,x\n")
    assert (exc.value.row, exc.value.column) == (2, 2)
    assert "row 2, column 2" in str(exc.value)


def test_non_finite_cell():
    with pytest.raises(DataFormatError) as exc:
        read("1,2\nnan,4\n")
    assert (exc.value.row, exc.value.column) == (2, 1)


def test_ragged_row():
    with pytest.raises(DataFormatError) as exc:
        read("1,2\n3,4,5\n")
    assert exc.value.row == 2


def test_non_positive_price_location():
    with pytest.raises(DataFormatError) as exc:
        read("h1,h2\n1,2\n1,0\n", log_returns=True)
    # header is line 1, the zero sits on line 3
    assert (exc.value.row, exc.value.column) == (3, 2)


def test_empty_input():
    with pytest.raises(DataFormatError):
        read("\n\n")


def test_log_returns_direct():
    P = np.array([[1.0, 2.0], [2.0, 2.0], [8.0, 1.0]])
    np.testing.assert_allclose(log_returns(P), np.log(P[1:] / P[:-1]), rtol=1e-15)


def test_mean_to_sd_ratio():
    X = np.array([[1.0, 0.0, 3.0], [3.0, 0.0, 3.0]])
    np.testing.assert_array_equal(mean_to_sd_ratio(X), [2.0, 0.0, np.inf])


def test_ingest_from_path(tmp_path):
    f = tmp_path / "d.csv"
    f.write_text("x,y\n1,2\n")
    np.testing.assert_array_equal(ingest(IngestSpec(str(f))), [[1.0, 2.0]])
