import pytest

from eegdecode.errors import InvalidInputError
from eegdecode.report import CorrelationEntry, MethodResult, format_accuracy, format_correlation, run_report


def test_mean_sd_style():
    assert format_accuracy([0.6, 0.7, 0.8]) == "(70.0 ± 10.0) %"
    assert format_accuracy([0.782, 0.782]) == "(78.2 ± 0.0) %"


def test_single_subject_footnote():
    assert format_accuracy([0.75]) == "(75.0 ± 0.0) %*"
    text = run_report([MethodResult("rLDA", (0.75,))])
    assert "n=1" in text.splitlines()[-1]
    assert "n=1" not in run_report([MethodResult("rLDA", (0.7, 0.8))])


def test_table_rows():
    text = run_report([
        MethodResult("ConvNet", (0.6, 0.7, 0.8), paradigm="P1", interval="2.5-5 s", p_values=(0.001, 0.2, 0.03)),
        MethodResult("rLDA", (0.5, 0.6, 0.7), paradigm="P1", interval="2.5-5 s"),
    ])
    lines = text.splitlines()
    assert lines[0] == "Decoding accuracy"
    assert lines[1].split(" | ")[0].strip() == "paradigm"
    row = [c.strip() for c in lines[3].split(" | ")]
    assert row == ["P1", "2.5-5 s", "ConvNet", "3", "(70.0 ± 10.0) %", "0.001, 0.2, 0.03"]
    assert lines[4].rstrip().endswith("-")


def test_correlation_grid():
    assert format_correlation(0.913, 0.0001) == "0.913 (0.0001)"
    text = run_report(
        [MethodResult("a", (0.6, 0.7)), MethodResult("b", (0.5, 0.9))],
        [CorrelationEntry("a", "b", 0.5, 0.25)],
    )
    grid = text.split("Linear correlation r (p)\n")[1].splitlines()
    assert [c.strip() for c in grid[2].split(" | ")] == ["a", "-", "0.500 (0.25)"]
    assert [c.strip() for c in grid[3].split(" | ")] == ["b", "0.500 (0.25)", "-"]


def test_invalid_inputs():
    with pytest.raises(InvalidInputError):
        run_report([])
    with pytest.raises(InvalidInputError):
        MethodResult("x", (1.2,))
    with pytest.raises(InvalidInputError):
        MethodResult("x", ())
    with pytest.raises(InvalidInputError):
        format_accuracy([])
    with pytest.raises(InvalidInputError):
        run_report([MethodResult("a", (0.5,))], [CorrelationEntry("a", "b", float("nan"), 1.0)])
