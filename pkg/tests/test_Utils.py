import pandas as pd

from mcfa.modules.Utils import format_accuracy, format_loss, write_csv


def test_format_accuracy():
    assert format_accuracy(0.832) == "83.20%"
    assert format_accuracy(1) == "100.00%"
    assert format_accuracy(0.0) == "0.00%"

    # Test None
    assert format_accuracy(None) == "n/a"


def test_format_loss():
    assert format_loss(0.693147) == "0.69315"
    assert format_loss(2) == "2.00000"
    assert format_loss(None) == "n/a"


def test_write_csv_is_byte_stable(tmp_path):
    frame = pd.DataFrame({"index": [3, 1], "p0": [0.1, 1 / 3]})
    first = write_csv(frame, tmp_path / "a" / "out.csv")
    second = write_csv(frame.copy(), tmp_path / "b" / "out.csv")
    assert first.read_bytes() == second.read_bytes()
    assert b"\r\n" not in first.read_bytes()
    assert first.read_text().splitlines()[0] == "index,p0"


def test_write_csv_round_trips_floats(tmp_path):
    values = [1 / 3, 2 / 7, 1e-17]
    path = write_csv(pd.DataFrame({"p": values}), tmp_path / "floats.csv")
    assert pd.read_csv(path, float_precision="round_trip")["p"].tolist() == values
