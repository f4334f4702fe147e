from pathlib import Path
from typing import Any

import pandas as pd


def format_accuracy(accuracy: Any) -> str:
    """
    Formats a fraction in [0, 1] as a percentage with two decimals.

    Args:
        accuracy: The fraction (e.g. 0.832).

    Returns:
        A string in the format "83.20%".
    """
    if accuracy is None:
        return "n/a"
    return f"{float(accuracy) * 100:.2f}%"


def format_loss(loss: Any) -> str:
    if loss is None:
        return "n/a"
    return f"{float(loss):.5f}"


def write_csv(frame: pd.DataFrame, path: Path) -> Path:
    """
    Writes a CSV artifact with a fixed layout.

    Floats are written with full round-trip precision, no index column and
    ``\\n`` line endings, so identical frames give byte-identical files.
    """
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
    return path
