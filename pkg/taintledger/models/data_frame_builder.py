from fractions import Fraction
from typing import Any, Iterable, Mapping

import pandas as pd

SCORE_DECIMALS = 6


def render_score(value: Fraction) -> str:
    """Fixed-precision decimal rendering of an exact score."""
    scaled = round(value * 10**SCORE_DECIMALS)
    sign = "-" if scaled < 0 else ""
    whole, frac = divmod(abs(scaled), 10**SCORE_DECIMALS)
    return f"{sign}{whole}.{frac:0{SCORE_DECIMALS}d}"


class DataFrameBuilder:
    """Builds pandas DataFrames from report rows."""

    def build(self, rows: Iterable[Mapping[str, Any]], columns: list[str]) -> pd.DataFrame:
        """Rows to a DataFrame; Fractions become fixed-precision strings, big ints become text."""
        data = [{c: self._cell(row.get(c)) for c in columns} for row in rows]
        return pd.DataFrame(data, columns=columns)

    @staticmethod
    def _cell(value: Any) -> Any:
        if isinstance(value, Fraction):
            return render_score(value)
        if isinstance(value, bool):
            return value
        if isinstance(value, int) and abs(value) >= 2**53:
            return str(value)
        return value

    def to_csv(self, frame: pd.DataFrame) -> str:
        return frame.to_csv(index=False, lineterminator="\n")

    def to_json(self, frame: pd.DataFrame) -> str:
        return frame.to_json(orient="records", indent=None)
