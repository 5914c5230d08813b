import os
import tempfile
from fractions import Fraction
from pathlib import Path
from typing import Union

RationalInput = Union[Fraction, int, float, str]


def parse_rational(value: RationalInput) -> Fraction:
    """Parse an exact rational from an int, a decimal/"n/d" string or a float.

    Floats go through their shortest decimal repr so "0.1" and 0.1 agree.
    """
    if isinstance(value, bool):
        raise ValueError(f"Expected a rational number, got {value!r}.")
    if isinstance(value, Fraction):
        return value
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        return Fraction(repr(value))
    if isinstance(value, str):
        text = value.strip()
        if not text:
            raise ValueError("Expected a rational number, got an empty string.")
        try:
            return Fraction(text)
        except (ValueError, ZeroDivisionError) as exc:
            raise ValueError(f"Expected a rational number, got {value!r}.") from exc
    raise ValueError(f"Expected a rational number, got {value!r}.")


def format_rational(value: Fraction) -> str:
    if value.denominator == 1:
        return str(value.numerator)
    return f"{value.numerator}/{value.denominator}"


def transmission_time(size_bytes: int, rate_bps: int) -> Fraction:
    return Fraction(size_bytes * 8, rate_bps)


def atomic_write_text(path: Union[str, Path], content: str) -> None:
    """Write content to path through a temporary file in the same directory."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, temp_path = tempfile.mkstemp(prefix=f".{target.name}.", dir=target.parent)
    try:
        with os.fdopen(fd, 'w', encoding='utf-8', newline='') as handle:
            handle.write(content)
        os.replace(temp_path, target)
    except BaseException:
        if os.path.exists(temp_path):
            os.unlink(temp_path)
        raise
