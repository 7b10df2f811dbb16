"""
Utility functions and the error hierarchy for TsallisSeg.
"""
from fractions import Fraction
from typing import List


class TsallisSegError(Exception):
    """Base class for all project errors."""


class NonFiniteError(TsallisSegError, ValueError):
    """A NaN or Inf escaped a numerical routine."""


class TrainingDivergedError(TsallisSegError, RuntimeError):
    """Training produced a non-finite loss."""


class ConfigError(TsallisSegError, ValueError):
    """A config file or CLI value failed validation."""


class CoverageError(TsallisSegError, ValueError):
    """A score table or SEA input does not cover every (row, attack) pair."""


class TSEGFormatError(TsallisSegError, ValueError):
    """A TSEG1 payload is malformed."""


def parse_fraction(text: str) -> float:
    """
    Parse a radius written as "8/255", "0.5/255" or "0.03" exactly.

    The numerator and denominator are read as exact decimals, so "8/255"
    becomes the float nearest to 8/255 rather than a rounded literal.

    Args:
        text: Fraction or decimal string

    Returns:
        The value as a float

    Raises:
        ValueError: on malformed input or zero denominator
    """
    text = text.strip()
    try:
        if "/" in text:
            num, den = text.split("/", 1)
            value = Fraction(num.strip()) / Fraction(den.strip())
        else:
            value = Fraction(text)
    except (ValueError, ZeroDivisionError) as e:
        raise ValueError(f"Cannot parse '{text}' as a fraction: {e}") from e
    return float(value)


def format_eps(eps: float) -> str:
    """Render a radius as N/255 when it is a clean multiple, else as a decimal."""
    scaled = Fraction(eps).limit_denominator(10_000) * 255
    if scaled.denominator in (1, 2, 4):
        return f"{float(scaled):g}/255"
    return f"{eps:.6g}"


def split_list(text: str) -> List[str]:
    """Split a comma-separated config value, dropping blanks."""
    return [item.strip() for item in text.split(",") if item.strip()]
