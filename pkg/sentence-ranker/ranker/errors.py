"""Exception hierarchy shared by every ranker module."""

from __future__ import annotations

from typing import Optional


class RankerError(Exception):
    """Base class for all errors raised deliberately by the ranker."""


class ShapeError(RankerError, ValueError):
    """Tensor shapes do not agree for the requested operation."""


class ContractError(RankerError, ValueError):
    """A caller violated an operation's precondition."""


class InputError(RankerError, ValueError):
    """User-supplied data (tokens, corpora, orders) is invalid."""


class CorpusFormatError(InputError):
    """A corpus or vocabulary file could not be parsed or validated."""

    def __init__(
        self,
        message: str,
        *,
        line_number: Optional[int] = None,
        paragraph_id: Optional[str] = None,
    ) -> None:
        self.line_number = line_number
        self.paragraph_id = paragraph_id
        prefix = ""
        if line_number is not None:
            prefix += f"line {line_number}: "
        if paragraph_id is not None:
            prefix += f"paragraph {paragraph_id!r}: "
        super().__init__(prefix + message)


class ConfigError(RankerError, ValueError):
    """Run configuration or checkpoint settings are inconsistent."""


class GradientCheckError(RankerError, RuntimeError):
    """Analytic gradients disagree with finite differences."""
