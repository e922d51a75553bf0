# Copyright (C) 2024 refpose contributors
# SPDX-License-Identifier: BSD-2-Clause

"""Exceptions raised by refpose.

Every error derives from :class:`RefposeError` and from the builtin that best describes it,
so ``except ValueError`` keeps working for callers that do not know this package."""

from __future__ import annotations

from typing import Optional


class RefposeError(Exception):
    """Base class of all refpose errors."""


class EmptySelection(RefposeError, ValueError):
    """No masked pixel carries a valid depth."""


class DegenerateGeometry(RefposeError, ValueError):
    """A frame or solve is undefined for the given points (collinear, symmetric, rank deficient)."""


class ZeroScale(RefposeError, ValueError):
    """A point set collapses to a single location."""


class ZeroVector(RefposeError, ValueError):
    """A direction or descriptor has zero norm."""


class DimensionMismatch(RefposeError, ValueError):
    """Array shapes of two operands do not agree."""


class NoValidHypothesis(RefposeError, RuntimeError):
    """Every sampled triplet was degenerate."""


class InsufficientCorrespondences(RefposeError, RuntimeError):
    """Fewer than three correspondences survived extraction."""


class EmptyView(RefposeError, ValueError):
    """Back-face culling removed every point."""


class ConfigError(RefposeError, ValueError):
    """Invalid configuration file or value.

    :param message: description of the problem
    :param source: file name (or ``"<dict>"``) the configuration came from
    :param key: dotted key path of the offending entry
    :param line: line number for syntax errors
    :param column: column number for syntax errors"""

    def __init__(
        self,
        message: str,
        source: str = "<dict>",
        key: Optional[str] = None,
        line: Optional[int] = None,
        column: Optional[int] = None,
    ):
        self.source = source
        self.key = key
        self.line = line
        self.column = column
        location = source
        if line is not None:
            location += f":{line}"
            if column is not None:
                location += f":{column}"
        if key is not None:
            location += f": key '{key}'"
        super().__init__(f"{location}: {message}")
