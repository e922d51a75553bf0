# Copyright (C) 2024 refpose contributors
# SPDX-License-Identifier: BSD-2-Clause

"""Warning helper pointing at the first frame outside of the package."""

from __future__ import annotations

import os
import traceback
import warnings

_PACKAGE_PATH = os.path.dirname(__file__)


def _warn_user(msg: str) -> None:
    """Function wrapper for warnings"""
    fstacklevel = len(traceback.extract_stack()) + 1
    for stacktrace in traceback.extract_stack():
        if stacktrace[0].startswith(_PACKAGE_PATH):
            break
        fstacklevel -= 1

    warnings.warn(msg, UserWarning, stacklevel=max(fstacklevel, 1))
