# Copyright (C) 2024 refpose contributors
# SPDX-License-Identifier: BSD-2-Clause

from .cli import main

raise SystemExit(main())
