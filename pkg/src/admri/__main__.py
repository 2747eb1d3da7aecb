"""Entry point for ``python -m admri``."""

import sys

from .cli import main

sys.exit(main())
