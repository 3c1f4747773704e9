"""Allow ``python -m lfmc``."""

import sys

from lfmc.cli import main

sys.exit(main())
