#!/usr/bin/env python3
"""
rkhselect - impact point selection for scalar-on-function linear regression.

Main entry point; see `rkhselect --help` for the simulate, select, predict and benchmark commands.
"""

import sys

from rkhselect.cli import main

if __name__ == "__main__":
    sys.exit(main())
