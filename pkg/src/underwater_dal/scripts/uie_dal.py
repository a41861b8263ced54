#!/usr/bin/env python
"""Command line entry point, see ``uie_dal.py --help``."""

import sys

from underwater_dal.cli import dispatch

if __name__ == "__main__":
    sys.exit(dispatch())
