#!/usr/bin/env python3
"""Two offset notches driven to coalescence on the adaptive solver."""

import sys

from hydrofrac.cli import main

if __name__ == "__main__":
    sys.exit(main(["run-gl", "--config", "example2"]))
