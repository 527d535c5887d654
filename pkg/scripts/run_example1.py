#!/usr/bin/env python3
"""Single straight pressurized notch: both solvers, then trace comparison."""

import sys

from hydrofrac.cli import main

if __name__ == "__main__":
    rc = main(["run-gl", "--config", "example1"])
    rc |= main(["run-single", "--config", "example1"])
    rc |= main(
        ["compare", "out/example1/gl.csv", "out/example1/single.csv", "--rtol", "0.1"]
    )
    sys.exit(rc)
