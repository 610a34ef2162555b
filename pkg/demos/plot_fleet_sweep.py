"""
Production against fleet size
=============================

More trucks help until the shovels saturate.  The sweep rescales the
fleet by cycling the original truck list, so the mix of capacity classes
is preserved, and writes a CSV for plotting elsewhere.
"""

from pathlib import Path
import tempfile

from minedispatch.cli import main

###############################################################################
# The same sweep is available as ``minedispatch sweep``; calling ``main``
# directly keeps this script self-contained.

out = Path(tempfile.mkdtemp()) / "sweep.csv"
main(["sweep", "--scenario", "reduced:2,2,8,60", "--fleet-min", "1", "--fleet-max", "16",
      "--step", "3", "--dispatchers", "naive,shortest_queue,sptf", "--episodes", "3",
      "--out", str(out)])

###############################################################################
# Each row is one (fleet size, dispatcher) pair.

for line in out.read_text().splitlines():
    cols = line.split(",")
    print(f"{cols[0]:>10}  {cols[1]:<15} {cols[3]:>8}")
