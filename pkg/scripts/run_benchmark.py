"""Run the three-mass chain controller comparison.

Thin wrapper over the ``h2conic benchmark`` subcommand; any extra
arguments are forwarded, e.g.::

    python scripts/run_benchmark.py --mode sample --n 500 --out results/
"""

import sys

from h2conic import cli

if __name__ == "__main__":
    sys.exit(cli.run(["benchmark", *sys.argv[1:]]))
