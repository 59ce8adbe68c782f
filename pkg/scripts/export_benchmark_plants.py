"""Write the benchmark plant models to JSON for use with the CLI.

Produces three files in the output directory (default ``models/``):
``g1.json`` (idealized velocity-measured chain), ``g2.json`` (realistic
chain with filtered position measurements) and ``g2_channel.json``
(the square control channel of g2, for ``analyze-cone``).
"""

import argparse
import os

from h2conic.benchmark import ParamGrid, build_chain_plant
from h2conic.lti import save_json


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="models", help="output directory")
    args = parser.parse_args()
    os.makedirs(args.out, exist_ok=True)
    nominal = ParamGrid().nominal
    g1 = build_chain_plant(nominal, output="velocity")
    g2 = build_chain_plant(nominal, output="filtered_position")
    save_json(g1, os.path.join(args.out, "g1.json"))
    save_json(g2, os.path.join(args.out, "g2.json"))
    save_json(g2.control_channel(), os.path.join(args.out, "g2_channel.json"))
    print(f"wrote g1.json, g2.json, g2_channel.json in {args.out}")


if __name__ == "__main__":
    main()
