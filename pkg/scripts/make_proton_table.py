"""Regenerate the bundled synthetic proton table.

The positions are illustrative geometry, not crystallographic data: 574
points uniform in volume in a 0.35-1.2 nm shell around the electron.
"""

import argparse
from pathlib import Path

from arise.ensemble import positions_to_csv, synthetic_positions


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=574)
    ap.add_argument("--seed", type=int, default=2024)
    ap.add_argument("--out", type=Path, default=Path(__file__).parents[1] / "src/arise/data/protons_synthetic.csv")
    args = ap.parse_args()
    args.out.write_text(positions_to_csv(synthetic_positions(args.n, seed=args.seed)))
    print(f"wrote {args.n} positions to {args.out}")


if __name__ == "__main__":
    main()
