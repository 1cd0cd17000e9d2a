"""Linewidth vs magnetic field at fixed temperature, with its local extrema."""

import argparse
from pathlib import Path

import numpy as np

from echodiff.io import write_table
from echodiff.model import Environment, effective_linewidth, reference_params


def extrema(x, y):
    i = np.arange(1, len(y) - 1)
    return (x[i[(y[i] < y[i - 1]) & (y[i] < y[i + 1])]],
            x[i[(y[i] > y[i - 1]) & (y[i] > y[i + 1])]])


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--temperature", type=float, default=0.7, help="K")
    ap.add_argument("--bmin", type=float, default=1e-3, help="T")
    ap.add_argument("--bmax", type=float, default=2.0, help="T")
    ap.add_argument("--points", type=int, default=400)
    ap.add_argument("--out", type=Path, default=Path("results/linewidth_vs_field.csv"))
    a = ap.parse_args()

    p = reference_params()
    b = np.geomspace(a.bmin, a.bmax, a.points)
    y = np.array([effective_linewidth(Environment(x, a.temperature), p) for x in b])
    a.out.parent.mkdir(parents=True, exist_ok=True)
    write_table(a.out, {"field": b, "linewidth": y}, {"field": "T", "linewidth": "Hz"})
    mins, maxs = extrema(b, y)
    print(f"wrote {a.out}")
    print(f"local minima (T): {np.round(mins, 4).tolist()}")
    print(f"local maxima (T): {np.round(maxs, 4).tolist()}")
    print(f"linewidth range: {y.min() / 1e6:.3f} .. {y.max() / 1e6:.3f} MHz")
