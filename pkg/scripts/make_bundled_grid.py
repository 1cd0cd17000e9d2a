"""Regenerate the bundled noiseless linewidth grid used by `echodiff fit surface`."""

from pathlib import Path

import numpy as np

from echodiff.io import write_table
from echodiff.model import linewidth_grid, reference_params

FIELDS = np.geomspace(0.02, 2.0, 12)
TEMPS = np.linspace(0.6, 1.3, 8)
REL_SIGMA = 0.05

if __name__ == "__main__":
    p = reference_params()
    g = linewidth_grid(FIELDS, TEMPS, p)  # shape (fields, temps)
    B, T = np.meshgrid(FIELDS, TEMPS, indexing="ij")
    out = Path(__file__).resolve().parents[1] / "src" / "echodiff" / "data" / "reference_grid.csv"
    write_table(out, {"field": B.ravel(), "temperature": T.ravel(), "linewidth": g.ravel(),
                      "sigma": REL_SIGMA * g.ravel()},
                {"field": "T", "temperature": "K", "linewidth": "Hz", "sigma": "Hz"})
    print(f"wrote {out} ({g.size} points)")
