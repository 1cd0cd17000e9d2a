"""Monte Carlo telegraph echo vs the exact single-class result, in standard errors."""

import argparse

import numpy as np

from echodiff.echo import single_channel_decay
from echodiff.mc import MCEnsembleConfig, PerturberClass, exact_echo_2ppe, mc_echo_2ppe

COMBOS = [(1e5, 2e5), (1e6, 1e6), (1e6, 3e5), (1e7, 1e6), (3e7, 1.5e6)]

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--ions", type=int, default=100_000)
    ap.add_argument("--seed", type=int, default=100)
    a = ap.parse_args()

    print(f"{'R (Hz)':>9} {'shift':>9} {'R*t':>5} {'MC':>9} {'exact':>9} {'z':>6} {'sudden-jump':>12}")
    for k, (rate, shift) in enumerate(COMBOS):
        t = np.array([0.1, 0.3, 1.0, 3.0, 10.0]) / rate
        cfg = MCEnsembleConfig([PerturberClass(rate, 0.0, shift)], n_ions=a.ions, seed=a.seed + k)
        tr = mc_echo_2ppe(t, cfg)
        exact = exact_echo_2ppe(t, cfg)
        # phenomenological single-channel form with the telegraph's full shift as its amplitude
        sj = single_channel_decay(t, 0.0, shift, rate)
        for i in range(len(t)):
            z = (tr.intensities[i] - exact[i]) / tr.stderr[i]
            print(f"{rate:9.3g} {shift:9.3g} {rate * t[i]:5.1f} {tr.intensities[i]:9.5f} {exact[i]:9.5f} "
                  f"{z:6.2f} {sj[i]:12.5f}")
