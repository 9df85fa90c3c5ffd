"""
Choosing the Wiener constant w.

The estimated parameters are reused for every run, so only the merge changes. For each w we
print the width of the effective PSF relative to the system PSF, and the noise left in the image
measured against what a noise-free merge with the same weights would give. Small w buys
resolution with noise; large w buys a clean image with a wider PSF. Where to stop depends on the
specimen, which is why w is a command-line flag.

    python3 demos/02_tuning_w.py --n 256
"""
import argparse

import numpy as np

from simrecon.imagecore import embed_spectrum, fft2_centered, ifft2_centered
from simrecon.otfmodel import psf_from_otf, synthesize_otf
from simrecon.psfmetrics import resolution_report
from simrecon.reconstruct import (MergeConfig, effective_transfer, estimate_parameters,
                                  reconstruct_sim)
from simrecon.simulate import SimulationConfig, make_test_object, simulate_stack


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[1])
    ap.add_argument("--n", type=int, default=256)
    ap.add_argument("--noise", type=float, default=10.0, help="noise in percent")
    args = ap.parse_args()
    n, kc = args.n, 0.25

    otf = synthesize_otf(n, kc)
    obj = make_test_object(n, alpha=0.5, seed=1)
    stack, _ = simulate_stack(obj, otf, SimulationConfig(pattern_freq_magnitude=0.75 * kc + 0.3 / n,
                                                         noise_percent=args.noise, rng_seed=2))
    params = estimate_parameters(stack, otf)
    obj_big = embed_spectrum(fft2_centered(obj), 2 * n)
    system = psf_from_otf(otf)

    print("    w   FWHM / system FWHM   residual noise (nRMS)")
    for w in (0.02, 0.05, 0.1, 0.2, 0.4, 0.7, 1.0):
        merge = MergeConfig(w=w)
        res = reconstruct_sim(stack, otf, merge, params=params)
        # the reference is what a perfect noise-free merge with these weights would give
        ref = ifft2_centered(obj_big * effective_transfer(params, otf, merge))
        err = np.sqrt(np.mean((res.image - ref) ** 2)) / np.std(ref)
        rep, _, _ = resolution_report(obj, res.widefield, res.image, system, p=21, n_repeats=3)
        print(f"{w:5.2f}   {rep['ratio']['sim']:18.3f}   {100 * err:20.1f}%")


if __name__ == "__main__":
    main()
