"""Visualize the closed-form energies between two diagonal Gaussians.

Left: Bhattacharyya coefficient as one Gaussian slides past another, for
several width ratios.  The overlap is symmetric and peaks when the centers
coincide.  Middle: the two KL directions over the same sweep; the divergence
out of the narrow Gaussian into the wide one stays small, which is exactly
the asymmetry the ranking loss exploits.  Right: the same pair drawn as
boxes at one and two standard deviations.

Writes demos/out/energy_landscape.png.
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from gaussbox.geometry import (
    Box,
    DiagGaussian,
    bhattacharyya_coefficient,
    box_to_gaussian,
    kl_divergence,
)

OUT = Path(__file__).parent / "out"


def slide(metric, v1, v2, shifts):
    a = DiagGaussian(np.array([0.0]), np.array([v1]))
    return [metric(a, DiagGaussian(np.array([s]), np.array([v2]))) for s in shifts]


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    shifts = np.linspace(-6.0, 6.0, 241)
    fig, (ax1, ax2, ax3) = plt.subplots(1, 3, figsize=(13, 4))

    for v2, style in ((1.0, "-"), (4.0, "--"), (0.25, ":")):
        bc = slide(bhattacharyya_coefficient, 1.0, v2, shifts)
        ax1.plot(shifts, bc, style, label=f"variances 1 vs {v2}")
    ax1.set_title("overlap while sliding")
    ax1.set_xlabel("center distance")
    ax1.set_ylabel("Bhattacharyya coefficient")
    ax1.legend()

    narrow_into_wide = slide(lambda p, q: kl_divergence(p, q), 0.25, 4.0, shifts)
    wide_into_narrow = slide(lambda p, q: kl_divergence(q, p), 0.25, 4.0, shifts)
    ax2.plot(shifts, narrow_into_wide, label="KL(narrow || wide)")
    ax2.plot(shifts, wide_into_narrow, label="KL(wide || narrow)")
    ax2.set_yscale("log")
    ax2.set_title("KL is direction sensitive")
    ax2.set_xlabel("center distance")
    ax2.set_ylabel("KL divergence")
    ax2.legend()

    parent = Box(np.array([0.0, 0.0]), np.array([2.0, 1.6]))
    child = Box(np.array([0.7, -0.3]), np.array([0.7, 0.5]))
    for box, color, name in ((parent, "tab:blue", "parent"), (child, "tab:orange", "child")):
        for sigma, alpha in ((1, 0.9), (2, 0.35)):
            lo = box.center - sigma * box.offset
            width = 2 * sigma * box.offset
            ax3.add_patch(plt.Rectangle(lo, width[0], width[1], fill=False,
                                        edgecolor=color, alpha=alpha,
                                        label=f"{name} ({sigma} sigma)" if sigma == 1 else None))
    bc = bhattacharyya_coefficient(box_to_gaussian(parent), box_to_gaussian(child))
    ax3.set_xlim(-5, 5)
    ax3.set_ylim(-4, 4)
    ax3.set_aspect("equal")
    ax3.set_title(f"boxes at 1 and 2 sigma; overlap {bc:.3f}")
    ax3.legend(loc="lower left")

    fig.tight_layout()
    target = OUT / "energy_landscape.png"
    fig.savefig(target, dpi=130)
    print(f"wrote {target}")


if __name__ == "__main__":
    main()
