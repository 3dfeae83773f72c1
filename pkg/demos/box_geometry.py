"""Inspect the geometry the training objective produces.

After training on the synthetic tree, three views of the learned boxes:
log-volume by tree depth, the two KL directions along true edges, and how
many box pairs overlap as the boxes are widened to two and three standard
deviations.

Writes demos/out/box_geometry.png.
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from gaussbox.embeddings import pseudo_clustered_embeddings
from gaussbox.geometry import DiagGaussian, kl_divergence, log_volume
from gaussbox.projection import forward_batch
from gaussbox.taxonomy import split_leaves
from gaussbox.training import TrainConfig, train

from train_and_rank import branching_tree

OUT = Path(__file__).parent / "out"


def overlap_pairs(centers, offsets, sigma):
    lo = centers - sigma * offsets
    hi = centers + sigma * offsets
    meets = (lo[:, None, :] <= hi[None, :, :]) & (lo[None, :, :] <= hi[:, None, :])
    both = meets.all(axis=2)
    return int((both.sum() - len(centers)) // 2)


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    tree = branching_tree()
    emb = pseudo_clustered_embeddings(tree, dim=64, seed=2)
    split = split_leaves(tree, 0.2, 0)
    params, _ = train(TrainConfig(dim=32, negatives=5, epochs=60, seed=0), split.seed, emb)

    seed = split.seed
    ids = seed.ids()
    centers, offsets, _ = forward_batch(params, emb.matrix(ids))
    gauss = {
        i: DiagGaussian(centers[k], offsets[k] ** 2) for k, i in enumerate(ids)
    }

    fig, (ax1, ax2, ax3) = plt.subplots(1, 3, figsize=(13, 4))

    depths = [seed.depth(i) for i in ids]
    vols = [log_volume(gauss[i]) for i in ids]
    ax1.scatter(depths, vols, s=14, alpha=0.6)
    for d in sorted(set(depths)):
        mean = np.mean([v for dd, v in zip(depths, vols) if dd == d])
        ax1.plot([d - 0.2, d + 0.2], [mean, mean], color="black")
    ax1.set_xticks(sorted(set(depths)))
    ax1.set_xlabel("depth in tree")
    ax1.set_ylabel("log volume")
    ax1.set_title("boxes shrink down the tree")

    fwd, rev = [], []
    for parent, child in seed.edges():
        fwd.append(kl_divergence(gauss[child], gauss[parent]))
        rev.append(kl_divergence(gauss[parent], gauss[child]))
    ax2.scatter(fwd, rev, s=12, alpha=0.6)
    lim = max(max(fwd), max(rev)) * 1.05
    ax2.plot([0, lim], [0, lim], color="gray", linewidth=0.8)
    ax2.set_xlabel("KL(child || parent)")
    ax2.set_ylabel("KL(parent || child)")
    ax2.set_title("KL directions along true edges")

    sigmas = (1, 2, 3)
    counts = [overlap_pairs(centers, offsets, s) for s in sigmas]
    ax3.bar([str(s) for s in sigmas], counts, color="tab:blue")
    ax3.set_xlabel("sigma")
    ax3.set_ylabel("overlapping box pairs")
    ax3.set_title("widening boxes only adds overlaps")

    fig.tight_layout()
    target = OUT / "box_geometry.png"
    fig.savefig(target, dpi=130)
    print(f"wrote {target}")
    print("edges with KL(child||parent) < KL(parent||child):",
          f"{sum(1 for a, b in zip(fwd, rev) if a < b)}/{len(fwd)}")
    print("overlap pairs:", dict(zip(sigmas, counts)))


if __name__ == "__main__":
    main()
