"""Compare the Monte Carlo Campbell estimator with quadrature of the path-wise loss.

For each kernel and random jump predictor, prints the quadrature value, the
Monte Carlo mean and the gap in standard errors.

    python scripts/campbell_vs_pathwise.py --paths 100000
"""

import argparse
import math

import numpy as np

from snapdiff.denoiser import SmoothJumpNet
from snapdiff.embeddings import build_neighbor_graph, grid_embeddings
from snapdiff.kernels import AbsorbKernel, SikDenseKernel, SikKnnKernel, UniformKernel
from snapdiff.objectives import campbell_terms, pathwise_loss_quadrature
from snapdiff.schedules import LogLinear
from snapdiff.uniformize import noise_batch


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--paths", type=int, default=10**5)
    ap.add_argument("--nets", type=int, default=5)
    ap.add_argument("--x0", type=int, default=1)
    a = ap.parse_args()
    sched = LogLinear()
    emb = grid_embeddings(4)
    kerns = {"uniform": UniformKernel(4), "absorb": AbsorbKernel(4),
             "sik_knn": SikKnnKernel(emb, build_neighbor_graph(emb, 2)), "sik_dense": SikDenseKernel(emb, "gauss")}
    for i, (name, kern) in enumerate(kerns.items()):
        for seed in range(a.nets):
            net = SmoothJumpNet(4, seed)
            ref = pathwise_loss_quadrature(net, kern, sched, a.x0)
            _, paths = noise_batch(kern, sched, np.full(a.paths, a.x0), 1.0, 100 * i + seed)
            terms = campbell_terms(net, paths)
            se = terms.std(ddof=1) / math.sqrt(len(terms))
            print(f"{name:9s} net {seed}: quadrature {ref:.5f}  campbell {terms.mean():.5f} +- {se:.5f}  "
                  f"gap {(terms.mean() - ref) / se:+.2f} se")


if __name__ == "__main__":
    main()
