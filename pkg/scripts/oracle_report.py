"""Run the dense invariant battery on every kernel family at a small vocabulary.

    python scripts/oracle_report.py --m 8
"""

import argparse

from snapdiff.embeddings import build_neighbor_graph, cluster_embeddings
from snapdiff.kernels import AbsorbKernel, SikDenseKernel, SikKnnKernel, UniformKernel, random_dense_kernel
from snapdiff.oracle import oracle_check
from snapdiff.schedules import Linear, LogLinear


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--m", type=int, default=8)
    a = ap.parse_args()
    emb = cluster_embeddings(a.m, 4, n_clusters=3, seed=0)
    kerns = {"uniform": UniformKernel(a.m), "absorb": AbsorbKernel(a.m),
             "sik_knn": SikKnnKernel(emb, build_neighbor_graph(emb, min(3, a.m - 1))),
             "sik_dense": SikDenseKernel(emb, "gauss"),
             "random_dense": random_dense_kernel(a.m, 0, time_dependent=True)}
    failures = 0
    for sname, sched in (("loglinear", LogLinear()), ("linear", Linear())):
        for name, kern in kerns.items():
            rep = oracle_check(kern, sched)
            bad = [k for k, v in rep.items() if not v["pass"]]
            failures += len(bad)
            worst = max(rep.items(), key=lambda kv: kv[1].get("max_err", 0.0))
            print(f"{sname:9s} {name:12s} {len(rep) - len(bad)}/{len(rep)} pass; largest: {worst[0]} = "
                  f"{worst[1].get('max_err', float('nan')):.2e}" + (f"  FAILED {bad}" if bad else ""))
    raise SystemExit(1 if failures else 0)


if __name__ == "__main__":
    main()
