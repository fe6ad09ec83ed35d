"""Monte Carlo band for the shard-size std of the capped per-class Dirichlet split.

Independent numpy implementation of the unbalanced partition: per class,
proportions ~ Dir(lambda); clients already holding n/K samples get weight 0;
redraw until every client has >= min(10, n/K) samples. Prints percentiles of
the std of shard sizes over many seeds.

usage: python3 dirichlet_band.py [seeds] [train_fraction] [lambda]
"""
import sys

import numpy as np


def shard_sizes(labels, classes, clients, lam, frac, rng):
    idx_by_class = []
    for c in range(classes):
        idx = np.flatnonzero(labels == c)
        rng.shuffle(idx)
        idx_by_class.append(idx[: int(round(frac * len(idx)))])
    n = sum(len(i) for i in idx_by_class)
    min_size = min(10, n // clients)
    for _ in range(1001):
        sizes = np.zeros(clients, dtype=np.int64)
        for idx in idx_by_class:
            p = rng.dirichlet(np.full(clients, lam))
            p = p * (sizes < n / clients)
            p = p / p.sum()
            cuts = (np.cumsum(p) * len(idx)).astype(int)[:-1]
            sizes += np.diff(np.concatenate(([0], cuts, [len(idx)])))
        if sizes.min() >= min_size:
            break
    return sizes


def main():
    seeds = int(sys.argv[1]) if len(sys.argv) > 1 else 200
    frac = float(sys.argv[2]) if len(sys.argv) > 2 else 0.8
    lam = float(sys.argv[3]) if len(sys.argv) > 3 else 0.3
    labels = np.repeat(np.arange(10), 5000)
    stds, means = [], []
    for s in range(seeds):
        sizes = shard_sizes(labels, 10, 100, lam, frac, np.random.default_rng(s))
        stds.append(sizes.std())
        means.append(sizes.mean())
    stds = np.array(stds)
    print(f"mean shard size {np.mean(means):.2f}")
    for q in (0, 0.5, 2.5, 50, 97.5, 99.5, 100):
        print(f"p{q}: {np.percentile(stds, q):.1f}")
    if seeds >= 400:
        groups = stds[: seeds // 20 * 20].reshape(-1, 20).mean(axis=1)
        print("mean of 20 seeds: " + " ".join(f"p{q}={np.percentile(groups, q):.1f}" for q in (0, 0.5, 50, 99.5, 100)))


if __name__ == "__main__":
    main()
