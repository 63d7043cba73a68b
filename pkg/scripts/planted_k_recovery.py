# How far can the auto-tuned spectral back-end be pushed before it loses
# the planted speaker count? Sweeps k and the within-speaker noise level
# and reports POC / mean |k_hat - k| per cell.

import argparse
import time

import numpy as np

from deskdiar.clustering import cosine_affinity, nme_select


def planted_session(k, std, seed, n=80, dim=16, min_deg=25.0):
    """Noisy rows around k unit means at least min_deg apart."""
    rng = np.random.default_rng([k, int(std * 1000), seed])
    cos_cap = np.cos(np.radians(min_deg))
    while True:
        means = rng.standard_normal((k, dim))
        means /= np.linalg.norm(means, axis=1, keepdims=True)
        gram = means @ means.T
        np.fill_diagonal(gram, -1.0)
        if gram.max() <= cos_cap:
            break
    labels = np.arange(n) % k
    return means[labels] + std * rng.standard_normal((n, dim))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sessions", type=int, default=100,
                    help="sessions per (k, std) cell")
    ap.add_argument("--dim", type=int, default=16)
    ap.add_argument("--rows", type=int, default=80,
                    help="segments per session")
    ap.add_argument("--k-max", type=int, default=7)
    ap.add_argument("--stds", type=float, nargs="+",
                    default=[0.08, 0.20, 0.35, 0.50])
    args = ap.parse_args()

    t0 = time.perf_counter()
    ks = list(range(2, args.k_max + 1))
    print(f"{args.sessions} sessions per cell, dim={args.dim}, "
          f"rows={args.rows}")
    header = "std   " + "  ".join(f"   k={k}     " for k in ks)
    print(header)
    print("-" * len(header))
    for std in args.stds:
        cells = []
        for k in ks:
            hats = np.array([
                nme_select(cosine_affinity(planted_session(
                    k, std, seed, n=args.rows, dim=args.dim))).k_hat
                for seed in range(args.sessions)])
            poc = 100.0 * float(np.mean(hats == k))
            mad = float(np.mean(np.abs(hats - k)))
            cells.append(f"{poc:4.0f}%/{mad:.2f}")
        print(f"{std:.2f}  " + "  ".join(f"{c:>10}" for c in cells))
    print(f"cells are POC / mean |k_hat - k|; "
          f"{time.perf_counter() - t0:.0f}s total")


if __name__ == "__main__":
    main()
