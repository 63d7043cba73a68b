# Desk-scale comparison of the four segment representations under the
# auto-tuned spectral back-end: plant a synthetic corpus, train the
# adversarial embedding, fine-tune it episodically, then diarize every
# session with each representation and score DER / MAPD / POC.

import argparse
import time

import numpy as np

from deskdiar.gan import GanTrainConfig, train_clustergan
from deskdiar.metrics import CountEstimate, der, mapd_poc
from deskdiar.models import LatentConfig
from deskdiar.pipeline import DiarizeConfig, run_diarization
from deskdiar.protonet import ProtoConfig, finetune_mcgan
from deskdiar.simulate import SynthConfig, gen_corpus, gen_training_set


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sessions", type=int, default=20)
    ap.add_argument("--speakers", type=int, default=20)
    ap.add_argument("--dim", type=int, default=32)
    ap.add_argument("--std", type=float, default=0.20,
                    help="within-speaker noise; 0.08 is nearly separable")
    ap.add_argument("--n-iter", type=int, default=600,
                    help="adversarial training iterations")
    ap.add_argument("--episodes", type=int, default=1000,
                    help="episodic fine-tuning episodes")
    ap.add_argument("--d-n", type=int, default=20,
                    help="continuous latent width")
    ap.add_argument("--collar", type=float, default=0.25)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    t0 = time.perf_counter()
    scfg = SynthConfig(dim=args.dim, n_speakers=args.speakers, std=args.std,
                       seed=args.seed)
    _, sessions = gen_corpus(scfg, args.sessions)
    train = gen_training_set(
        scfg, np.random.default_rng([scfg.seed, 104729]))
    print(f"[{time.perf_counter() - t0:5.0f}s] corpus: {len(sessions)} "
          f"sessions, {train.n} training rows, std={args.std}")

    latent = LatentConfig(d_c=args.speakers, d_n=args.d_n)
    gcfg = GanTrainConfig(n_iter=args.n_iter, seed=args.seed)
    _, _, enc_pre, _ = train_clustergan(train, gcfg, latent)
    print(f"[{time.perf_counter() - t0:5.0f}s] adversarial training done "
          f"({args.n_iter} iterations)")

    enc_tuned, _ = finetune_mcgan(
        enc_pre, train, ProtoConfig(episodes=args.episodes, seed=args.seed))
    print(f"[{time.perf_counter() - t0:5.0f}s] fine-tuning done "
          f"({args.episodes} episodes)")

    encoders = {"xvector-raw": None, "clustergan": enc_pre,
                "mcgan": enc_tuned, "fused": enc_tuned}
    print(f"\n{'representation':<14} {'DER%':>7} {'MAPD%':>7} {'POC%':>7} "
          f"{'mean k_hat err':>14}")
    for name, enc in encoders.items():
        scored = missed = 0.0
        counts = []
        for i, sess in enumerate(sessions):
            dcfg = DiarizeConfig(embedding=name, backend="nme-sc",
                                 seed=args.seed)
            hyp, k_used, _ = run_diarization(sess.sad, sess.x, dcfg, enc)
            rep = der(sess.reference, hyp, collar=args.collar)
            scored += rep.scored_s
            missed += (rep.missed_s + rep.false_alarm_s + rep.confusion_s)
            counts.append(CountEstimate(f"s{i:03d}", sess.true_k, k_used))
        mapd, poc = mapd_poc(counts)
        corpus_der = 100.0 * missed / scored
        k_err = float(np.mean([abs(c.est_k - c.true_k) for c in counts]))
        print(f"{name:<14} {corpus_der:7.2f} {mapd:7.2f} {poc:7.2f} "
              f"{k_err:14.3f}")
    print(f"\n{time.perf_counter() - t0:.0f}s total")


if __name__ == "__main__":
    main()
