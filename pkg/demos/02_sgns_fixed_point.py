"""SGNS drives its scores toward shifted relatedness.

With d equal to the catalog size the full-batch optimum is reachable, so the
KL gap between the trained scores and R - log k should shrink toward zero.
A small d cannot reach it; the gap stalls at the best low-rank fit.

Run: python demos/02_sgns_fixed_point.py
"""
import numpy as np

from relana.catalog import SyntheticSpec, generate_synthetic, sequence_pairs
from relana.cooccur import accumulate
from relana.embed import SgnsConfig, kl_sdr_gap, shifted_target, train_sgns

corpus = generate_synthetic(SyntheticSpec(num_items=12, num_records=20000, seed=1))
table = accumulate(sequence_pairs(corpus.log, window=1), len(corpus.vocab))
k = 1

for d in (2, 12):
    cfg = SgnsConfig(d=d, k=k, epochs=300, lr=0.002, batch_size=2048, seed=0)
    pair = train_sgns(table, cfg).pair
    gap = kl_sdr_gap(pair, table, k)
    target = shifted_target(table, k)
    mask = np.isfinite(target)
    err = np.abs(pair.scores()[mask] - target[mask]).mean()
    print(f"d={d:2d}: KL gap {gap:.2e}, mean |score - (R - log k)| {err:.3f}")
