"""Cluster expansion of the partition function at desk scale.

Enumerates every cluster on four intervals, estimates the activities
under the auxiliary product measure and compares the polymer sum with a
direct Monte Carlo estimate of the partition function.  For the six
largest activities the polymer sum is also compared with the exponential of
the truncated Mayer series (the series over all clusters has far too many
terms).

Run with ``python3 demos/cluster_expansion.py``.
"""
import math

from roughgibbs.cluster import Partition1D, enumerate_clusters, estimate_activities, log_z_series, z_cluster_sum
from roughgibbs.potentials import GaussExp

part = Partition1D.from_b(N=4, b=1.0)
clusters = enumerate_clusters(part, max_weight=4)
print(f"{len(clusters)} clusters on {part.N} intervals of length {part.b}")

table = estimate_activities(part, clusters, lam=0.05, W=GaussExp(1.0, 1.0, 0.5), n_samples=20_000, rng=3)
order = sorted(range(len(table)), key=lambda i: -abs(table.K[i]))
print("largest activities:")
for i in order[:5]:
    print(f"  {clusters[i].id:55s} K={table.K[i]:+.3e} +/- {table.se[i]:.1e}")

z = z_cluster_sum(clusters, table, max_terms=0)
zd, zd_se = table.extras["z_direct"], table.extras["z_direct_se"]
print(f"cluster sum   Z = {z.value:.5f} +/- {z.se:.5f}")
print(f"direct sample Z = {zd:.5f} +/- {zd_se:.5f}")
top = order[:6]
sub = [clusters[i] for i in top]
K = table.K[top]
series = log_z_series(sub, K, order=6)
print(f"six largest: polymer sum {z_cluster_sum(sub, K).value:.8f}, exp(series) {math.exp(series):.8f}")
