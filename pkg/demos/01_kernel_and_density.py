"""Kernel beliefs and kernel densities on the unit sphere.

The whole library rests on one similarity kernel: exp((cos - 1)/tau).
This script shows how the temperature shapes it and how averaging it
against a stored set turns it into a density estimate.
"""

import numpy as np

from obser import KernelConfig, ObservationSet, kernel, kernel_density, mean_direction

x = np.array([1.0, 0.0])
y = np.array([0.0, 1.0])

print("belief that two embeddings show the same kind of object")
print(f"{'tau':>6}  {'identical':>10}  {'orthogonal':>10}  {'antipodal':>10}")
for tau in (0.07, 0.2, 0.5, 1.0, 5.0):
    cfg = KernelConfig(tau)
    print(
        f"{tau:>6}  {kernel(x, x, cfg):>10.5f}  {kernel(x, y, cfg):>10.5f}"
        f"  {kernel(x, -x, cfg):>10.5f}"
    )
print("\nsmall tau: only near-identical embeddings register;"
      "\nlarge tau: everything looks alike (the kernel floor exp(-2/tau) rises)\n")

# a tiny 'environment': a tight cluster plus a far-away outlier
rng = np.random.default_rng(0)
cluster = np.array([1.0, 0.0]) + 0.05 * rng.standard_normal((20, 2))
cluster /= np.linalg.norm(cluster, axis=1, keepdims=True)
outlier = np.array([[-1.0, 0.0]])
env = ObservationSet(np.vstack([cluster, outlier]))

cfg = KernelConfig(0.2)
print("kernel density = mean belief against every stored observation")
for name, q in [("cluster member", cluster[0]), ("cluster mean", mean_direction(cluster)),
                ("the outlier", outlier[0]), ("orthogonal point", y)]:
    print(f"  density({name:>16}) = {kernel_density(q, env, cfg):.4f}")
