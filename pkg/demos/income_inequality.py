"""Lorenz curve and Gini index on a few toy income vectors."""
import numpy as np

from sesinfer.census import gini, lorenz_curve

rng = np.random.default_rng(0)
cases = {
    "equal": np.full(1000, 30_000.0),
    "lognormal s=0.4": rng.lognormal(10, 0.4, 1000),
    "lognormal s=1.0": rng.lognormal(10, 1.0, 1000),
    "one holder": np.r_[np.zeros(999), 1e6],
}
for name, x in cases.items():
    f, C = lorenz_curve(x)
    # share of income held by the bottom half
    half = C[np.searchsorted(f, 0.5)]
    print(f"{name:16s} gini={gini(x):.4f} bottom-half share={half:.3f}")

# for a lognormal the Gini is erf(sigma/2)
from math import erf
print("analytic s=1.0:", round(erf(0.5), 4))
