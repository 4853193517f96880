"""Planted-bias synthetic data with an interaction-only bias channel.

Two independent binary protected attributes ``s1, s2`` enter the outcome
only through their product ``z = (2 s1 - 1)(2 s2 - 1)``. Each attribute
alone is independent of ``z``, so per-attribute dependence penalties see
almost nothing, while the joint attribute vector carries the full bias.
A noisy proxy of ``z`` is included among the features.
"""

from __future__ import annotations

import numpy as np
import pandas as pd


def planted_bias(n: int = 4000, seed: int = 0, strength: float = 1.5,
                 proxy_noise: float = 0.5, task: str = "binary") -> pd.DataFrame:
    rng = np.random.default_rng(seed)
    s1 = rng.integers(0, 2, n)
    s2 = rng.integers(0, 2, n)
    z = (2 * s1 - 1) * (2 * s2 - 1)
    x1 = rng.normal(size=n)
    x2 = rng.normal(size=n)
    proxy = z + proxy_noise * rng.normal(size=n)
    eta = x1 + 0.5 * x2 + strength * z
    frame = pd.DataFrame({"x1": x1, "x2": x2, "proxy": proxy, "s1": s1, "s2": s2})
    if task == "binary":
        frame["y"] = (rng.random(n) < 1.0 / (1.0 + np.exp(-eta))).astype(int)
    else:
        exposure = rng.uniform(0.2, 1.0, n)
        frame["exposure"] = exposure
        frame["y"] = rng.poisson(exposure * np.exp(-1.5 + 0.5 * eta))
    return frame
