"""Seeded synthetic instances shared by several test modules."""

import numpy as np

from panel_lift.datagen import (
    PatternSpec,
    assemble_instance,
    derive_seed,
    gen_effects,
    gen_lowrank_gamma,
    gen_noise,
    gen_pattern,
)


def planted(seed, n1=20, n2=20, r=2, sigma=0.1, k=1, tau=(1.5, -0.7), sigma_delta=0.0, mean=10.0):
    """Gamma low-rank ``M*`` plus noise and ``k`` block/stagger patterns.

    The first pattern is a block, the second (if any) a stagger over a
    different set of rows, so the two are never collinear.
    """
    m = gen_lowrank_gamma(n1, n2, r, mean, derive_seed(seed, "m"))
    e = gen_noise(n1, n2, sigma, derive_seed(seed, "e"))
    specs = [
        PatternSpec("block", m1=(2, max(3, n1 // 3)), m2=(n2 // 3, 2 * n2 // 3)),
        PatternSpec("stagger", m1=(2, max(3, n1 // 3)), m2=(n2 // 4, n2 // 2)),
    ]
    zs = [gen_pattern(specs[i], n1, n2, derive_seed(seed, "z", i)) for i in range(k)]
    effects = [gen_effects(n1, n2, tau[i], sigma_delta, "entry", derive_seed(seed, "d", i)) for i in range(k)]
    return assemble_instance(m, e, np.stack(zs), effects, seed=seed)
