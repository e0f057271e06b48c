"""Synthetic fixtures shared by the test modules."""

import csv

import numpy as np

from cohortforge.simstudy import gen_covariates

CONTINUOUS = ["age", "bmi", "sbp", "weight"]
BINARY = [f"b{i}" for i in range(1, 12)]
CATEGORICAL = {"race": ["a", "b", "c"], "parity": ["0", "1", "2"], "region": ["n", "s", "e", "w"]}


def mixed_matrix(n, rng, shift=0.0, spread=1.0):
    """18 mixed columns: 4 continuous, 11 binary, 3 categorical (3+3+4 levels)."""
    cols = {}
    z = rng.standard_normal((n, 4))
    corr = np.array([[1, .5, .3, .2], [0, 1, .4, .1], [0, 0, 1, .3], [0, 0, 0, 1]])
    z = z @ corr
    cols["age"] = np.round(30 + 5 * spread * z[:, 0] + 5 * shift, 2)
    cols["bmi"] = np.round(25 + 3 * spread * z[:, 1] + 3 * shift, 2)
    cols["sbp"] = np.round(120 + 10 * spread * z[:, 2], 2)
    cols["weight"] = np.round(70 + 8 * spread * z[:, 3], 2)
    for i, name in enumerate(BINARY):
        p = 0.1 + 0.06 * i
        latent = z[:, i % 4] * 0.5 + rng.standard_normal(n)
        cols[name] = (latent > np.quantile(latent, 1 - p)).astype(int)
    for name, levels in CATEGORICAL.items():
        cols[name] = rng.choice(levels, size=n)
    return cols


def write_columns(path, cols, ids=None):
    names = list(cols)
    n = len(cols[names[0]])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow((["id"] if ids is not None else []) + names)
        for i in range(n):
            w.writerow(([ids[i]] if ids is not None else []) + [cols[c][i] for c in names])


def write_mixed_csv(path, n, seed, shift=0.0, spread=1.0, id_prefix=None):
    rng = np.random.default_rng(seed)
    cols = mixed_matrix(n, rng, shift, spread)
    ids = [f"{id_prefix}{i}" for i in range(n)] if id_prefix else None
    write_columns(path, cols, ids)
    return path


def write_covariate_csv(path, n, seed, id_prefix="r"):
    W = gen_covariates(n, np.random.default_rng(seed)).astype(int)
    cols = {f"W{j + 1}": W[:, j] for j in range(4)}
    write_columns(path, cols, [f"{id_prefix}{i}" for i in range(n)])
    return path
