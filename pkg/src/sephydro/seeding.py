"""Deterministic derivation of RNG streams from a master seed.

Every random draw in the package goes through :func:`seed_derive` with a
purpose label taken from :data:`LABELS`, so that the generation order of
independent pieces never changes the numbers they receive.
"""
import hashlib

import numpy as np

__all__ = ["LABELS", "seed_derive", "rng_for", "register_label"]

LABELS = {
    # environment
    "conductances",
    "mott_points",
    "mott_energies",
    "percolation_sites",
    # random walk / homogenization
    "walk_path",
    "msd",
    # exclusion
    "clocks",
    "clock_redraw",
    "sep_batch",
    "generator_fd",
    "duality",
    "martingale",
    "nagy",
    # hydrodynamics
    "initial_config",
    "hydro_replica",
    "kmc",
    # test fuzzing
    "fuzz",
}

_KEY = b"sephydro-stream-v1"


def register_label(label):
    """Add ``label`` to the registry (for downstream extensions)."""
    LABELS.add(str(label))


def seed_derive(master_seed, label, replica=0):
    """Return a 64-bit stream seed for ``(master_seed, label, replica)``.

    The derivation is a keyed BLAKE2b hash of the three fields, so it is
    identical across platforms and Python versions.

    Raises
    ------
    KeyError
        If ``label`` is not registered.
    """
    if label not in LABELS:
        raise KeyError(f"unknown seed label {label!r}")
    if int(master_seed) < 0 or int(replica) < 0:
        raise ValueError("master seed and replica index must be nonnegative")
    msg = f"{int(master_seed)}|{label}|{int(replica)}".encode()
    digest = hashlib.blake2b(msg, key=_KEY, digest_size=8).digest()
    return int.from_bytes(digest, "little")


def rng_for(master_seed, label, replica=0):
    """``numpy.random.Generator`` seeded by :func:`seed_derive`."""
    return np.random.default_rng(seed_derive(master_seed, label, replica))
