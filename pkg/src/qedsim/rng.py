"""Counter-based random substreams.

Every random draw in the package comes from a Philox generator keyed by
``(master seed, replication id, stream role)``, so a replication's output
does not depend on which worker ran it or in what order.
"""
import zlib

import numpy as np

ROLES = {
    "initial": 0,
    "arrivals": 1,
    "service": 2,
    "abandon": 3,
    "thinning": 4,
    "initial_service": 5,
    "diffusion": 6,
    "bridge": 7,
    "kiefer": 8,
    "aux": 9,
}

_MASK64 = (1 << 64) - 1


def substream(master_seed, replication, role):
    """Independent generator for one (replication, role) pair."""
    if role not in ROLES:
        raise KeyError(f"unknown stream role {role!r}")
    ss = np.random.SeedSequence([int(master_seed) & _MASK64, int(replication), ROLES[role]])
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(master_seed, label):
    """Deterministic 64-bit child seed for a named experiment or sub-run."""
    ss = np.random.SeedSequence([int(master_seed) & _MASK64, zlib.crc32(label.encode())])
    return int(ss.generate_state(1, dtype=np.uint64)[0])
