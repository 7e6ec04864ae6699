"""
Seed stream splitting.

Every random draw of a simulation comes from a generator seeded by hashing the
master seed together with the (replication, particle, step, purpose) tuple it
serves, so results never depend on scheduling or worker count.
"""

import hashlib
import struct

import numpy as np

# Constants
SEED_MASK = (1 << 64) - 1
SHARED = -1  # particle or step index of streams not tied to one particle or step


def derive_seed(master, stream):
    """
    Derive a 64-bit seed for one stream of a run.

    Args:
        master: Master seed of the run
        stream: Tuple (replication, particle, step, purpose); purpose is a short string

    Returns:
        Unsigned 64-bit integer
    """
    replication, particle, step, purpose = stream
    payload = struct.pack("<Q3q", int(master) & SEED_MASK, int(replication), int(particle), int(step))
    digest = hashlib.sha256(payload + str(purpose).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def stream_generator(master, replication, particle, step, purpose):
    """numpy Generator for one derived stream."""
    seed = derive_seed(master, (replication, particle, step, purpose))
    return np.random.Generator(np.random.PCG64(seed))
