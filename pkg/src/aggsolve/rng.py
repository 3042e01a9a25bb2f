"""Seed derivation.

Every random draw in a run comes from a stream keyed by
``(replication seed, player id, purpose)``, so serial and parallel player
loops see identical numbers. External tools can replay a single player with::

    rep_seed = replication_seed(master_seed, r)
    gen = player_stream(rep_seed, player, ORACLE)
"""
import numpy as np

ORACLE = 0
SMOOTHING = 1
LOWER_LEVEL = 2
INIT = 3


def replication_seed(master_seed, replication):
    """Hash ``(master_seed, replication)`` into a 63-bit integer seed."""
    ss = np.random.SeedSequence([int(master_seed), int(replication)])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def player_stream(seed, player, purpose=ORACLE):
    """Independent generator for one player and one purpose."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(player), int(purpose)]))


def player_streams(seed, n_players, purpose=ORACLE):
    return [player_stream(seed, i, purpose) for i in range(n_players)]
