'''
Module      : seed_handling
Description : One seeded root per run, split into named, independent random streams.

Every random draw of a command (model and adapter initialisation, batching,
preference-pair construction, generation, bootstrap shards, corpus
synthesis, splitting) comes from a stream spawned here, so a run is a pure
function of its seed.
'''

import argparse

import numpy as np

STREAMS = ('model_init', 'adapter_init', 'batching', 'pairs', 'generation', 'bootstrap', 'corpus',
           'split')
MAX_SEED = 2 ** 64 - 1


def parse_seed(value):
    """ argparse type for --seed: an unsigned 64-bit integer """
    try:
        seed = int(value)
    except ValueError as error:
        raise argparse.ArgumentTypeError(f'seed must be an integer, got {value!r}') from error
    if not 0 <= seed <= MAX_SEED:
        raise argparse.ArgumentTypeError(f'seed must be in [0, 2^64 - 1], got {seed}')
    return seed


class SeedStreams:
    """ Named child streams of a root SeedSequence; the same name always yields the same stream """

    def __init__(self, seed):
        self.seed = int(seed)
        children = np.random.SeedSequence(self.seed).spawn(len(STREAMS))
        self._children = dict(zip(STREAMS, children))

    def sequence(self, name):
        if name not in self._children:
            raise KeyError(f'unknown random stream {name!r}')
        return self._children[name]

    def generator(self, name):
        """ Fresh numpy Generator positioned at the start of the stream """
        return np.random.default_rng(self.sequence(name))

    def integer(self, name):
        """ 31-bit integer derived from the stream, for APIs that take a plain seed """
        return int(self.sequence(name).generate_state(1)[0] & 0x7FFFFFFF)

    def spawn(self, name, n):
        """ n independent child sequences of a stream (parallel workers, ablation variants) """
        base = self.sequence(name)
        # spawn() advances its parent, so spawn from an identical copy
        return np.random.SeedSequence(base.entropy, spawn_key=base.spawn_key).spawn(n) if n else []

    def describe(self):
        return {name: self.integer(name) for name in STREAMS}
