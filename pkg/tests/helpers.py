"""Shared fixtures for the unit tests."""

import numpy as np

from metapower.netsim import ChannelRealization, PeriodDataset, SimConfig, Topology
from metapower.regnn import permute_channel


class LoggingList(list):
    """List that records every index that is read."""
    def __init__(self, items):
        super(LoggingList, self).__init__(items)
        self.accessed = list()

    def __getitem__(self, index):
        self.accessed.append(index)
        return super(LoggingList, self).__getitem__(index)

    def __iter__(self):
        self.accessed.extend(range(len(self)))
        return super(LoggingList, self).__iter__()


def small_sim(**kwargs):
    """Small simulation configuration (5 links, 5 + 5 slots)."""
    args = dict(k=5, slots_per_period=10, train_slots=5, test_slots=5)
    args.update(kwargs)
    return SimConfig(**args)


def random_gains(k, n, rng, cross=0.1):
    """n random gain matrices with strong direct links."""
    matrices = list()
    for _ in range(n):
        g = rng.uniform(0.0, cross, size=(k, k))
        np.fill_diagonal(g, rng.uniform(0.5, 1.0, size=k))
        matrices.append(g)
    return matrices


def make_period(matrices, n_train, period_id=0, logged=False):
    """Period dataset from explicit gain matrices. The first n_train slots
    are training slots, the rest are test slots."""
    k = matrices[0].shape[0]
    realizations = [
        ChannelRealization(gains=np.array(g, dtype=float), slot=i, period_id=period_id)
            for i, g in enumerate(matrices)
    ]
    if logged:
        realizations = LoggingList(realizations)
    topology = Topology(
        period_id=period_id,
        k=k,
        tx_positions=np.zeros((k, 2)),
        rx_positions=np.ones((k, 2)),
        adjacency=np.ones((k, k), dtype=bool)
    )
    return PeriodDataset(
        topology=topology,
        realizations=realizations,
        train_idx=tuple(range(n_train)),
        test_idx=tuple(range(n_train, len(matrices)))
    )


def random_period(k, n_train, n_test, seed, period_id=0, logged=False):
    rng = np.random.default_rng(seed)
    return make_period(
        random_gains(k, n_train + n_test, rng), n_train, period_id=period_id, logged=logged
    )


def permute_period(period, perm):
    """Same period with the links of every slot relabeled by perm."""
    perm = np.asarray(perm)
    topology = period.topology
    return PeriodDataset(
        topology=Topology(
            period_id=topology.period_id,
            k=topology.k,
            tx_positions=topology.tx_positions[perm].copy(),
            rx_positions=topology.rx_positions[perm].copy(),
            adjacency=topology.adjacency[np.ix_(perm, perm)].copy()
        ),
        realizations=[permute_channel(g, perm) for g in period.realizations],
        train_idx=period.train_idx,
        test_idx=period.test_idx
    )
