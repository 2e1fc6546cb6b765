"""Synthetic interaction logs with planted like/dislike cluster structure.

Items are split into contiguous clusters and every user has one home cluster.
A user's history is a walk over clusters: from the home cluster the next item
stays home with probability ``markov_stickiness`` and otherwise starts an
excursion to a random other cluster; during an excursion the next item goes
back home with the same probability and otherwise stays in the visited
cluster.  The lumped home/away chain therefore visits home with stationary
probability equal to the stickiness.  Inside a cluster the walk moves forward
along the item order by 1-3 steps, skipping items the user already consumed,
which gives sequential models a learnable next-item pattern.

Feedback is 5 (liked) with probability ``like_prob_in_cluster`` for home items
and ``like_prob_off_cluster`` elsewhere, else 1; threshold 3 recovers it.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .data import InteractionLog, sort_log, write_interactions
from .errors import ConfigError

LIKE_VALUE = 5.0
DISLIKE_VALUE = 1.0
THRESHOLD = 3.0


@dataclass(frozen=True)
class SynthConfig:
    n_users: int = 2000
    n_items: int = 500
    n_clusters: int = 10
    interactions_per_user: int = 40
    like_prob_in_cluster: float = 0.9
    like_prob_off_cluster: float = 0.1
    markov_stickiness: float = 0.8
    seed: int = 0
    start_spread: int = 20_000
    mean_gap: int = 5_000

    def validate(self):
        if self.n_clusters < 1 or self.n_clusters > self.n_items:
            raise ConfigError(f"need 1 <= n_clusters <= n_items, got {self.n_clusters} clusters for {self.n_items} items")
        if self.n_users < 1 or self.interactions_per_user < 1:
            raise ConfigError("n_users and interactions_per_user must be positive")
        if self.interactions_per_user > self.n_items:
            raise ConfigError("a user cannot interact with more items than exist")
        for name in ("like_prob_in_cluster", "like_prob_off_cluster", "markov_stickiness"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")
        if self.start_spread < 1 or self.mean_gap < 1:
            raise ConfigError("start_spread and mean_gap must be positive")


@dataclass
class SynthResult:
    log: InteractionLog
    user_cluster: np.ndarray
    item_cluster: np.ndarray
    config: SynthConfig


def item_clusters(n_items, n_clusters):
    return np.arange(n_items) * n_clusters // n_items


def _walk_user(rng, home, members, cfg):
    n = cfg.interactions_per_user
    C = len(members)
    s = cfg.markov_stickiness
    seen = set()
    cursor = {}
    items = np.empty(n, dtype=np.int64)
    clusters = np.empty(n, dtype=np.int64)
    current = home if rng.random() < s else _other(rng, home, C)
    for t in range(n):
        if t > 0:
            go_home = rng.random() < s
            if current == home:
                current = home if go_home else _other(rng, home, C)
            elif go_home:
                current = home
        ring = members[current]
        pos = cursor.get(current)
        if pos is None:
            pos = int(rng.integers(len(ring))) - 1
        item = None
        step = int(rng.integers(1, 4))
        for _ in range(len(ring)):
            pos = (pos + step) % len(ring)
            step = 1
            if ring[pos] not in seen:
                item = int(ring[pos])
                break
        if item is None:
            # cluster exhausted: any unseen item
            pool = np.setdiff1d(np.arange(cfg.n_items), np.fromiter(seen, dtype=np.int64))
            item = int(rng.choice(pool))
        else:
            cursor[current] = pos
        seen.add(item)
        items[t] = item
        clusters[t] = current
    return items, clusters


def _other(rng, home, C):
    if C == 1:
        return home
    c = int(rng.integers(C - 1))
    return c + (c >= home)


def generate(config=None):
    """Draw a log; returns the log plus the planted user/item cluster labels."""
    cfg = config or SynthConfig()
    cfg.validate()
    icl = item_clusters(cfg.n_items, cfg.n_clusters)
    members = [np.flatnonzero(icl == c) for c in range(cfg.n_clusters)]
    homes = np.random.default_rng([cfg.seed, 0]).integers(cfg.n_clusters, size=cfg.n_users)
    n = cfg.interactions_per_user
    users = np.repeat(np.arange(cfg.n_users), n)
    items = np.empty(cfg.n_users * n, dtype=np.int64)
    values = np.empty(cfg.n_users * n, dtype=np.float64)
    stamps = np.empty(cfg.n_users * n, dtype=np.int64)
    for u in range(cfg.n_users):
        rng = np.random.default_rng([cfg.seed, 1, u])
        its, _ = _walk_user(rng, homes[u], members, cfg)
        home_item = icl[its] == homes[u]
        p_like = np.where(home_item, cfg.like_prob_in_cluster, cfg.like_prob_off_cluster)
        liked = rng.random(n) < p_like
        start = int(rng.integers(cfg.start_spread))
        gaps = rng.integers(1, 2 * cfg.mean_gap, size=n)
        sl = slice(u * n, (u + 1) * n)
        items[sl] = its
        values[sl] = np.where(liked, LIKE_VALUE, DISLIKE_VALUE)
        stamps[sl] = start + np.cumsum(gaps)
    log = InteractionLog(
        users=users,
        items=items,
        values=values,
        timestamps=stamps,
        user_ids=[f"u{u}" for u in range(cfg.n_users)],
        item_ids=[f"i{j}" for j in range(cfg.n_items)],
    )
    return SynthResult(sort_log(log), homes, icl, cfg)


def expected_negative_share(config):
    """Stationary share of disliked interactions implied by the generator."""
    s = config.markov_stickiness
    return s * (1 - config.like_prob_in_cluster) + (1 - s) * (1 - config.like_prob_off_cluster)


def write_synthetic(result, path, sidecar=None):
    """Write the interaction file and, optionally, a cluster-assignment sidecar."""
    write_interactions(result.log, path)
    if sidecar is None:
        sidecar = os.path.splitext(path)[0] + ".clusters.tsv"
    with open(sidecar, "w", encoding="utf-8") as fh:
        fh.write("kind\tid\tcluster\n")
        for u, c in enumerate(result.user_cluster):
            fh.write(f"user\t{result.log.user_ids[u]}\t{c}\n")
        for j, c in enumerate(result.item_cluster):
            fh.write(f"item\t{result.log.item_ids[j]}\t{c}\n")
    return sidecar
