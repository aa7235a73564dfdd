import numpy as np

from recode.data import Interaction, build_histories, leave_one_out
from recode.repeat import GapIndex


class RandomScorer:
    """Model stand-in whose full-catalog scores are iid uniform noise."""

    def __init__(self, num_items, seed=0):
        self.num_items = num_items
        self.rng = np.random.default_rng(seed)

    def gap_index(self, histories):
        return GapIndex(histories)

    def score_all(self, users, times, gap_index):
        return self.rng.random((len(users), self.num_items))


def toy_split(num_users=3000, num_items=1000, n_events=4, seed=0):
    rng = np.random.default_rng(seed)
    inter = [Interaction(u, int(rng.integers(num_items)), 1000 * k)
             for u in range(num_users) for k in range(n_events)]
    return leave_one_out(build_histories(inter, num_users), num_items)


def bpr_mf_reference(split, dim, seed, lr, weight_decay, batch_size, epochs, negatives="unconsumed"):
    """Plain-numpy MF trained with BPR and Adam, hand-derived gradients.

    Follows the same RNG protocol as the trainer (spawned init and train
    streams, one permutation per epoch, rejection-sampled negatives) but
    shares no code with it. Returns the per-batch loss trajectory.
    """
    init_ss, train_ss = np.random.SeedSequence(seed).spawn(2)
    init, rng = np.random.default_rng(init_ss), np.random.default_rng(train_ss)
    nu, ni = split.num_users, split.num_items
    su, si = np.sqrt(6.0 / (nu + dim)), np.sqrt(6.0 / (ni + dim))
    params = {"U": init.uniform(-su, su, size=(nu, dim)), "V": init.uniform(-si, si, size=(ni, dim))}
    m = {k: np.zeros_like(v) for k, v in params.items()}
    v2 = {k: np.zeros_like(v) for k, v in params.items()}
    consumed = [set(h.items.tolist()) for h in split.histories]
    targets = split.train_targets
    losses, step = [], 0
    for _ in range(epochs):
        order = rng.permutation(len(targets))
        for s in range(0, len(order), batch_size):
            rows = targets[order[s:s + batch_size]]
            users = rows[:, 0]
            pos = np.array([split.histories[u].items[p] for u, p in rows.tolist()])
            if negatives == "unconsumed":
                neg = rng.integers(ni, size=len(users))
                bad = np.array([int(n) in consumed[u] for u, n in zip(users, neg)])
                while bad.any():
                    neg[bad] = rng.integers(ni, size=int(bad.sum()))
                    bad = np.array([int(n) in consumed[u] for u, n in zip(users, neg)])
            else:
                neg = rng.integers(ni - 1, size=len(users))
                neg = neg + (neg >= pos)
            U, V = params["U"], params["V"]
            x = (U[users] * V[neg]).sum(-1) - (U[users] * V[pos]).sum(-1)
            losses.append(float(np.sum(np.logaddexp(0.0, x))))
            w = 1.0 / (1.0 + np.exp(-x))
            g = {"U": np.zeros_like(U), "V": np.zeros_like(V)}
            np.add.at(g["U"], users, w[:, None] * (V[neg] - V[pos]))
            np.add.at(g["V"], pos, -w[:, None] * U[users])
            np.add.at(g["V"], neg, w[:, None] * U[users])
            step += 1
            for k in params:
                gk = g[k] + weight_decay * params[k]
                m[k] = 0.9 * m[k] + 0.1 * gk
                v2[k] = 0.999 * v2[k] + 0.001 * gk * gk
                mh, vh = m[k] / (1 - 0.9 ** step), v2[k] / (1 - 0.999 ** step)
                params[k] = params[k] - lr * mh / (np.sqrt(vh) + 1e-8)
    return losses
