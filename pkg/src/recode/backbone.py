"""Static preference: user/item embeddings and a dot-product or MLP tower."""

from __future__ import annotations

import numpy as np

from .numerics import MlpSpec, ParamStore, Tensor, as_tensor, concat, glorot_bound, init_mlp, mlp_forward, no_grad, take_rows

BACKBONES = ("mf_dot", "mlp_tower")


class EmbeddingTable:
    def __init__(self, num_users, num_items, dim, rng, store: ParamStore):
        if dim < 1:
            raise ValueError("embedding dim must be >= 1")
        self.num_users, self.num_items, self.dim = num_users, num_items, dim
        su = glorot_bound(num_users, dim)
        si = glorot_bound(num_items, dim)
        self.users = store.add("emb.user", rng.uniform(-su, su, size=(num_users, dim)))
        self.items = store.add("emb.item", rng.uniform(-si, si, size=(num_items, dim)))

    def embed(self, user_ids, item_ids):
        return take_rows(self.users, user_ids), take_rows(self.items, item_ids)


def tower_spec(dim):
    return MlpSpec([2 * dim, dim, 1], ["relu", "identity"])


def static_score(e_u, e_i, kind="mf_dot", tower=None):
    """Score for one pair (1-D inputs) or a batch of pairs (2-D inputs)."""
    e_u, e_i = as_tensor(e_u), as_tensor(e_i)
    if e_u.shape != e_i.shape:
        raise ValueError(f"embedding shape mismatch: {e_u.shape} vs {e_i.shape}")
    if kind == "mf_dot":
        return (e_u * e_i).sum(axis=-1)
    if kind == "mlp_tower":
        spec, params = tower
        out = mlp_forward(spec, params, concat([e_u, e_i], axis=-1))
        return out.reshape(e_u.shape[:-1])
    raise ValueError(f"unknown backbone {kind!r}")


class Backbone:
    def __init__(self, num_users, num_items, dim, kind, rng, store: ParamStore):
        if kind not in BACKBONES:
            raise ValueError(f"unknown backbone {kind!r}; expected one of {BACKBONES}")
        self.kind = kind
        self.table = EmbeddingTable(num_users, num_items, dim, rng, store)
        self.tower = None
        if kind == "mlp_tower":
            spec = tower_spec(dim)
            self.tower = (spec, init_mlp(spec, rng, store, "tower"))

    @property
    def num_items(self):
        return self.table.num_items

    def embed(self, user_ids, item_ids):
        return self.table.embed(user_ids, item_ids)

    def score(self, e_u, e_i):
        return static_score(e_u, e_i, self.kind, self.tower)

    def score_all(self, user_ids):
        """(len(user_ids), num_items) static scores, no graph recorded."""
        user_ids = np.atleast_1d(np.asarray(user_ids, dtype=np.int64))
        items = self.table.items.data
        with no_grad():
            eu = take_rows(self.table.users, user_ids).data
            if self.kind == "mf_dot":
                # same elementwise reduction as static_score, so batch == loop bit for bit
                out = np.empty((len(user_ids), items.shape[0]))
                step = max(1, (1 << 22) // items.size)
                for s in range(0, len(eu), step):
                    out[s:s + step] = (eu[s:s + step, None, :] * items[None]).sum(axis=-1)
                return out
            spec, params = self.tower
            out = np.empty((len(user_ids), items.shape[0]))
            for r, vec in enumerate(eu):
                x = np.concatenate([np.broadcast_to(vec, items.shape), items], axis=1)
                out[r] = mlp_forward(spec, params, Tensor(x)).data[:, 0]
            return out
