"""Pure-Python reference kernels, used when the compiled extension is absent."""
import numpy as np


def teleport_walks(indptr, indices, starts, length, teleport, coins, picks):
    indptr = indptr.tolist()
    indices = indices.tolist()
    coins = coins.tolist()
    picks = picks.tolist()
    n_nodes = len(indptr) - 1
    walks = []
    for w, cur in enumerate(starts.tolist()):
        walk = [cur]
        coin_row, pick_row = coins[w], picks[w]
        for s in range(length):
            deg = indptr[cur + 1] - indptr[cur]
            if deg == 0 or coin_row[s] < teleport:
                cur = min(int(pick_row[s] * n_nodes), n_nodes - 1)
            else:
                k = min(int(pick_row[s] * deg), deg - 1)
                cur = indices[indptr[cur] + k]
            walk.append(cur)
        walks.append(walk)
    return np.array(walks, dtype=np.int64).reshape(len(walks), length + 1)


def cooccurrence_pairs(walks, window):
    pairs = []
    for walk in walks.tolist():
        L = len(walk)
        for i in range(L):
            for j in range(max(0, i - window), min(L, i + window + 1)):
                if j != i and walk[i] != walk[j]:
                    pairs.append((walk[i], walk[j]))
    return np.array(pairs, dtype=np.int64).reshape(len(pairs), 2)
