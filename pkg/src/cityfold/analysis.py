"""Latent-space interpretation: PCA, Ward agglomerative clustering, and
exact (non-approximated) t-SNE projection.

Everything is deterministic: ties break by lowest index and all
randomness flows through seeded PCG64 generators.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class AnalysisError(ValueError):
    pass


# ---------------------------------------------------------------- PCA


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray  # (D,)
    components: np.ndarray  # (q, D), rows orthonormal
    explained_variance: np.ndarray  # (q,)


def pca_fit(embeddings: np.ndarray, q: int = 15) -> PcaModel:
    """Top-q principal components of the centered matrix, ordered by
    decreasing singular value. Sign convention: the largest-magnitude
    entry of each component is positive."""
    x = np.asarray(embeddings, dtype=np.float64)
    count, dim = x.shape
    if count < q:
        raise AnalysisError(f"need at least q={q} rows, got {count}")
    if q > dim:
        raise AnalysisError(f"q={q} exceeds dimensionality {dim}")
    mean = x.mean(axis=0)
    _, s, vt = np.linalg.svd(x - mean, full_matrices=False)
    components = vt[:q]
    flip = np.sign(components[np.arange(q), np.abs(components).argmax(axis=1)])
    flip[flip == 0] = 1.0
    components = components * flip[:, None]
    variance = (s[:q] ** 2) / max(count - 1, 1)
    return PcaModel(mean, components, variance)


def pca_transform(model: PcaModel, embeddings: np.ndarray) -> np.ndarray:
    x = np.asarray(embeddings, dtype=np.float64)
    if x.ndim == 1:
        x = x[None]
    if x.shape[1] != model.mean.shape[0]:
        raise AnalysisError(
            f"dimension mismatch: data has {x.shape[1]}, model expects {model.mean.shape[0]}"
        )
    return (x - model.mean) @ model.components.T


# --------------------------------------------------- Ward linkage


@dataclass(frozen=True)
class Dendrogram:
    """Merge table rows (cluster_a, cluster_b, distance, size); leaves are
    0..n-1, internal nodes n..2n-2 in merge order."""

    merges: np.ndarray  # (n-1, 4) float64
    leaf_count: int


def ward_linkage(points: np.ndarray) -> Dendrogram:
    """Agglomerative Ward clustering via the Lance-Williams recurrence.

    Singleton-singleton distance is the Euclidean distance; merges pick
    the minimum-distance pair, ties broken by the smallest (a, b) id pair.
    """
    x = np.asarray(points, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    n = len(x)
    if n < 2:
        raise AnalysisError("ward linkage needs at least 2 points")

    # squared inter-cluster distances, updated in place; rows are reused
    # for merged clusters and retired rows are masked with inf
    d2 = np.sum((x[:, None, :] - x[None, :, :]) ** 2, axis=2)
    np.fill_diagonal(d2, np.inf)
    cluster_of_row = np.arange(n, dtype=np.int64)
    row_of = {i: i for i in range(n)}
    sizes = np.ones(n, dtype=np.int64)  # indexed by row
    alive = np.ones(n, dtype=bool)
    merges = np.empty((n - 1, 4), dtype=np.float64)

    for step in range(n - 1):
        dist2 = d2.min()
        rows, cols = np.nonzero(d2 == dist2)
        # ties: smallest cluster-id pair wins
        candidates = sorted(
            (min(int(cluster_of_row[r]), int(cluster_of_row[c])),
             max(int(cluster_of_row[r]), int(cluster_of_row[c])))
            for r, c in zip(rows, cols)
        )
        a, b = candidates[0]
        ra, rb = row_of[a], row_of[b]
        na, nb = int(sizes[ra]), int(sizes[rb])
        new_id = n + step
        merges[step] = (a, b, np.sqrt(dist2), na + nb)

        # Lance-Williams update for Ward, on squared distances
        other = alive.copy()
        other[[ra, rb]] = False
        nc = sizes[other].astype(np.float64)
        denom = na + nb + nc
        updated = ((na + nc) * d2[ra, other] + (nb + nc) * d2[rb, other] - nc * dist2) / denom
        d2[ra, other] = updated
        d2[other, ra] = updated
        d2[rb, :] = np.inf
        d2[:, rb] = np.inf

        alive[rb] = False
        sizes[ra] = na + nb
        cluster_of_row[ra] = new_id
        row_of[new_id] = ra
        del row_of[a], row_of[b]

    return Dendrogram(merges, n)


def ward_linkage_bruteforce(points: np.ndarray) -> Dendrogram:
    """Independent oracle: recompute every inter-cluster Ward distance
    from raw member centroids at each step (no recurrence)."""
    x = np.asarray(points, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    n = len(x)
    clusters: dict[int, list[int]] = {i: [i] for i in range(n)}
    merges = np.empty((n - 1, 4), dtype=np.float64)
    next_id = n
    for step in range(n - 1):
        ids = sorted(clusters)
        best = None
        for i in range(len(ids)):
            for j in range(i + 1, len(ids)):
                a, b = ids[i], ids[j]
                ma, mb = clusters[a], clusters[b]
                ca = x[ma].mean(axis=0)
                cb = x[mb].mean(axis=0)
                na, nb = len(ma), len(mb)
                dist2 = 2.0 * na * nb / (na + nb) * float(np.sum((ca - cb) ** 2))
                if best is None or dist2 < best[0]:
                    best = (dist2, a, b)
        dist2, a, b = best
        merges[step] = (a, b, np.sqrt(dist2), len(clusters[a]) + len(clusters[b]))
        clusters[next_id] = clusters.pop(a) + clusters.pop(b)
        next_id += 1
    return Dendrogram(merges, n)


def cut_dendrogram(dendrogram: Dendrogram, cutoff_distance: float) -> np.ndarray:
    """Leaf labels after discarding merges above the cutoff; labels are
    densely numbered in order of each cluster's smallest leaf index."""
    if cutoff_distance < 0:
        raise AnalysisError("cutoff distance must be >= 0")
    n = dendrogram.leaf_count
    parent = list(range(2 * n - 1))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for step, (a, b, dist, _) in enumerate(dendrogram.merges):
        if dist > cutoff_distance:
            continue
        node = n + step
        parent[find(int(a))] = node
        parent[find(int(b))] = node

    roots: dict[int, int] = {}
    labels = np.empty(n, dtype=np.int64)
    for leaf in range(n):
        root = find(leaf)
        if root not in roots:
            roots[root] = len(roots)
        labels[leaf] = roots[root]
    return labels


def cut_to_k(dendrogram: Dendrogram, k: int) -> np.ndarray:
    """Labels for exactly k clusters (undo the last k-1 merges)."""
    n = dendrogram.leaf_count
    if not 1 <= k <= n:
        raise AnalysisError(f"cluster count {k} out of range 1..{n}")
    if k == 1:
        return np.zeros(n, dtype=np.int64)
    cutoff = float(dendrogram.merges[n - k, 2])
    # cut strictly below the (n-k)-th merge distance
    return cut_dendrogram(dendrogram, np.nextafter(cutoff, -np.inf))


def sample_cluster(labels: np.ndarray, cluster_id: int, m: int, seed: int) -> np.ndarray:
    """m member indices of one cluster, sampled without replacement."""
    labels = np.asarray(labels)
    members = np.flatnonzero(labels == cluster_id)
    if len(members) == 0:
        raise AnalysisError(f"unknown or empty cluster {cluster_id}")
    if m >= len(members):
        return members
    rng = np.random.Generator(np.random.PCG64(seed))
    picked = rng.choice(len(members), size=m, replace=False)
    return members[np.sort(picked)]


# ------------------------------------------------------------ t-SNE


def _conditional_affinities(d2: np.ndarray, perplexity: float,
                            tol: float = 1e-5, max_iter: int = 50) -> np.ndarray:
    """Per-point Gaussian affinities with bandwidths binary-searched to
    the target perplexity (entropy in nats against log(perplexity))."""
    n = len(d2)
    target = np.log(perplexity)
    p = np.zeros((n, n))
    for i in range(n):
        beta, beta_lo, beta_hi = 1.0, 0.0, np.inf
        row = d2[i].copy()
        row[i] = np.inf
        for _ in range(max_iter):
            w = np.exp(-row * beta)
            total = w.sum()
            if total <= 0:
                entropy = 0.0
                probs = np.zeros(n)
            else:
                probs = w / total
                nz = probs > 0
                entropy = -np.sum(probs[nz] * np.log(probs[nz]))
            if abs(entropy - target) < tol:
                break
            if entropy > target:
                beta_lo = beta
                beta = beta * 2.0 if beta_hi == np.inf else (beta + beta_hi) / 2.0
            else:
                beta_hi = beta
                beta = beta / 2.0 if beta_lo == 0.0 else (beta + beta_lo) / 2.0
        p[i] = probs
    return p


def _kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    mask = p > 0
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def _low_dim_affinities(y: np.ndarray):
    d2 = np.sum((y[:, None, :] - y[None, :, :]) ** 2, axis=2)
    num = 1.0 / (1.0 + d2)
    np.fill_diagonal(num, 0.0)
    q = num / num.sum()
    return np.maximum(q, 1e-12), num


def tsne(points: np.ndarray, perplexity: float = 80.0, iterations: int = 1000,
         seed: int = 0, return_kl: bool = False):
    """Exact t-SNE to 2D.

    Early exaggeration x12 for the first 250 iterations, momentum 0.5
    then 0.8 after iteration 250, learning rate max(count/12, 50),
    seeded Gaussian init with sigma 1e-4.
    """
    x = np.asarray(points, dtype=np.float64)
    n = len(x)
    if n <= 3 * perplexity:
        raise AnalysisError(
            f"count {n} must exceed 3*perplexity={3 * perplexity:g}; use a smaller perplexity"
        )
    d2 = np.sum((x[:, None, :] - x[None, :, :]) ** 2, axis=2)
    cond = _conditional_affinities(d2, perplexity)
    p = (cond + cond.T) / (2.0 * n)
    p = np.maximum(p, 1e-12)

    rng = np.random.Generator(np.random.PCG64(seed))
    y = rng.normal(0.0, 1e-4, size=(n, 2))
    velocity = np.zeros_like(y)
    lr = max(n / 12.0, 50.0)

    exaggeration_until = min(250, iterations)
    kl_initial = None
    for it in range(iterations):
        p_eff = p * 12.0 if it < exaggeration_until else p
        q, num = _low_dim_affinities(y)
        pq = (p_eff - q) * num
        grad = 4.0 * ((np.diag(pq.sum(axis=1)) - pq) @ y)
        momentum = 0.5 if it < 250 else 0.8
        velocity = momentum * velocity - lr * grad
        y = y + velocity
        y = y - y.mean(axis=0)
        if it == exaggeration_until:
            kl_initial = _kl_divergence(p, _low_dim_affinities(y)[0])
    if not np.isfinite(y).all():
        raise AnalysisError("t-SNE diverged to non-finite coordinates")
    if return_kl:
        kl_final = _kl_divergence(p, _low_dim_affinities(y)[0])
        if kl_initial is None:
            kl_initial = kl_final
        return y, kl_initial, kl_final
    return y
