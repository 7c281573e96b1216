import numpy as np
import pytest
from scipy.cluster.hierarchy import fcluster, linkage

from cityfold.analysis import (
    AnalysisError,
    cut_dendrogram,
    cut_to_k,
    pca_fit,
    pca_transform,
    sample_cluster,
    tsne,
    ward_linkage,
    ward_linkage_bruteforce,
)


class TestPca:
    def test_matches_eigendecomposition(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(200, 8)) @ rng.normal(size=(8, 8))
        model = pca_fit(x, q=5)
        cov = np.cov(x, rowvar=False)
        eigvals = np.sort(np.linalg.eigvalsh(cov))[::-1]
        assert np.allclose(model.explained_variance, eigvals[:5], rtol=1e-9)
        # components span the top eigenvectors: projections preserve variance
        proj = pca_transform(model, x)
        assert np.allclose(proj.var(axis=0, ddof=1), eigvals[:5], rtol=1e-9)

    def test_components_orthonormal(self):
        x = np.random.default_rng(1).normal(size=(60, 10))
        model = pca_fit(x, q=6)
        assert np.allclose(model.components @ model.components.T, np.eye(6), atol=1e-10)

    def test_sign_convention_deterministic(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(50, 6))
        a = pca_fit(x, q=4)
        # row order must not flip component signs
        b = pca_fit(x[rng.permutation(50)], q=4)
        assert np.allclose(a.components, b.components, atol=1e-9)
        largest = np.abs(a.components).argmax(axis=1)
        assert (a.components[np.arange(4), largest] > 0).all()

    def test_validation(self):
        x = np.zeros((5, 10))
        with pytest.raises(AnalysisError):
            pca_fit(x, q=6)
        with pytest.raises(AnalysisError):
            pca_fit(np.zeros((20, 4)), q=5)
        model = pca_fit(np.random.default_rng(0).normal(size=(20, 4)), q=2)
        with pytest.raises(AnalysisError):
            pca_transform(model, np.zeros((3, 7)))


class TestWard:
    def test_matches_bruteforce_oracle(self):
        rng = np.random.default_rng(0)
        for trial in range(20):
            x = rng.normal(size=(rng.integers(3, 30), rng.integers(1, 5)))
            fast = ward_linkage(x)
            slow = ward_linkage_bruteforce(x)
            assert np.allclose(fast.merges, slow.merges, rtol=1e-9, atol=1e-9), trial

    def test_matches_scipy(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            x = rng.normal(size=(25, 3))
            ours = ward_linkage(x)
            ref = linkage(x, method="ward")
            assert np.allclose(ours.merges[:, 2], ref[:, 2], rtol=1e-8)
            assert np.array_equal(ours.merges[:, 3], ref[:, 3])

    def test_singleton_distance_is_euclidean(self):
        x = np.array([[0.0], [3.0], [10.0]])
        dendrogram = ward_linkage(x)
        assert dendrogram.merges[0, 2] == pytest.approx(3.0)

    def test_distances_nondecreasing(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            x = rng.normal(size=(40, 4))
            d = ward_linkage(x).merges[:, 2]
            assert (np.diff(d) >= -1e-12).all()

    def test_needs_two_points(self):
        with pytest.raises(AnalysisError):
            ward_linkage(np.zeros((1, 2)))


class TestCuts:
    def test_cut_matches_scipy_fcluster(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(30, 3))
        dendrogram = ward_linkage(x)
        ref = linkage(x, method="ward")
        for k in (2, 3, 5, 9):
            ours = cut_to_k(dendrogram, k)
            theirs = fcluster(ref, k, criterion="maxclust")
            assert len(set(ours)) == k
            # same partition up to label renaming
            pairing = {}
            for a, b in zip(ours, theirs):
                assert pairing.setdefault(a, b) == b

    def test_cut_zero_gives_singletons(self):
        x = np.random.default_rng(6).normal(size=(12, 2))
        labels = cut_dendrogram(ward_linkage(x), 0.0)
        assert len(set(labels)) == 12

    def test_labels_ordered_by_smallest_leaf(self):
        x = np.random.default_rng(7).normal(size=(15, 2))
        labels = cut_to_k(ward_linkage(x), 4)
        first_seen = []
        for lab in labels:
            if lab not in first_seen:
                first_seen.append(lab)
        assert first_seen == sorted(first_seen)

    def test_k_validation(self):
        dendrogram = ward_linkage(np.random.default_rng(0).normal(size=(5, 2)))
        assert len(set(cut_to_k(dendrogram, 1))) == 1
        assert len(set(cut_to_k(dendrogram, 5))) == 5
        with pytest.raises(AnalysisError):
            cut_to_k(dendrogram, 6)
        with pytest.raises(AnalysisError):
            cut_dendrogram(dendrogram, -1.0)


class TestSampleCluster:
    def test_without_replacement_and_sorted(self):
        labels = np.array([0, 1, 0, 1, 0, 1, 0, 1, 0, 1])
        picked = sample_cluster(labels, 1, 3, seed=0)
        assert len(set(picked.tolist())) == 3
        assert (labels[picked] == 1).all()
        assert np.array_equal(picked, np.sort(picked))

    def test_small_cluster_returned_whole(self):
        labels = np.array([0, 0, 1])
        assert np.array_equal(sample_cluster(labels, 1, 5, seed=0), [2])

    def test_unknown_cluster(self):
        with pytest.raises(AnalysisError):
            sample_cluster(np.zeros(4, dtype=int), 9, 2, seed=0)


def two_blobs(n_per=60, dim=8, gap=10.0, seed=0):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(n_per, dim))
    b = rng.normal(size=(n_per, dim))
    b[:, 0] += gap
    x = np.concatenate([a, b])
    labels = np.concatenate([np.zeros(n_per, dtype=int), np.ones(n_per, dtype=int)])
    return x, labels


class TestTsne:
    def test_deterministic(self):
        x, _ = two_blobs()
        y1 = tsne(x, perplexity=20, iterations=300, seed=1)
        y2 = tsne(x, perplexity=20, iterations=300, seed=1)
        assert np.array_equal(y1, y2)

    def test_kl_decreases_and_blobs_separate(self):
        x, labels = two_blobs()
        y, kl_initial, kl_final = tsne(x, perplexity=20, iterations=500, seed=0,
                                       return_kl=True)
        assert kl_final < kl_initial
        # 1-NN label agreement in the 2D embedding
        d = np.linalg.norm(y[:, None] - y[None], axis=2)
        np.fill_diagonal(d, np.inf)
        agreement = (labels[d.argmin(axis=1)] == labels).mean()
        assert agreement >= 0.95

    def test_perplexity_bound_enforced(self):
        with pytest.raises(AnalysisError):
            tsne(np.zeros((30, 4)), perplexity=10)

    def test_output_centered(self):
        x, _ = two_blobs(n_per=40)
        y = tsne(x, perplexity=10, iterations=120, seed=2)
        assert np.allclose(y.mean(axis=0), 0.0, atol=1e-9)
