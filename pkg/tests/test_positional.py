import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from graphtransformer.graph import build_graph
from graphtransformer.positional import (
    ConvergenceError,
    LapPE,
    WlRoleVocabulary,
    lap_pe,
    normalized_laplacian,
    random_sign_flip,
    symmetric_eigendecompose,
    wl_roles,
)

from conftest import random_symmetric_graph, undirected


def path(n):
    return build_graph(n, undirected([(i, i + 1) for i in range(n - 1)]))


def cycle(n):
    return build_graph(n, undirected([(i, (i + 1) % n) for i in range(n)]))


class TestLaplacian:
    def test_two_node(self):
        g = build_graph(2, [(0, 1), (1, 0)])
        assert np.array_equal(normalized_laplacian(g), [[1, -1], [-1, 1]])

    def test_path3(self, path3):
        lap = normalized_laplacian(path3)
        assert lap[0, 1] == pytest.approx(-1 / np.sqrt(2), abs=1e-15)
        assert lap[1, 2] == pytest.approx(-1 / np.sqrt(2), abs=1e-15)
        np.testing.assert_allclose(np.linalg.eigvalsh(lap), [0, 1, 2], atol=1e-12)

    def test_empty_graph_is_zero(self):
        assert not normalized_laplacian(build_graph(3, [])).any()

    def test_matches_networkx(self, rng):
        for _ in range(10):
            g = random_symmetric_graph(rng, 9, 0.35)
            nxg = nx.Graph(g.edge_list())
            nxg.add_nodes_from(range(9))
            ref = nx.normalized_laplacian_matrix(nxg, nodelist=range(9)).toarray()
            np.testing.assert_allclose(normalized_laplacian(g), ref, atol=1e-14)

    def test_parallel_edges_and_self_loops_collapse(self):
        g = build_graph(2, [(0, 1), (0, 1), (1, 0), (0, 0)])
        assert np.array_equal(normalized_laplacian(g), [[1, -1], [-1, 1]])

    def test_asymmetric_rejected(self):
        with pytest.raises(ValueError, match="reverse edges"):
            normalized_laplacian(build_graph(2, [(0, 1)]))


class TestJacobi:
    def test_identity(self):
        spec = symmetric_eigendecompose(np.eye(3))
        assert np.array_equal(spec.eigenvalues, [1, 1, 1])
        np.testing.assert_allclose(spec.reconstruct(), np.eye(3), atol=1e-14)

    def test_two_by_two(self):
        spec = symmetric_eigendecompose([[1.0, -1.0], [-1.0, 1.0]])
        np.testing.assert_allclose(spec.eigenvalues, [0, 2], atol=1e-14)
        u = spec.eigenvectors
        np.testing.assert_allclose(np.abs(u[:, 0]), [2 ** -0.5] * 2, atol=1e-14)
        np.testing.assert_allclose(u[0, 1] * u[1, 1], -0.5, atol=1e-14)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 10), st.integers(0, 2 ** 31))
    def test_random_symmetric_against_numpy(self, n, seed):
        a = np.random.default_rng(seed).normal(size=(n, n))
        a = a + a.T
        spec = symmetric_eigendecompose(a)
        np.testing.assert_allclose(spec.eigenvalues, np.linalg.eigvalsh(a), atol=1e-9)
        assert np.max(np.abs(spec.reconstruct() - a)) <= 1e-8
        u = spec.eigenvectors
        assert np.max(np.abs(u.T @ u - np.eye(n))) <= 1e-8
        assert np.all(np.diff(spec.eigenvalues) >= 0)

    def test_non_symmetric(self):
        with pytest.raises(ValueError, match="symmetric"):
            symmetric_eigendecompose([[1.0, 2.0], [0.0, 1.0]])

    def test_sweep_budget(self):
        a = np.random.default_rng(0).normal(size=(6, 6))
        with pytest.raises(ConvergenceError, match="1 sweeps"):
            symmetric_eigendecompose(a + a.T, max_sweeps=1)


class TestLapPE:
    def test_path3_sign_pattern(self, path3):
        pe = lap_pe(path3, 1)
        col = pe.encodings[:, 0]
        assert pe.eigenvalues[0] == pytest.approx(1.0)
        assert col[0] > 0 and abs(col[1]) < 1e-12 and col[2] < 0
        np.testing.assert_allclose(col, [2 ** -0.5, 0, -(2 ** -0.5)], atol=1e-12)

    def test_zero_padding(self):
        pe = lap_pe(build_graph(2, [(0, 1), (1, 0)]), 5)
        assert pe.encodings.shape == (2, 5)
        assert np.abs(pe.encodings[:, 0]).min() > 0
        assert not pe.encodings[:, 1:].any()
        assert len(pe.eigenvalues) == 1

    def test_two_components_drop_two_zero_eigenvalues(self):
        g = build_graph(4, undirected([(0, 1), (2, 3)]))
        pe = lap_pe(g, 1)
        assert pe.eigenvalues[0] == pytest.approx(2.0)

    def test_isolated_nodes_only(self):
        pe = lap_pe(build_graph(3, []), 2)
        assert not pe.encodings.any()

    def test_zero_eigenvalue_count_is_component_count(self, rng):
        for _ in range(20):
            g = random_symmetric_graph(rng, int(rng.integers(2, 16)), 0.15)
            nxg = nx.Graph(g.edge_list())
            nxg.add_nodes_from(range(g.num_nodes))
            spec = symmetric_eigendecompose(normalized_laplacian(g))
            assert np.sum(spec.eigenvalues < 1e-8) == nx.number_connected_components(nxg)

    def test_permutation_covariance(self, rng):
        checked = 0
        while checked < 10:
            g = random_symmetric_graph(rng, 8, 0.5)
            pe = lap_pe(g, 3)
            spectrum = symmetric_eigendecompose(normalized_laplacian(g)).eigenvalues
            if spectrum[1] < 1e-8 or np.min(np.diff(spectrum[:5])) < 1e-6:
                continue  # disconnected or degenerate around the selected columns
            perm = rng.permutation(8)
            inv = np.argsort(perm)
            h = build_graph(8, [(inv[s], inv[d]) for s, d in g.edge_list()])
            pe_h = lap_pe(h, 3)
            # compare up to the sign of each column
            a, b = pe.encodings, pe_h.encodings[inv]
            signs = np.sign(np.sum(a * b, axis=0))
            np.testing.assert_allclose(a, b * signs, atol=1e-8)
            checked += 1

    def test_distance_awareness_on_path(self):
        enc = lap_pe(path(16), 2).encodings
        near = [np.linalg.norm(enc[i] - enc[i + 1]) for i in range(15)]
        far = [np.linalg.norm(enc[i] - enc[j]) for i in range(16) for j in range(i + 8, 16)]
        assert np.mean(near) < np.mean(far)

    def test_invalid_k(self, path3):
        with pytest.raises(ValueError):
            lap_pe(path3, 0)


class TestSignFlip:
    def test_all_plus_is_identity(self, path3):
        pe = lap_pe(path3, 2)
        out = random_sign_flip(pe, None, signs=np.ones(2))
        assert np.array_equal(out.encodings, pe.encodings)

    def test_involution(self, path3):
        pe = lap_pe(path3, 2)
        signs = np.array([-1.0, 1.0])
        twice = random_sign_flip(random_sign_flip(pe, None, signs), None, signs)
        assert np.array_equal(twice.encodings, pe.encodings)

    def test_mean_is_zero(self):
        pe = LapPE(np.ones((1, 1)), np.ones(1))
        rng = np.random.default_rng(0)
        draws = np.array([random_sign_flip(pe, rng).encodings[0, 0] for _ in range(1000)])
        assert abs(draws.mean()) < 3 * draws.std() / np.sqrt(len(draws))


class TestWlRoles:
    def test_four_cycle(self):
        r = wl_roles(cycle(4))
        assert r.num_roles == 1 and not r.role_id.any()

    def test_path3(self, path3):
        assert wl_roles(path3).role_id.tolist() == [0, 1, 0]

    def test_star(self):
        star = build_graph(4, undirected([(0, 1), (0, 2), (0, 3)]))
        r = wl_roles(star)
        assert r.num_roles == 2 and r.role_id.tolist() == [0, 1, 1, 1]

    def test_stops_when_stable(self):
        assert wl_roles(cycle(6), max_iterations=10).iterations_used == 1

    def test_path_refines_beyond_degree(self):
        r = wl_roles(path(5), max_iterations=5)
        assert r.role_id.tolist() == [0, 1, 2, 1, 0]

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2 ** 31))
    def test_contiguous_and_degree_respecting(self, seed):
        g = random_symmetric_graph(np.random.default_rng(seed), 10, 0.3)
        r = wl_roles(g)
        assert sorted(set(r.role_id.tolist())) == list(range(r.num_roles))
        deg = g.in_degrees()
        for i in range(10):
            for j in range(10):
                if r.role_id[i] == r.role_id[j]:
                    assert deg[i] == deg[j]

    def test_vocabulary_shares_ids_across_graphs(self):
        vocab = WlRoleVocabulary(max_roles=8).fit([path(7), cycle(5)])
        a, b, c = vocab.transform([path(7), path(8), path(4)])
        assert a[0] == b[0]  # endpoints of long paths look alike within three hops
        assert a[0] != c[0]  # in path(4) the far endpoint is within reach
        assert vocab.transform_one(cycle(5)).tolist() == [vocab.transform_one(cycle(5))[0]] * 5

    def test_vocabulary_unknown_roles(self):
        vocab = WlRoleVocabulary(max_roles=3).fit([path(3)])
        star = build_graph(5, undirected([(0, i) for i in range(1, 5)]))
        assert set(vocab.transform_one(star).tolist()) == {2}
