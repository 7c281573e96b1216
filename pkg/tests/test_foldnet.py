import numpy as np
import pytest

from cityfold.foldnet import autodiff as ad
from cityfold.foldnet import (
    AdamState,
    ArchSpec,
    BranchTape,
    CheckpointError,
    DESK_ARCH,
    NetworkParams,
    Tensor,
    TrainConfig,
    adam_step,
    batch_loss,
    chamfer,
    checkpoint_load,
    checkpoint_save,
    decode,
    encode,
    frozen_branches,
    knn_indices,
    loss_and_gradients,
    train,
)
from cityfold.foldnet.network import encode_batch, folding_grid


def numeric_grad(fn, x, h=1e-6):
    g = np.zeros_like(x)
    flat = x.ravel()
    out = g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = fn()
        flat[i] = orig - h
        fm = fn()
        flat[i] = orig
        out[i] = (fp - fm) / (2 * h)
    return g


class TestAutodiffOps:
    def test_matmul_add_relu_chain(self):
        rng = np.random.default_rng(0)
        a = Tensor(rng.normal(size=(4, 3)))
        w = Tensor(rng.normal(size=(3, 5)))
        b = Tensor(rng.normal(size=5))

        def forward():
            return float(ad.mean_all(ad.relu(ad.add(ad.matmul(a, w), b))).data)

        loss = ad.mean_all(ad.relu(ad.add(ad.matmul(a, w), b)))
        loss.backward()
        for t in (a, w, b):
            assert np.allclose(t.grad, numeric_grad(forward, t.data), atol=1e-8)

    def test_square_sqrt_sum(self):
        rng = np.random.default_rng(1)
        x = Tensor(rng.uniform(0.5, 2.0, size=(6, 3)))

        def forward():
            return float(ad.mean_all(ad.sqrt(ad.sum_along(ad.square(x), axis=1))).data)

        loss = ad.mean_all(ad.sqrt(ad.sum_along(ad.square(x), axis=1)))
        loss.backward()
        assert np.allclose(x.grad, numeric_grad(forward, x.data), atol=1e-8)

    def test_take_rows_accumulates(self):
        x = Tensor(np.arange(6, dtype=np.float64).reshape(3, 2))
        out = ad.take_rows(x, np.array([0, 0, 2]))
        loss = ad.mean_all(out)
        loss.backward()
        # row 0 gathered twice, row 1 never
        assert np.allclose(x.grad[0], 2 / 6)
        assert np.allclose(x.grad[1], 0)

    def test_max_along_first_argmax_on_tie(self):
        x = Tensor(np.array([[1.0, 3.0, 3.0]]))
        out = ad.max_along(x, axis=1)
        ad.mean_all(out).backward()
        assert np.array_equal(x.grad, [[0.0, 1.0, 0.0]])

    def test_maximum_scalar_tie_prefers_first(self):
        a = Tensor(np.asarray(2.0))
        b = Tensor(np.asarray(2.0))
        ad.maximum_scalar(a, b).backward()
        assert a.grad == 1.0 and b.grad == 0.0

    def test_concat_reshape_scale(self):
        rng = np.random.default_rng(2)
        a = Tensor(rng.normal(size=(3, 2)))
        b = Tensor(rng.normal(size=(3, 4)))

        def forward():
            cat = ad.concat_cols(a, b)
            return float(ad.mean_all(ad.scale(ad.reshape(cat, (2, 9)), 3.0)).data)

        loss = ad.mean_all(ad.scale(ad.reshape(ad.concat_cols(a, b), (2, 9)), 3.0))
        loss.backward()
        for t in (a, b):
            assert np.allclose(t.grad, numeric_grad(forward, t.data), atol=1e-8)

    def test_diamond_graph_accumulates_once(self):
        x = Tensor(np.asarray([2.0]))
        y = ad.add(x, x)  # dy/dx = 2
        ad.mean_all(y).backward()
        assert x.grad[0] == 2.0

    def test_check_finite(self):
        with pytest.raises(ad.NumericError):
            ad.check_finite(Tensor(np.array([1.0, np.inf])), "test")


class TestBranchTape:
    def test_replay_pins_relu_branch(self):
        x = Tensor(np.array([1e-5, -1e-5]))
        tape = BranchTape()
        with frozen_branches(tape):
            ad.relu(x)
        # shift both entries across the kink: the replayed mask must hold
        x2 = Tensor(np.array([-1e-5, 1e-5]))
        with frozen_branches(tape):
            out = ad.relu(x2)
        assert np.array_equal(out.data, [-1e-5, 0.0])

    def test_same_branches_same_loss(self):
        params = NetworkParams.init(DESK_ARCH, seed=0).astype(np.float64)
        clouds = np.random.default_rng(0).normal(size=(2, 64, 3)) * 0.3
        tape = BranchTape()
        with frozen_branches(tape):
            first = batch_loss(params, clouds)
        with frozen_branches(tape):
            second = batch_loss(params, clouds)
        assert first == second == batch_loss(params, clouds)


class TestKnn:
    def test_matches_bruteforce(self):
        rng = np.random.default_rng(7)
        points = rng.normal(size=(40, 3))
        k = 6
        got = knn_indices(points, k)
        for i in range(len(points)):
            d = np.linalg.norm(points - points[i], axis=1)
            d[i] = np.inf
            expect = np.argsort(d, kind="stable")[:k]
            assert np.array_equal(got[i], expect)

    def test_tie_breaks_by_index(self):
        points = np.array([[0, 0, 0], [1, 0, 0], [-1, 0, 0]], dtype=np.float64)
        assert np.array_equal(knn_indices(points, 2)[0], [1, 2])

    def test_k_too_large(self):
        with pytest.raises(ValueError):
            knn_indices(np.zeros((3, 3)), 3)


class TestNetwork:
    def test_permutation_invariance_bitwise(self):
        params = NetworkParams.init(DESK_ARCH, seed=1)
        rng = np.random.default_rng(0)
        cloud = rng.normal(size=(64, 3))
        code = encode(params, cloud)
        shuffled = encode(params, cloud[rng.permutation(64)])
        assert np.array_equal(code, shuffled)

    def test_decode_shape_and_grid(self):
        params = NetworkParams.init(DESK_ARCH, seed=1)
        out = decode(params, np.zeros(DESK_ARCH.codeword_dim))
        assert out.shape == (DESK_ARCH.grid_points, 3)
        grid = folding_grid(DESK_ARCH)
        assert grid.shape == (25, 2)
        assert grid.min() == -0.3 and grid.max() == 0.3

    def test_codeword_dim_checked(self):
        params = NetworkParams.init(DESK_ARCH, seed=1)
        with pytest.raises(ValueError):
            decode(params, np.zeros(7))

    def test_batch_encode_matches_single(self):
        params = NetworkParams.init(DESK_ARCH, seed=2).astype(np.float64)
        clouds = np.random.default_rng(3).normal(size=(4, 64, 3))
        codes = encode_batch(params, clouds).data
        for i in range(4):
            assert np.allclose(codes[i], encode(params, clouds[i]), atol=1e-12)

    def test_init_deterministic(self):
        a = NetworkParams.init(DESK_ARCH, seed=5)
        b = NetworkParams.init(DESK_ARCH, seed=5)
        for name in a.names():
            assert np.array_equal(a.tensors[name].data, b.tensors[name].data)


def chamfer_bruteforce(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    d = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=2)
    return max(d.min(axis=1).mean(), d.min(axis=0).mean())


class TestChamfer:
    def test_hand_example(self):
        a = [[0, 0, 0], [1, 0, 0]]
        b = [[0, 1, 0], [1, 1, 0]]
        assert chamfer(a, b) == pytest.approx(1.0)

    def test_asymmetric_sets(self):
        a = [[0, 0, 0]]
        b = [[0, 0, 0], [3, 0, 0]]
        # a->b mean 0, b->a mean 1.5; max picks 1.5
        assert chamfer(a, b) == pytest.approx(1.5)

    def test_identical_clouds_zero(self):
        x = np.random.default_rng(0).normal(size=(50, 3))
        assert chamfer(x, x) == 0.0

    def test_matches_bruteforce(self):
        rng = np.random.default_rng(9)
        for _ in range(50):
            a = rng.normal(size=(rng.integers(2, 64), 3))
            b = rng.normal(size=(rng.integers(2, 64), 3))
            fast = chamfer(a, b)
            slow = chamfer_bruteforce(a, b)
            assert abs(fast - slow) <= 1e-6 * max(1.0, slow)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            chamfer(np.zeros((0, 3)), np.zeros((1, 3)))


class TestGradients:
    def test_spot_finite_differences(self):
        params = NetworkParams.init(DESK_ARCH, seed=0).astype(np.float64)
        clouds = np.random.default_rng(0).normal(size=(2, 64, 3)) * 0.3
        tape = BranchTape()
        with frozen_branches(tape):
            _, grads = loss_and_gradients(params, clouds)
        rng = np.random.default_rng(1)
        h = 1e-4
        for name, tensor in params.tensors.items():
            flat = tensor.data.ravel()
            g = grads[name].ravel()
            for i in rng.choice(flat.size, size=min(5, flat.size), replace=False):
                orig = flat[i]
                flat[i] = orig + h
                with frozen_branches(tape):
                    fp = batch_loss(params, clouds)
                flat[i] = orig - h
                with frozen_branches(tape):
                    fm = batch_loss(params, clouds)
                flat[i] = orig
                fd = (fp - fm) / (2 * h)
                assert abs(g[i] - fd) / max(1.0, abs(fd)) < 1e-4, name

    def test_loss_matches_chamfer_of_decoded(self):
        params = NetworkParams.init(DESK_ARCH, seed=4).astype(np.float64)
        clouds = np.random.default_rng(5).normal(size=(3, 64, 3)) * 0.3
        loss, _ = loss_and_gradients(params, clouds)
        expected = np.mean([
            chamfer(c, decode(params, encode(params, c))) for c in clouds
        ])
        assert loss == pytest.approx(expected, rel=1e-12)


class TestAdam:
    def test_hand_computed_first_step(self):
        arch = ArchSpec(codeword_dim=2, k_neighbors=1, grid_side=2,
                        point_widths=(2,), graph1_width=2, graph2_width=2,
                        head_hidden=2, fold_hidden=2)
        params = NetworkParams.init(arch, seed=0)
        name = "point0.w"
        before = params.tensors[name].data.copy()
        grads = {k: np.ones_like(t.data) for k, t in params.tensors.items()}
        state = AdamState.init(params)
        adam_step(state, params, grads, lr=0.1)
        # bias-corrected m_hat = v_hat = 1 for unit gradient at t=1
        expected = before - 0.1 * 1.0 / (1.0 + 1e-8)
        assert np.allclose(params.tensors[name].data, expected, atol=1e-6)
        assert state.step == 1

    def test_shape_mismatch_rejected(self):
        params = NetworkParams.init(DESK_ARCH, seed=0)
        grads = {k: np.zeros(3) for k in params.names()}
        with pytest.raises(ValueError):
            adam_step(AdamState.init(params), params, grads, lr=0.1)


class TestTraining:
    def make_data(self, count=10):
        return np.random.default_rng(1).normal(size=(count, 64, 3)) * 0.3

    def test_loss_decreases(self):
        cfg = TrainConfig(epochs=30, learning_rate=1e-3, batch_size=4, seed=0,
                          arch=DESK_ARCH)
        _, _, curve = train(self.make_data(), cfg)
        assert curve[-1] < 0.6 * curve[0]

    def test_deterministic_repeat(self):
        cfg = TrainConfig(epochs=5, learning_rate=1e-3, batch_size=4, seed=3,
                          arch=DESK_ARCH)
        _, _, c1 = train(self.make_data(), cfg)
        _, _, c2 = train(self.make_data(), cfg)
        assert c1 == c2

    def test_resume_replays_unbroken_run(self, tmp_path):
        data = self.make_data()
        cfg = TrainConfig(epochs=6, learning_rate=1e-3, batch_size=4, seed=0,
                          arch=DESK_ARCH, checkpoint_every=3)
        params_full, _, curve_full = train(data, cfg, checkpoint_dir=tmp_path)
        params, state, config, epoch = checkpoint_load(tmp_path / "epoch00003.ckpt")
        assert epoch == 3
        _, _, curve_tail = train(data, config, initial=(params, state), start_epoch=epoch)
        assert curve_full[3:] == pytest.approx(curve_tail, rel=1e-12)

    def test_bad_dataset_rejected(self):
        with pytest.raises(ValueError):
            train(np.zeros((0, 64, 3)), TrainConfig(epochs=1, arch=DESK_ARCH))


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        params = NetworkParams.init(DESK_ARCH, seed=0)
        state = AdamState.init(params)
        state.step = 17
        cfg = TrainConfig(epochs=9, arch=DESK_ARCH)
        path = tmp_path / "model.ckpt"
        checkpoint_save(path, params, state, cfg, epoch=9)
        p2, s2, cfg2, epoch = checkpoint_load(path, expected_arch=DESK_ARCH)
        assert epoch == 9 and s2.step == 17 and cfg2.epochs == 9
        for name in params.names():
            assert np.array_equal(params.tensors[name].data, p2.tensors[name].data)
            assert np.array_equal(state.m[name], s2.m[name])

    def test_arch_mismatch_names_tensor(self, tmp_path):
        params = NetworkParams.init(DESK_ARCH, seed=0)
        path = tmp_path / "model.ckpt"
        checkpoint_save(path, params, AdamState.init(params), TrainConfig(arch=DESK_ARCH))
        other = ArchSpec(codeword_dim=8, k_neighbors=8, grid_side=5,
                         point_widths=(16, 16, 16), graph1_width=32, graph2_width=64,
                         head_hidden=32, fold_hidden=32)
        with pytest.raises(CheckpointError, match="head1.w"):
            checkpoint_load(path, expected_arch=other)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"nope" + b"\x00" * 64)
        with pytest.raises(CheckpointError, match="magic"):
            checkpoint_load(path)

    def test_truncation_detected(self, tmp_path):
        params = NetworkParams.init(DESK_ARCH, seed=0)
        path = tmp_path / "model.ckpt"
        checkpoint_save(path, params, AdamState.init(params), TrainConfig(arch=DESK_ARCH))
        raw = path.read_bytes()
        path.write_bytes(raw[:-100])
        with pytest.raises(CheckpointError, match="truncated"):
            checkpoint_load(path)
