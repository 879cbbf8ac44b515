import numpy as np
import pytest

from simprune.distance import ChannelStats, empirical_distance_matrix
from simprune.models import duplicate_channel_model, random_model
from simprune.parallel import parallel_map, worker_count
from simprune.tensor import (
    ActivationKind,
    BnParams,
    ConvKernel,
    LayerBlock,
    ModelGraph,
    Tensor4,
    apply_activation,
    model_forward,
)
from simprune.verify import (
    measure_shift,
    distance_matrix_report,
    verify_activation_inequality,
    verify_distance_convergence,
    verify_shift_bound,
)


def independent_channel_model(seed=0, channels=4):
    """Single pair of blocks whose first layer has uncorrelated channels.

    Each first-layer filter reads a different input channel, so post-BN
    channels are independent and the empirical-vs-closed-form gap is pure
    sampling noise (no covariance floor): more trials must shrink it.
    """
    rng = np.random.default_rng(seed)
    w0 = np.zeros((channels, channels, 3, 3), dtype=np.float32)
    for c in range(channels):
        w0[c, c] = rng.uniform(-0.3, 0.3, (3, 3))
    bn0 = BnParams(
        gamma=rng.uniform(0.5, 1.2, channels).astype(np.float32),
        beta=rng.uniform(-3.0, 3.0, channels).astype(np.float32),
    )
    w1 = rng.uniform(-0.3, 0.3, (channels, channels, 3, 3)).astype(np.float32)
    bn1 = BnParams(
        gamma=rng.uniform(0.5, 1.2, channels).astype(np.float32),
        beta=rng.uniform(-3.0, 3.0, channels).astype(np.float32),
    )
    return ModelGraph(
        blocks=(
            LayerBlock(conv=ConvKernel(w0), bn=bn0),
            LayerBlock(conv=ConvKernel(w1), bn=bn1),
        )
    )


class TestDistanceConvergence:
    def test_final_error_small_on_reference_stats(self):
        report = verify_distance_convergence(
            sample_sizes=(10**4, 10**5, 10**6), trials=3, seed=0
        )
        assert report.limit == 6.0
        assert report.final_rel_error <= 0.01

    def test_degenerate_stats_are_exact(self):
        z = ChannelStats(0.0, 0.0)
        report = verify_distance_convergence(
            stats_a=z, stats_b=z, sample_sizes=(10, 100), trials=2, seed=1
        )
        assert report.limit == 0.0
        assert report.empirical == (0.0, 0.0)
        assert report.rel_errors == (0.0, 0.0)
        assert report.passed

    def test_prefix_means_match_direct_recomputation(self):
        trials, sizes = 3, (10, 100)
        report = verify_distance_convergence(sample_sizes=sizes, trials=trials, seed=5)
        per_trial = []
        for t in range(trials):
            rng = np.random.default_rng([5, t])
            a = rng.normal(0.0, 1.0, sizes[-1])
            b = rng.normal(1.0, 2.0, sizes[-1])
            sq = (a - b) ** 2
            per_trial.append([sq[:n].mean() for n in sizes])
        want = np.mean(per_trial, axis=0)
        assert np.allclose(report.empirical, want, rtol=1e-9)

    def test_sizes_must_increase(self):
        with pytest.raises(ValueError):
            verify_distance_convergence(sample_sizes=(100, 100), trials=1)
        with pytest.raises(ValueError):
            verify_distance_convergence(sample_sizes=(), trials=1)

    def test_trials_validated(self):
        with pytest.raises(ValueError):
            verify_distance_convergence(trials=0)

    def test_report_is_deterministic(self):
        kwargs = dict(sample_sizes=(10, 1000), trials=4, seed=9)
        a = verify_distance_convergence(**kwargs).to_json()
        b = verify_distance_convergence(**kwargs).to_json()
        assert a == b


class TestMeasureShift:
    def test_duplicate_channels_shift_nothing(self):
        model = duplicate_channel_model()
        x = Tensor4(np.random.default_rng(2).standard_normal((3, 8, 8, 4)).astype(np.float32))
        shifts = measure_shift(model, 0, pruned_channel=2, representative=1, input=x)
        assert shifts.shape == (3,)
        assert shifts.max() <= 1e-12

    def test_zero_kernel_slice_shifts_nothing(self):
        rng = np.random.default_rng(3)
        w0 = rng.uniform(-0.3, 0.3, (4, 3, 3, 3)).astype(np.float32)
        w1 = rng.uniform(-0.3, 0.3, (3, 4, 3, 3)).astype(np.float32)
        w1[:, 1] = 0.0  # next layer never reads channel 1
        model = ModelGraph(
            blocks=(
                LayerBlock(
                    conv=ConvKernel(w0),
                    bn=BnParams(
                        gamma=rng.uniform(0.5, 1.2, 4).astype(np.float32),
                        beta=rng.uniform(-3, 3, 4).astype(np.float32),
                    ),
                ),
                LayerBlock(
                    conv=ConvKernel(w1),
                    bn=BnParams(gamma=np.ones(3), beta=np.zeros(3)),
                ),
            )
        )
        x = Tensor4(rng.standard_normal((3, 8, 8, 4)).astype(np.float32))
        shifts = measure_shift(model, 0, pruned_channel=1, representative=3, input=x)
        assert shifts.max() == 0.0

    def test_random_pair_is_finite_and_nonnegative(self):
        # the call itself cross-checks the forward-difference route against
        # the closed form to 1e-5 and raises if they disagree
        model = random_model(num_blocks=2, channels=5, seed=4)
        x = Tensor4(np.random.default_rng(4).standard_normal((3, 8, 8, 4)).astype(np.float32))
        shifts = measure_shift(model, 0, pruned_channel=0, representative=3, input=x)
        assert shifts.shape == (5,)
        assert np.isfinite(shifts).all()
        assert (shifts >= 0).all()

    def test_last_layer_rejected(self):
        model = random_model(num_blocks=2, channels=4, seed=5)
        x = Tensor4(np.zeros((3, 8, 8, 2), dtype=np.float32))
        with pytest.raises(IndexError):
            measure_shift(model, 1, 0, 1, x)

    def test_channel_out_of_range(self):
        model = random_model(num_blocks=2, channels=4, seed=6)
        x = Tensor4(np.zeros((3, 8, 8, 2), dtype=np.float32))
        with pytest.raises(IndexError):
            measure_shift(model, 0, 7, 1, x)


class TestShiftBound:
    def test_random_relu_model_satisfies_bound(self):
        report = verify_shift_bound(random_model(num_blocks=2, channels=(4, 3), seed=7), trials=2, seed=7)
        assert report.all_satisfied
        assert report.worst_margin <= 0.0 + 1e-9
        # one record per (trial, pruned channel, output channel)
        assert len(report.entries) == 2 * 4 * 3
        assert set(report.entries[0]) == {
            "trial",
            "layer",
            "channel",
            "nearest",
            "output_channel",
            "shift",
            "lambda",
            "min_distance",
            "bound",
            "satisfied",
        }

    def test_sigmoid_model_satisfies_bound(self):
        model = random_model(num_blocks=2, channels=5, act=ActivationKind.SIGMOID, seed=8)
        assert verify_shift_bound(model, trials=2, seed=8).all_satisfied

    def test_duplicate_fixture_bound_holds_with_zero_distance(self):
        report = verify_shift_bound(duplicate_channel_model(), trials=1, seed=9)
        assert report.all_satisfied
        dup = [
            e
            for e in report.entries
            if e["layer"] == 0 and e["channel"] == 1 and e["nearest"] == 2
        ]
        assert dup  # the duplicate is its twin's nearest neighbor
        for e in dup:
            assert e["min_distance"] <= 1e-9
            assert e["shift"] <= 1e-9

    def test_zero_gamma_layer_bound_holds(self):
        rng = np.random.default_rng(10)
        base = random_model(num_blocks=2, channels=4, seed=10)
        flat = LayerBlock(
            conv=base.blocks[0].conv,
            bn=BnParams(
                gamma=np.zeros(4, dtype=np.float32),
                beta=rng.uniform(-2, 2, 4).astype(np.float32),
            ),
        )
        model = ModelGraph(blocks=(flat, base.blocks[1]))
        assert verify_shift_bound(model, trials=1, seed=10).all_satisfied

    def test_identity_activation_rejected_by_default(self):
        model = random_model(num_blocks=2, channels=4, act=ActivationKind.IDENTITY, seed=11)
        with pytest.raises(ValueError):
            verify_shift_bound(model, trials=1, seed=11)
        report = verify_shift_bound(model, trials=1, seed=11, allow_identity=True)
        assert report.all_satisfied

    def test_single_block_model_rejected(self):
        model = ModelGraph(blocks=random_model(num_blocks=2, channels=4, seed=12).blocks[:1])
        with pytest.raises(ValueError):
            verify_shift_bound(model, trials=1)

    def test_report_deterministic_and_thread_invariant(self, monkeypatch):
        model = random_model(num_blocks=2, channels=4, seed=13)
        serial = verify_shift_bound(model, trials=3, seed=13).to_json()
        assert verify_shift_bound(model, trials=3, seed=13).to_json() == serial
        monkeypatch.setenv("SIMPRUNE_THREADS", "4")
        assert verify_shift_bound(model, trials=3, seed=13).to_json() == serial


class TestActivationInequality:
    def test_relu_worked_example(self):
        h1 = apply_activation(np.array(-5.0), ActivationKind.RELU)
        h2 = apply_activation(np.array(3.0), ActivationKind.RELU)
        assert (h1 - h2) ** 2 == 9.0 <= (-5.0 - 3.0) ** 2

    def test_equal_inputs_no_violation(self):
        h = apply_activation(np.array(0.7), ActivationKind.SIGMOID)
        assert (h - h) ** 2 == 0.0

    def test_sampled_harness_both_kinds(self):
        for kind in (ActivationKind.RELU, ActivationKind.SIGMOID):
            report = verify_activation_inequality(kind, samples=10**5, seed=0)
            assert report.passed
            assert report.violations == 0
            assert report.max_ratio <= 1.0

    def test_identity_rejected(self):
        with pytest.raises(ValueError):
            verify_activation_inequality(ActivationKind.IDENTITY, samples=10)

    def test_samples_validated(self):
        with pytest.raises(ValueError):
            verify_activation_inequality(ActivationKind.RELU, samples=0)

    def test_deterministic(self):
        a = verify_activation_inequality(ActivationKind.RELU, samples=1000, seed=3)
        b = verify_activation_inequality(ActivationKind.RELU, samples=1000, seed=3)
        assert a.to_json() == b.to_json()


class TestDistanceMatrixReport:
    def test_unit_bn_probabilistic_matrix_is_constant_two(self):
        rng = np.random.default_rng(14)
        blocks = []
        fan_in = 3
        for width in (4, 4):
            blocks.append(
                LayerBlock(
                    conv=ConvKernel(
                        rng.uniform(-0.3, 0.3, (width, fan_in, 3, 3)).astype(np.float32)
                    ),
                    bn=BnParams(gamma=np.ones(width), beta=np.zeros(width)),
                )
            )
            fan_in = width
        model = ModelGraph(blocks=tuple(blocks))
        report = distance_matrix_report(model, trials=1, batch=4, seed=14)
        for triple in report:
            off = triple.probabilistic.off_diagonal()
            assert np.array_equal(off, np.full_like(off, 2.0))

    def test_more_trials_shrink_the_gap_when_channels_independent(self):
        model = independent_channel_model(seed=15)
        noisy = distance_matrix_report(model, trials=1, batch=4, seed=15)
        averaged = distance_matrix_report(model, trials=20, batch=256, seed=15)
        # only layer 0 has independent channels by construction
        assert averaged[0].max_abs_difference < noisy[0].max_abs_difference

    def test_layers_and_shapes(self):
        model = random_model(num_blocks=3, channels=(4, 5, 6), seed=16)
        report = distance_matrix_report(model, trials=2, batch=8, seed=16)
        assert [t.layer for t in report] == [0, 1, 2]
        assert [t.empirical.size for t in report] == [4, 5, 6]
        for t in report:
            want = np.abs(t.empirical.values - t.probabilistic.values)
            assert np.allclose(t.difference.values, want)

    def test_trials_validated(self):
        with pytest.raises(ValueError):
            distance_matrix_report(random_model(seed=17), trials=0)


class TestParallelHelpers:
    def test_default_is_single_worker(self, monkeypatch):
        monkeypatch.delenv("SIMPRUNE_THREADS", raising=False)
        assert worker_count() == 1

    def test_env_validation(self, monkeypatch):
        monkeypatch.setenv("SIMPRUNE_THREADS", "zero")
        with pytest.raises(ValueError):
            worker_count()
        monkeypatch.setenv("SIMPRUNE_THREADS", "0")
        with pytest.raises(ValueError):
            worker_count()

    def test_parallel_map_preserves_order(self, monkeypatch):
        monkeypatch.setenv("SIMPRUNE_THREADS", "4")
        assert parallel_map(lambda v: v * v, list(range(20))) == [v * v for v in range(20)]
