import io
import math
from types import SimpleNamespace

import numpy as np
import pytest

from sepcert.expr import Interval
from sepcert.model import NetworkModel, NodeSpec
from sepcert.simulator import (
    FactoredSystem,
    SimulationError,
    check_order_preservation,
    fit_decay_rate,
    integrate,
    measure_contraction,
    trajectory_to_csv,
    virtual_system_certify,
    weighted_distance,
)


def scalar_model(source, lo=-5.0, hi=5.0, horizon=(0.0, 1.0), k=0.0):
    nodes = [NodeSpec.from_source("a", source, lo, hi)]
    return NetworkModel.build(nodes, [[k]], horizon)


def two_node(source="-x - x^3", K=((0.0, 0.5), (0.5, 0.0)), lo=-2.0, hi=2.0,
             horizon=(0.0, 5.0)):
    nodes = [NodeSpec.from_source(f"n{i}", source, lo, hi) for i in range(len(K))]
    return NetworkModel.build(nodes, np.array(K, dtype=float), horizon)


class TestIntegrate:
    def test_linear_decay(self):
        traj = integrate(scalar_model("-x"), [1.0])
        assert traj.final[0] == pytest.approx(math.exp(-1.0), abs=1e-9)
        assert traj.times[0] == 0.0 and traj.times[-1] == 1.0
        assert traj.warnings == ()

    def test_zero_field_constant(self):
        traj = integrate(scalar_model("0"), [0.7])
        assert np.all(traj.states == 0.7)

    def test_step_halving_self_consistency(self):
        m = scalar_model("-x - x^3")
        a = integrate(m, [1.0], h=1e-3)
        b = integrate(m, [1.0], h=5e-4)
        assert abs(a.final[0] - b.final[0]) < 1e-8

    def test_partial_final_step(self):
        traj = integrate(scalar_model("-x", horizon=(0.0, 0.9995)), [1.0])
        assert traj.times[-1] == 0.9995
        assert traj.final[0] == pytest.approx(math.exp(-0.9995), abs=1e-9)

    def test_input_shape_errors(self):
        m = scalar_model("-x")
        with pytest.raises(SimulationError):
            integrate(m, [1.0, 2.0])
        with pytest.raises(SimulationError):
            integrate(m, [1.0], h=0.0)
        with pytest.raises(SimulationError):
            integrate(m, [1.0], u=lambda x, t: [0.0])  # no input matrix

    def test_feedback_channel(self):
        nodes = [NodeSpec.from_source("a", "0", -5, 5)]
        m = NetworkModel.build(nodes, [[0.0]], (0.0, 1.0), input_matrix=[[1.0]])
        traj = integrate(m, [0.0], u=lambda x, t: np.array([-2.0]))
        assert traj.final[0] == pytest.approx(-2.0, abs=1e-12)

    def test_domain_exit_warns_and_continues(self):
        traj = integrate(scalar_model("1", lo=-1.0, hi=1.0), [0.5])
        assert any("left the domain box" in w for w in traj.warnings)
        assert traj.final[0] == pytest.approx(1.5, abs=1e-9)

    def test_blowup_raises(self):
        with pytest.raises(SimulationError, match="non-finite"):
            integrate(scalar_model("x^2", horizon=(0.0, 2.0)), [2.0])

    def test_coarse_step_flagged(self):
        traj = integrate(scalar_model("-20*x"), [1.0], h=0.1)
        assert any("step-halving" in w for w in traj.warnings)
        assert traj.audit_error > 1e-6

    def test_states_read_only(self):
        traj = integrate(scalar_model("-x"), [1.0])
        with pytest.raises(ValueError):
            traj.states[0, 0] = 9.9


class TestOrderPreservation:
    def test_positive_linear(self):
        rep = check_order_preservation(two_node("-x"), pairs=20, seed=1, h=0.01)
        assert rep.preserved
        assert rep.max_violation <= 1e-7

    def test_monotone_nonlinear(self):
        rep = check_order_preservation(two_node(), pairs=50, seed=2, h=0.01)
        assert rep.preserved

    def test_negative_coupling_detected(self):
        m = two_node("-x", K=[[0.0, -0.8], [0.8, 0.0]])
        rep = check_order_preservation(m, pairs=20, seed=3, h=0.01)
        assert not rep.preserved
        assert rep.max_violation > 1e-3
        assert rep.worst[2] == 0  # the coordinate fed by the negative entry

    def test_deterministic(self):
        a = check_order_preservation(two_node(), pairs=10, seed=7, h=0.01)
        b = check_order_preservation(two_node(), pairs=10, seed=7, h=0.01)
        assert a == b


def cert(kind, weights, rate):
    return SimpleNamespace(kind=kind, weights=np.asarray(weights, dtype=float),
                           rate=rate)


class TestWeightedDistance:
    def test_kinds(self):
        diff = np.array([3.0, -4.0])
        assert weighted_distance("diagonal_quadratic", [1, 1], diff) == 5.0
        assert weighted_distance("sum_l1", [1, 2], diff) == 11.0
        assert weighted_distance("max_linf", [1, 1], diff) == 4.0
        with pytest.raises(ValueError):
            weighted_distance("euclid", [1, 1], diff)

    def test_batched(self):
        diff = np.array([[1.0, 0.0], [0.0, -2.0]])
        out = weighted_distance("sum_l1", [1, 1], diff)
        np.testing.assert_allclose(out, [1.0, 2.0])


class TestMeasureContraction:
    def test_exact_exponential(self):
        m = scalar_model("-x", lo=-2, hi=2, horizon=(0.0, 5.0))
        rep = measure_contraction(m, cert("diagonal_quadratic", [1.0], 1.0),
                                  pairs=10, seed=0)
        assert rep.worst_rate == pytest.approx(1.0, abs=1e-3)
        assert rep.passed
        assert rep.skipped == 0

    def test_nonlinearity_only_speeds_decay(self):
        rep = measure_contraction(two_node(), cert("sum_l1", [1.0, 1.0], 0.5),
                                  pairs=10, seed=1)
        assert rep.worst_rate >= 0.5 - 1e-6
        assert rep.passed

    def test_max_metric(self):
        rep = measure_contraction(two_node(), cert("max_linf", [1.0, 1.0], 0.5),
                                  pairs=6, seed=2)
        assert rep.worst_rate >= 0.5 - 1e-6

    def test_degenerate_pairs_skipped(self):
        m = scalar_model("-x", lo=0.0, hi=0.0, horizon=(0.0, 1.0))
        rep = measure_contraction(m, cert("sum_l1", [1.0], 1.0), pairs=4, seed=0)
        assert rep.skipped == 4
        assert math.isnan(rep.worst_rate)

    def test_fit_helper(self):
        t = np.linspace(0.0, 5.0, 200)
        assert fit_decay_rate(t, np.exp(-0.7 * t), (0.5, 5.0)) == pytest.approx(0.7, abs=1e-9)
        assert fit_decay_rate(t, np.zeros_like(t), (0.5, 5.0)) is None


class TestFactoredSystem:
    def test_shape_validation(self):
        with pytest.raises(ValueError):
            FactoredSystem([["-1"]], [Interval(-1, 1), Interval(-1, 1)], (0, 1))

    def test_matrix_at(self):
        fs = FactoredSystem([["-1", "x1^2"], ["0.1", "-1"]],
                            [Interval(-1, 1), Interval(-1, 1)], (0, 2))
        A = fs.matrix_at(np.array([0.5, 0.0]), 0.0)
        np.testing.assert_allclose(A, [[-1.0, 0.25], [0.1, -1.0]])


class TestVirtualCertify:
    def test_constant_identity(self):
        fs = FactoredSystem([["-1", "0"], ["0", "-1"]],
                            [Interval(-1, 1), Interval(-1, 1)], (0.0, 2.0))
        rep = virtual_system_certify(fs, x0_samples=3, seed=0)
        assert rep.certified
        assert rep.max_y_deviation <= 1e-12
        for s in rep.samples:
            np.testing.assert_allclose(s.weights, [1.0, 1.0])
            assert s.decay == pytest.approx(1.0, abs=1e-6)

    def test_saturating_coupling(self):
        fs = FactoredSystem([["-1", "x1^2 / (1 + x1^2)"], ["0.1", "-1"]],
                            [Interval(-1, 1), Interval(-1, 1)], (0.0, 5.0))
        rep = virtual_system_certify(fs, x0_samples=4, seed=1)
        assert rep.certified
        assert rep.max_y_deviation <= 1e-8
        for s in rep.samples:
            assert s.dominating[0, 1] <= 0.5 + 1e-12
            assert s.decay > 0

    def test_positivity_violation_reported(self):
        fs = FactoredSystem([["-1", "-1"], ["0.1", "-1"]],
                            [Interval(-1, 1), Interval(-1, 1)], (0.0, 1.0))
        rep = virtual_system_certify(fs, x0_samples=2, seed=0)
        assert not rep.certified
        assert rep.failure[0] == "positivity_violation"
        assert "N[0,1]" in rep.failure[1]

    def test_unstable_domination_reported(self):
        fs = FactoredSystem([["1", "0"], ["0", "-1"]],
                            [Interval(-1, 1), Interval(-1, 1)], (0.0, 2.0))
        rep = virtual_system_certify(fs, x0_samples=2, seed=0)
        assert not rep.certified
        assert rep.failure[0] == "domination_not_hurwitz"

    def test_particular_solution_property(self):
        rng = np.random.default_rng(42)
        for _ in range(50):
            n = int(rng.integers(2, 5))
            c = 1.0 + 0.4 * n
            entries = []
            for i in range(n):
                row = []
                for j in range(n):
                    if i == j:
                        row.append(f"-{c} - x{i + 1}^2")
                    elif rng.random() < 0.5:
                        a = rng.uniform(0.05, 0.35)
                        row.append(f"{a:.3f} * x{j + 1}^2 / (1 + x{j + 1}^2)")
                    else:
                        row.append(f"{rng.uniform(0.0, 0.3):.3f}")
                entries.append(row)
            fs = FactoredSystem(entries, [Interval(-2, 2)] * n, (0.0, 3.0))
            rep = virtual_system_certify(fs, x0_samples=2,
                                         seed=int(rng.integers(1 << 31)))
            assert rep.certified, rep.failure
            assert rep.max_y_deviation <= 1e-8
            assert len(rep.samples) == 2


class TestCsv:
    def test_roundtrippable_text(self):
        traj = integrate(scalar_model("-x", horizon=(0.0, 0.01)), [1.0])
        buf = io.StringIO()
        trajectory_to_csv(traj, buf)
        lines = buf.getvalue().strip().split("\n")
        assert lines[0] == "t,x1"
        assert len(lines) == len(traj.times) + 1
        t0, v0 = lines[1].split(",")
        assert float(t0) == 0.0 and float(v0) == 1.0
