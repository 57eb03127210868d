import json
import math
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from eppsim.decoherence import NOISELESS, IntegratorConfig, MemoryParams
from eppsim.experiments import (
    FidelityGrid,
    epc_from_batch,
    distillable_rate_sweep,
    expected_pair_consumption,
    fidelity_vs_budget_grid,
    iso_contour,
    pair_cost,
    run_trajectory,
    simulate_batch,
)
from eppsim.network import LinkConfig, pair_rate
from eppsim.purification import analytic_bbpssw
from eppsim.quantum import random_states_with_fidelity, werner_state

CA40 = MemoryParams.preset("ca40")
BUDGETS = np.geomspace(1, 1e6, 19)


@pytest.fixture(scope="module")
def ca_batches():
    """Werner-input round histories at a spread of latencies, both protocols."""
    out = {}
    for proto in ("bbpssw", "dejmps"):
        for t in (0.0, 2.0, 5.0, 10.0, 20.0, 40.0):
            out[proto, t] = simulate_batch(proto, werner_state(0.75)[None], t, CA40)
    return out


class TestTrajectory:
    def test_noiseless_matches_analytic(self):
        traj = run_trajectory("bbpssw", 0.75, 0.0, NOISELESS, max_rounds=10)
        F = 0.75
        for rec in traj.records:
            assert rec.pre_fidelity == pytest.approx(F, abs=1e-12)
            F, p = analytic_bbpssw(F)
            assert rec.post_fidelity == pytest.approx(F, abs=1e-9)
            assert rec.success_prob == pytest.approx(p, abs=1e-9)
        assert np.all(np.diff(traj.fidelities) > 0)

    @pytest.mark.parametrize("proto", ["bbpssw", "dejmps"])
    def test_break_even_fixed(self, proto):
        traj = run_trajectory(proto, 0.5, 0.0, CA40, max_rounds=12)
        np.testing.assert_allclose(traj.fidelities, 0.5, atol=1e-12)

    @pytest.mark.parametrize("proto", ["bbpssw", "dejmps"])
    def test_high_latency_collapse(self, proto):
        traj = run_trajectory(proto, 0.75, 50.0, CA40, max_rounds=30)
        assert len(traj.records) == 30
        assert abs(traj.final_fidelity - 0.25) < 0.05

    @pytest.mark.parametrize("proto", ["bbpssw", "dejmps"])
    @given(st.floats(0.5, 1.0), st.floats(0.0, 50.0))
    def test_latency_irrelevant_without_decoherence(self, proto, F0, t):
        a = run_trajectory(proto, F0, t, NOISELESS, max_rounds=5).fidelities
        b = run_trajectory(proto, F0, 0.0, NOISELESS, max_rounds=5).fidelities
        np.testing.assert_array_equal(a, b)

    def test_record_invariants(self):
        traj = run_trajectory("dejmps", 0.75, 12.0, CA40, max_rounds=30)
        assert len(traj.records) <= 30
        assert all(0 <= r.success_prob <= 1 for r in traj.records)
        assert [r.round for r in traj.records] == list(range(1, 31))

    def test_latency_multiplier(self):
        a = run_trajectory("dejmps", 0.75, 10.0, CA40, max_rounds=5, latency_multiplier=2.0)
        b = run_trajectory("dejmps", 0.75, 20.0, CA40, max_rounds=5)
        np.testing.assert_array_equal(a.fidelities, b.fidelities)

    def test_negative_latency(self):
        with pytest.raises(ValueError):
            run_trajectory("dejmps", 0.75, -1.0, CA40)

    @pytest.mark.parametrize("proto", ["bbpssw", "dejmps"])
    def test_batch_matches_scalar(self, proto, rng):
        states = random_states_with_fidelity(0.75, 4, rng)
        b = simulate_batch(proto, states, 7.0, CA40, max_rounds=8)
        for k in range(4):
            t = run_trajectory(proto, 0.75, 7.0, CA40, max_rounds=8, initial_state=states[k])
            np.testing.assert_allclose(b.fidelities[:, k], t.fidelities, atol=1e-12)
            np.testing.assert_allclose(b.success_probs[:, k], t.success_probs, atol=1e-12)

    def test_haar_mode_seeded(self):
        a = run_trajectory("bbpssw", 0.75, 5.0, CA40, max_rounds=5, rng=np.random.default_rng(1), twirl="haar_random")
        b = run_trajectory("bbpssw", 0.75, 5.0, CA40, max_rounds=5, rng=np.random.default_rng(1), twirl="haar_random")
        np.testing.assert_array_equal(a.fidelities, b.fidelities)


class TestExpectedPairs:
    def test_single_perfect_round(self):
        r = expected_pair_consumption("dejmps", 1.0, 0.0, CA40, 1.0)
        assert (r.rounds, r.attainable) == (1, True)
        assert r.expected_pairs == pytest.approx(2.0, abs=1e-12)

    def test_product_arithmetic(self):
        assert pair_cost([0.5, 0.5]) == 16.0
        assert pair_cost([0.5, 0.0]) == math.inf

    def test_ca40_band(self):
        near = expected_pair_consumption("dejmps", 0.75, 5.0, CA40, 0.81)
        far = expected_pair_consumption("dejmps", 0.75, 40.0, CA40, 0.81)
        assert near.attainable and math.isfinite(near.expected_pairs)
        assert near.expected_pairs >= 2**near.rounds
        assert not far.attainable and far.expected_pairs == math.inf

    def test_rejects_threshold(self):
        with pytest.raises(ValueError):
            expected_pair_consumption("dejmps", 0.75, 5.0, CA40, 0.0)

    def test_plateau_stops_early(self):
        r = expected_pair_consumption("dejmps", 0.5, 0.0, NOISELESS, 0.9)
        assert not r.attainable and r.rounds == 1

    @pytest.mark.parametrize("proto", ["bbpssw", "dejmps"])
    @pytest.mark.parametrize("t", [0.0, 2.0, 5.0, 10.0, 20.0, 40.0])
    @pytest.mark.parametrize("F_th", [0.78, 0.81, 0.9, 0.98])
    def test_batch_agrees_with_scalar(self, ca_batches, proto, t, F_th):
        E, n = epc_from_batch(ca_batches[proto, t], F_th)
        r = expected_pair_consumption(proto, 0.75, t, CA40, F_th)
        assert E[0] == pytest.approx(r.expected_pairs, rel=1e-12)
        if r.attainable:
            assert n[0] == r.rounds

    @given(st.sampled_from([0.0, 2.0, 5.0, 10.0, 20.0, 40.0]), st.sampled_from(["bbpssw", "dejmps"]),
           st.floats(0.3, 1.0), st.floats(0.3, 1.0))
    def test_monotone_in_threshold(self, ca_batches, t, proto, a, b):
        lo, hi = sorted((a, b))
        batch = ca_batches[proto, t]
        assert epc_from_batch(batch, lo)[0][0] <= epc_from_batch(batch, hi)[0][0]

    @pytest.mark.parametrize("t", [1.0, 8.0])
    def test_monotone_in_threshold_scalar(self, t):
        Es = [expected_pair_consumption("dejmps", 0.75, t, CA40, f).expected_pairs
              for f in (0.76, 0.8, 0.85, 0.9, 0.95, 0.98)]
        assert all(x <= y for x, y in zip(Es, Es[1:]))


class TestGrid:
    @pytest.fixture(scope="class")
    @classmethod
    def grids(cls):
        lat = np.linspace(0, 50, 11)
        return {p: fidelity_vs_budget_grid(p, 0.75, CA40, lat, BUDGETS, n_states=64, seed=3)
                for p in ("bbpssw", "dejmps")}

    def test_unit_budget_is_F0(self, grids):
        for g in grids.values():
            assert np.all(g.fidelity[:, 0] == 0.75)

    def test_noiseless_monotone_in_budget(self):
        g = fidelity_vs_budget_grid("dejmps", 0.75, NOISELESS, [0.0, 10.0], BUDGETS, n_states=32)
        assert np.all(np.diff(g.fidelity, axis=1) >= -1e-15)

    def test_break_even_region_larger_for_bbpssw(self, grids):
        loss = {p: np.sum(g.fidelity < 0.75) for p, g in grids.items()}
        assert loss["bbpssw"] > loss["dejmps"]

    def test_deterministic_bbpssw_average_equals_werner(self):
        lat = [0.0, 5.0, 15.0]
        avg = fidelity_vs_budget_grid("bbpssw", 0.75, CA40, lat, BUDGETS, n_states=128, seed=9)
        ref = fidelity_vs_budget_grid("bbpssw", 0.75, CA40, lat, BUDGETS, n_states=0)
        np.testing.assert_allclose(avg.fidelity, ref.fidelity, atol=1e-9)

    def test_workers_do_not_change_result(self):
        lat = np.linspace(0, 20, 5)
        a = fidelity_vs_budget_grid("bbpssw", 0.75, CA40, lat, BUDGETS, n_states=32, seed=2,
                                    twirl="haar_random", workers=1)
        b = fidelity_vs_budget_grid("bbpssw", 0.75, CA40, lat, BUDGETS, n_states=32, seed=2,
                                    twirl="haar_random", workers=4)
        np.testing.assert_array_equal(a.fidelity, b.fidelity)

    def test_empty_grid(self):
        with pytest.raises(ValueError):
            fidelity_vs_budget_grid("dejmps", 0.75, CA40, [], BUDGETS)


def synthetic_grid(values, lat, bud):
    return FidelityGrid("dejmps", 0.75, CA40, np.asarray(lat, float), np.asarray(bud, float), values, 0)


class TestIsoContour:
    def test_constant_grid(self):
        g = synthetic_grid(np.full((5, 5), 0.75), np.arange(5), np.arange(1, 6))
        assert iso_contour(g, 0.75) == []

    def test_level_above_max(self):
        g = synthetic_grid(np.random.default_rng(0).random((4, 4)), np.arange(4), np.arange(1, 5))
        assert iso_contour(g, 1.5) == []

    @pytest.mark.parametrize("level", [0.3, 0.5, 0.7])
    def test_analytic_level_set(self, level):
        """f(E, T) = E / (E + T) has level set T = E (1 - c) / c."""
        lat = np.linspace(0.5, 10, 40)
        bud = np.linspace(0.5, 10, 37)
        E, T = np.meshgrid(bud, lat)
        lines = iso_contour(synthetic_grid(E / (E + T), lat, bud), level)
        assert lines
        half_cell = 0.5 * max(np.diff(lat)[0], np.diff(bud)[0])
        for line in lines:
            e, t = line[:, 0], line[:, 1]
            assert np.max(np.abs(t - e * (1 - level) / level)) < half_cell


class TestRateSweep:
    @pytest.fixture(scope="class")
    @classmethod
    def curves(cls):
        lat = np.linspace(0, 50, 11)
        return {(p, f): distillable_rate_sweep(p, f, CA40, lat, n_states=128, seed=4)
                for p in ("bbpssw", "dejmps") for f in (0.81, 0.98)}

    def test_division(self):
        link = LinkConfig(loss_endpoint_db=0, loss_intermediate_db=0, fiber_atten_db_per_km=0)
        assert pair_rate(link) / 13 == pytest.approx(1e5)

    def test_rate_is_pair_rate_over_E(self, curves):
        for c in curves.values():
            ok = c.attainable
            np.testing.assert_allclose(c.rates[ok], pair_rate(c.link) / c.expected_pairs[ok], rtol=1e-12)
            assert np.all(c.rates[~ok] == 0) and np.all(np.isinf(c.expected_pairs[~ok]))

    def test_threshold_ordering(self, curves):
        for p in ("bbpssw", "dejmps"):
            assert np.all(curves[p, 0.81].rates >= curves[p, 0.98].rates)

    def test_protocol_ordering(self, curves):
        for f in (0.81, 0.98):
            assert np.all(curves["dejmps", f].rates >= curves["bbpssw", f].rates)

    def test_non_increasing_in_latency(self, curves):
        for c in curves.values():
            assert np.all(np.diff(c.rates) <= 1e-9 * c.rates.max())

    @pytest.mark.parametrize("name", ["yb171", "er167", "nv"])
    def test_non_increasing_other_presets(self, name):
        c = distillable_rate_sweep("dejmps", 0.81, MemoryParams.preset(name), np.linspace(0, 50, 6),
                                   n_states=64)
        assert np.all(np.diff(c.rates) <= 1e-9 * c.rates.max())

    def test_zero_where_unattainable(self):
        lat = [1.0, 5.0, 12.0, 20.0, 32.0, 45.0]
        for p in ("bbpssw", "dejmps"):
            for f in (0.81, 0.98):
                c = distillable_rate_sweep(p, f, CA40, lat, n_states=0)
                for t, r in zip(lat, c.rates):
                    epc = expected_pair_consumption(p, 0.75, t, CA40, f)
                    assert (r == 0.0) == (not epc.attainable)

    def test_zero_loss_bound(self):
        link = LinkConfig(loss_endpoint_db=0, loss_intermediate_db=0, fiber_atten_db_per_km=0)
        c = distillable_rate_sweep("dejmps", 0.81, CA40, [0.0, 5.0], link, n_states=32)
        assert np.all(c.rates <= link.source_rate / 2)

    def test_seed_determinism(self):
        a = distillable_rate_sweep("bbpssw", 0.81, CA40, [1.0, 5.0], n_states=32, seed=11, twirl="haar_random")
        b = distillable_rate_sweep("bbpssw", 0.81, CA40, [1.0, 5.0], n_states=32, seed=11, twirl="haar_random")
        np.testing.assert_array_equal(a.rates, b.rates)

    def test_points(self, curves):
        c = curves["dejmps", 0.81]
        assert c.points[0] == (0.0, c.rates[0])


class TestBackendFlag:
    SCRIPT = (
        "import json, numpy as np\n"
        "from eppsim import _kernels\n"
        "from eppsim.experiments import run_trajectory\n"
        "from eppsim.decoherence import MemoryParams\n"
        "t = run_trajectory('dejmps', 0.75, 7.0, MemoryParams.preset('ca40'), max_rounds=6)\n"
        "print(json.dumps({'backend': _kernels.backend(), 'f': t.fidelities.tolist()}))\n"
    )

    def run(self, disable):
        env = dict(os.environ)
        env.pop("EPPSIM_DISABLE_NUMBA", None)
        if disable:
            env["EPPSIM_DISABLE_NUMBA"] = "1"
        out = subprocess.run([sys.executable, "-c", self.SCRIPT], env=env, capture_output=True, text=True,
                             check=True)
        return json.loads(out.stdout)

    def test_numpy_fallback_matches(self):
        slow = self.run(True)
        assert slow["backend"] == "numpy"
        fast = self.run(False)
        np.testing.assert_allclose(slow["f"], fast["f"], atol=1e-13)
