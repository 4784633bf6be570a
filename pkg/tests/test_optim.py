import numpy as np
import pytest

from drex.autodiff import ParamStore, Tensor
from drex.optim import (
    AdamWState,
    EmaState,
    OneCycleSchedule,
    adamw_step,
    ema_update,
    onecycle_lr,
)


def store_of(**arrays) -> ParamStore:
    return ParamStore({name: Tensor(np.array(a, dtype=np.float64)) for name, a in arrays.items()})


class TestOneCycle:
    def sched(self, **kw):
        base = dict(max_lr=1e-3, total_steps=1000, pct_start=0.3, div_factor=25.0, final_div_factor=1e4)
        base.update(kw)
        return OneCycleSchedule(**base)

    def test_initial_lr(self):
        s = self.sched()
        assert onecycle_lr(s, 0) == pytest.approx(1e-3 / 25.0, rel=1e-12)

    def test_peak_at_pct_start(self):
        s = self.sched()
        assert onecycle_lr(s, 300) == pytest.approx(1e-3, rel=1e-12)

    def test_final_floor(self):
        s = self.sched()
        assert onecycle_lr(s, 1000) == pytest.approx(1e-3 / 1e4, rel=1e-12)

    def test_positive_everywhere_and_peak_is_max(self):
        s = self.sched(total_steps=777)
        values = [onecycle_lr(s, t) for t in range(778)]
        assert all(v > 0 for v in values)
        assert max(values) <= 1e-3 + 1e-15
        # the exact peak sits at the (possibly fractional) pct_start point
        assert onecycle_lr(s, 0.3 * 777) == pytest.approx(1e-3, rel=1e-12)

    def test_fractional_peak_step(self):
        s = self.sched(total_steps=97, pct_start=0.37)
        values = [onecycle_lr(s, t) for t in range(98)]
        assert all(v > 0 for v in values)

    def test_out_of_range(self):
        s = self.sched()
        with pytest.raises(ValueError):
            onecycle_lr(s, -1)
        with pytest.raises(ValueError):
            onecycle_lr(s, 1001)

    def test_validation(self):
        with pytest.raises(ValueError):
            self.sched(max_lr=0.0)
        with pytest.raises(ValueError):
            self.sched(pct_start=1.5)
        with pytest.raises(ValueError):
            self.sched(div_factor=0.5)


class TestAdamW:
    def test_zero_grad_no_decay_is_identity(self):
        store = store_of(w=[1.0, -2.0, 3.0])
        state = AdamWState(store, weight_decay=0.0)
        before = store["w"].data.copy()
        adamw_step(store, state, lr=0.1)
        np.testing.assert_array_equal(store["w"].data, before)
        assert state.step == 1

    def test_decoupled_decay_scales_params(self):
        store = store_of(w=[1.0, -2.0, 3.0])
        state = AdamWState(store, weight_decay=0.01)
        before = store["w"].data.copy()
        lr = 0.05
        adamw_step(store, state, lr=lr)
        np.testing.assert_allclose(store["w"].data, before * (1.0 - lr * 0.01), rtol=1e-15)

    def test_single_step_matches_hand_arithmetic(self):
        store = store_of(w=1.0)
        store["w"].grad = np.array(0.5)
        state = AdamWState(store)  # defaults: b1=0.9 b2=0.999 eps=1e-8 wd=0.01
        lr = 0.001
        adamw_step(store, state, lr=lr)
        # hand-computed oracle
        m_hat = (0.1 * 0.5) / (1.0 - 0.9)
        v_hat = (0.001 * 0.25) / (1.0 - 0.999)
        expected = 1.0 - lr * (m_hat / (np.sqrt(v_hat) + 1e-8) + 0.01 * 1.0)
        assert float(store["w"].data) == pytest.approx(expected, rel=1e-12)

    def test_moments_zero_initialized(self):
        store = store_of(w=[1.0, 2.0])
        state = AdamWState(store)
        assert np.all(state.m["w"] == 0.0)
        assert np.all(state.v["w"] == 0.0)
        assert state.step == 0

    def test_descends_a_quadratic(self):
        store = store_of(w=5.0)
        state = AdamWState(store, weight_decay=0.0)
        for _ in range(200):
            store["w"].grad = 2.0 * store["w"].data  # d/dw of w^2
            adamw_step(store, state, lr=0.05)
        assert abs(float(store["w"].data)) < 0.5

    def test_nonfinite_params_raise(self):
        store = store_of(w=1.0)
        store["w"].grad = np.array(np.inf)
        state = AdamWState(store)
        with pytest.raises(FloatingPointError):
            adamw_step(store, state, lr=0.1)


class TestEma:
    def test_fixed_point(self):
        store = store_of(w=[1.5, -0.5])
        ema = EmaState.from_params(store, decay=0.999)
        ema_update(ema, store)
        np.testing.assert_array_equal(ema.shadow["w"], store["w"].data)

    def test_single_step_from_zero(self):
        store = store_of(w=1.0)
        ema = EmaState.zeros_like(store, decay=0.999)
        ema_update(ema, store)
        assert float(ema.shadow["w"]) == pytest.approx(0.001, abs=1e-18)

    def test_geometric_series(self):
        p = 0.73
        store = store_of(w=p)
        ema = EmaState.zeros_like(store, decay=0.999)
        for k in range(1, 501):
            ema_update(ema, store)
            expected = p * (1.0 - 0.999**k)
            assert abs(float(ema.shadow["w"]) - expected) < 1e-12

    def test_decay_zero_tracks_exactly(self):
        rng = np.random.default_rng(0)
        store = store_of(w=rng.normal(size=5))
        ema = EmaState.zeros_like(store, decay=0.0)
        for _ in range(3):
            store["w"].data += rng.normal(size=5)
            ema_update(ema, store)
            np.testing.assert_array_equal(ema.shadow["w"], store["w"].data)

    def test_shadow_stays_in_historical_range(self):
        rng = np.random.default_rng(1)
        store = store_of(w=rng.normal(size=8))
        ema = EmaState.from_params(store, decay=0.9)
        lo = store["w"].data.copy()
        hi = store["w"].data.copy()
        for _ in range(100):
            store["w"].data += rng.normal(size=8) * 0.3
            lo = np.minimum(lo, store["w"].data)
            hi = np.maximum(hi, store["w"].data)
            ema_update(ema, store)
            assert np.all(ema.shadow["w"] >= lo - 1e-12)
            assert np.all(ema.shadow["w"] <= hi + 1e-12)

    def test_shape_mismatch(self):
        store = store_of(w=[1.0, 2.0])
        ema = EmaState({"w": np.zeros(3)}, decay=0.5)
        with pytest.raises(ValueError):
            ema_update(ema, store)

    def test_decay_domain(self):
        store = store_of(w=1.0)
        with pytest.raises(ValueError):
            EmaState.from_params(store, decay=1.0)
        with pytest.raises(ValueError):
            EmaState.from_params(store, decay=-0.1)
        EmaState.from_params(store, decay=0.0)  # degenerate tracking allowed

    def test_as_param_store_copies(self):
        store = store_of(w=[1.0, 2.0])
        ema = EmaState.from_params(store, decay=0.5)
        shadow_store = ema.as_param_store()
        shadow_store["w"].data[0] = 99.0
        assert ema.shadow["w"][0] == 1.0
