import dataclasses

import numpy as np
import pytest
import hypothesis.strategies as st
from hypothesis import given, settings
from hypothesis.extra.numpy import arrays

from tcdiffuser.conditioning import (
    PRESETS, AblationFlags, DatasetStats, DegenerateRangeError, TemporalCondition,
    build_eval_condition, compute_rtg, drop_condition, drop_mask, history_window,
    inpaint_goal, inpaint_history, normalize_reward, normalize_rtg, parse_flags, preset_name,
    rtg_table, top_y_reward_profile, train_condition_matrix,
)
from tcdiffuser.data import SegmentTable, Trajectory, make_dataset


def stats(T_min=0.0, T_max=100.0, r_min=0.0, r_max=1.0, d=2, t_max=20):
    return DatasetStats(T_min, T_max, r_min, r_max, -np.ones(d), np.ones(d), t_max)


def traj(rewards, d=2, **kw):
    n = len(rewards)
    return Trajectory(np.zeros((n, d)), np.zeros((n, d)), rewards, **kw)


def suffix_oracle(r):
    return [sum(float(x) for x in r[t:]) for t in range(len(r))]


# --- return-to-go ------------------------------------------------------------

def test_compute_rtg_examples():
    t = traj([1.0, 1.0, 1.0])
    assert compute_rtg(t, 0) == 3.0
    assert compute_rtg(t, 2) == 1.0


def test_compute_rtg_out_of_range():
    with pytest.raises(IndexError):
        compute_rtg(traj([1.0, 1.0]), 2)
    with pytest.raises(IndexError):
        compute_rtg(traj([1.0, 1.0]), -1)


def test_compute_rtg_matches_suffix_oracle():
    r = np.random.default_rng(0).integers(-5, 6, size=20).astype(float)
    t = traj(r)
    assert [compute_rtg(t, i) for i in range(20)] == suffix_oracle(r)
    assert rtg_table(r).tolist() == suffix_oracle(r)


# --- normalization -------------------------------------------------------------

def test_normalize_rtg_examples():
    s = stats()
    assert normalize_rtg(50.0, s) == 0.5
    assert normalize_rtg(100.0, s) == 1.0
    assert normalize_rtg(120.0, s) == pytest.approx(1.2)


def test_normalize_rtg_degenerate():
    with pytest.raises(DegenerateRangeError):
        normalize_rtg(7.0, stats(7.0, 7.0))


@settings(max_examples=50, deadline=None)
@given(st.floats(-100, 100), st.floats(0.1, 100), st.floats(0, 1), st.floats(0, 1))
def test_normalize_rtg_monotone_onto_unit(lo, width, u, v):
    s = stats(lo, lo + width)
    assert normalize_rtg(lo, s) == 0.0
    assert normalize_rtg(lo + width, s) == pytest.approx(1.0)
    a, b = sorted((u, v))
    if a < b:
        x, y = lo + a * width, lo + b * width
        if x < y:
            assert normalize_rtg(x, s) < normalize_rtg(y, s)


def test_normalize_reward_constant_range_is_zero():
    assert np.array_equal(normalize_reward([3.0, 3.0], stats(r_min=3.0, r_max=3.0)), [0.0, 0.0])


# --- reward profile ----------------------------------------------------------

def test_top_y_selects_best_trajectory():
    ds = make_dataset([traj([5.0, 5.0], id=0), traj([0.0, 5.0], id=1)])
    # r_min 0, r_max 5
    assert np.array_equal(top_y_reward_profile(ds, 1), [1.0, 1.0])
    assert np.array_equal(top_y_reward_profile(ds, 1, normalize=False), [5.0, 5.0])


def test_top_y_elementwise_mean():
    ds = make_dataset([traj([1.0, 0.0]), traj([0.0, 1.0])])
    assert np.array_equal(top_y_reward_profile(ds, 2), [0.5, 0.5])


def test_top_y_ties_break_by_index():
    ds = make_dataset([traj([0.0, 2.0]), traj([2.0, 0.0]), traj([1.0, 0.0])])
    assert np.array_equal(top_y_reward_profile(ds, 1, normalize=False), [0.0, 2.0])


def test_top_y_truncates_to_shortest():
    ds = make_dataset([traj([4.0, 4.0, 4.0]), traj([2.0, 2.0])])
    assert np.array_equal(top_y_reward_profile(ds, 2, normalize=False), [3.0, 3.0])


@pytest.mark.parametrize("Y", [1, 3, 5, 7, 9])
def test_top_y_sweep_grid_accepted(Y):
    rng = np.random.default_rng(Y)
    ds = make_dataset([traj(rng.normal(size=6)) for _ in range(9)])
    assert top_y_reward_profile(ds, Y).shape == (6,)


def test_top_y_errors():
    ds = make_dataset([traj([1.0])])
    with pytest.raises(ValueError):
        top_y_reward_profile(ds, 2)
    with pytest.raises(ValueError):
        top_y_reward_profile(ds, 0)


@settings(max_examples=25, deadline=None)
@given(arrays(np.float64, (5, 4), elements=st.floats(-5, 5)))
def test_top_y_full_dataset_is_plain_mean(rows):
    ds = make_dataset([traj(r) for r in rows])
    assert np.allclose(top_y_reward_profile(ds, 5, normalize=False), rows.mean(axis=0),
                       atol=1e-12)


# --- history and goal inpainting ---------------------------------------------

def _seq(L=10, d=2, seed=0):
    return np.random.default_rng(seed).normal(size=(L, d))


def test_inpaint_history_at_episode_start():
    s0 = np.array([[0.3, -0.2]])
    out = inpaint_history(_seq(), s0, t=0, T_HC=5)
    assert np.array_equal(out[:4], np.zeros((4, 2)))
    assert np.array_equal(out[4], s0[0])


def test_inpaint_history_full_window_in_order():
    states = np.arange(20.0).reshape(10, 2)
    out = inpaint_history(_seq(), states[3:8], t=7, T_HC=5)
    assert np.array_equal(out[:5], states[3:8])


def test_inpaint_history_leaves_rest_untouched():
    seq = _seq()
    out = inpaint_history(seq, np.ones((3, 2)), t=2, T_HC=5)
    assert np.array_equal(out[5:], seq[5:])
    assert np.array_equal(out[4], np.ones(2))


def test_inpaint_history_rejects_long_history():
    with pytest.raises(ValueError):
        inpaint_history(_seq(L=5), np.ones((1, 2)), t=0, T_HC=5)
    with pytest.raises(ValueError):
        inpaint_history(_seq(), np.ones((3, 2)), t=0, T_HC=5)


def test_inpaint_goal_sets_last_row_only():
    seq = _seq()
    out = inpaint_goal(seq, np.zeros(2))
    assert np.array_equal(out[-1], np.zeros(2))
    assert np.array_equal(out[:-1], seq[:-1])
    with pytest.raises(ValueError):
        inpaint_goal(seq, np.zeros(3))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 12), st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_inpaint_is_idempotent(t, T_HC, seed):
    rng = np.random.default_rng(seed)
    seq = rng.normal(size=(2, 8, 3))
    hist = rng.normal(size=(min(t + 1, T_HC), 3))
    once = inpaint_history(seq, hist, t, T_HC)
    assert np.array_equal(inpaint_history(once, hist, t, T_HC), once)
    assert np.array_equal(once[..., T_HC - 1, :], np.broadcast_to(hist[-1], (2, 3)))
    g = rng.normal(size=3)
    assert np.array_equal(inpaint_goal(inpaint_goal(seq, g), g), inpaint_goal(seq, g))


def test_history_window_pads_left():
    w = history_window(np.ones((2, 3)), 5)
    assert w.shape == (5, 3)
    assert np.array_equal(w[:3], np.zeros((3, 3)))
    assert np.array_equal(history_window(np.arange(14.0).reshape(7, 2), 5),
                          np.arange(4.0, 14.0).reshape(5, 2))


# --- condition dropout -------------------------------------------------------

def _cond(**kw):
    base = dict(immediate_reward=0.4, rtg=0.7, timestep=0.25, history=np.ones((5, 2)))
    base.update(kw)
    return TemporalCondition(**base)


def test_drop_condition_edges():
    rng = np.random.default_rng(0)
    c = _cond()
    assert drop_condition(c, 0.0, rng) is c
    d = drop_condition(c, 1.0, rng)
    assert np.array_equal(d.vector(), np.zeros(3))
    assert np.array_equal(d.history, c.history)
    with pytest.raises(ValueError):
        drop_condition(c, 1.5, rng)


def test_drop_fraction_monte_carlo():
    n, p = 100_000, 0.25
    frac = drop_mask(n, p, np.random.default_rng(1)).mean()
    assert abs(frac - p) < 3 * np.sqrt(p * (1 - p) / n)


# --- flags and condition vectors ------------------------------------------------

def test_presets_match_flag_table():
    assert PRESETS["tcd"] == AblationFlags(True, True, True)
    assert PRESETS["rtg-ts"] == AblationFlags(False, False, True)
    assert PRESETS["hc-rtg-ts"] == AblationFlags(True, False, True)
    assert PRESETS["far-rtg-ts"] == AblationFlags(False, True, True)


def test_parse_flags_grid_and_errors():
    names = [n for n, _ in parse_flags("tcd|rtg-ts|hc-rtg-ts|far-rtg-ts")]
    assert names == ["tcd", "rtg-ts", "hc-rtg-ts", "far-rtg-ts"]
    with pytest.raises(ValueError):
        parse_flags("tcd|nope")
    assert preset_name(AblationFlags(True, False, False)) == "custom"
    assert all(preset_name(f) == n for n, f in PRESETS.items())


def test_vector_order_and_disabled_components():
    c = _cond()
    assert c.vector().tolist() == [0.4, 0.7, 0.25]
    off = dataclasses.replace(c, flags=AblationFlags(False, False, False))
    assert np.array_equal(off.vector(), np.zeros(3))
    rt = dataclasses.replace(c, flags=PRESETS["rtg-ts"])
    assert rt.vector().tolist() == [0.0, 0.7, 0.25]
    ro = dataclasses.replace(c, flags=PRESETS["return-only"])
    assert ro.vector().tolist() == [0.0, 0.7, 0.0]


def test_build_eval_condition_rules():
    s = stats(0.0, 20.0)
    profile = np.array([0.1, 0.2, 0.3])
    c = build_eval_condition(profile, 10.0, 1, s, PRESETS["tcd"])
    assert c.vector().tolist() == [0.2, 0.5, 1 / 20]
    assert c.history.shape == (5, 2)
    # timestep past the profile reuses the last entry
    assert build_eval_condition(profile, 10.0, 7, s, PRESETS["tcd"]).immediate_reward == 0.3
    # negative remaining return is clamped before normalization
    assert build_eval_condition(profile, -4.0, 1, s, PRESETS["tcd"]).rtg == 0.0
    off = build_eval_condition(profile, 10.0, 1, s, PRESETS["unconditional"])
    assert np.array_equal(off.vector(), np.zeros(3))
    ro = build_eval_condition(profile, 3.0, 4, s, PRESETS["return-only"], return_target=15.0)
    assert ro.vector().tolist() == [0.0, 0.75, 0.0]


def test_train_condition_matrix_columns():
    rewards = np.array([0.0, 1.0, 0.0, 1.0])
    ds = make_dataset([traj(rewards)], t_max=4, return_basis="rtg")
    table = SegmentTable(ds, L=3, history=1)
    batch = table.take(np.arange(len(table)))
    m = train_condition_matrix(batch, ds.stats, PRESETS["tcd"])
    assert np.array_equal(m[:, 0], rewards)
    assert np.allclose(m[:, 1], normalize_rtg(rtg_table(rewards), ds.stats))
    assert np.array_equal(m[:, 2], np.arange(4) / 4)
    assert np.array_equal(train_condition_matrix(batch, ds.stats, PRESETS["unconditional"]),
                          np.zeros((4, 3)))
