import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from pde_sgd import fem
from pde_sgd import optimizer as opt
from pde_sgd.mesh import uniform_mesh
from pde_sgd.randfield import example3, kl_example1
from pde_sgd.spaces import P0Function

M_EX3 = opt.compute_M_bound(1.0)


def test_project_box_clamp():
    m = uniform_mesh(0)
    u = P0Function(m, np.array([1.5, -0.2, -3, 0, 0, 0, 0, 0]))
    assert opt.project_box(u, -1, 1).values[:3].tolist() == [1.0, -0.2, -1.0]
    with pytest.raises(ValueError):
        opt.project_box(u, 1, 1)


@given(arrays(float, 32, elements=st.floats(-5, 5)), arrays(float, 32, elements=st.floats(-5, 5)))
def test_project_box_nonexpansive_and_idempotent(a, b):
    m = uniform_mesh(1)
    u, v = P0Function(m, a), P0Function(m, b)
    pu, pv = opt.project_box(u, -1, 1), opt.project_box(v, -1, 1)
    assert (pu - pv).l2_norm() <= (u - v).l2_norm() + 1e-12
    assert np.array_equal(opt.project_box(pu, -1, 1).values, pu.values)


def test_step_size_examples():
    assert opt.step_size(opt.StronglyConvex(6.0, 299.0), 1) == pytest.approx(0.02, rel=1e-15)
    c = opt.step_size(opt.ConstantAveraging(1.0, 2.489, 100), 7)
    assert c == pytest.approx(1 / math.sqrt(248.9), rel=1e-12)
    assert round(c, 5) == 0.06339
    assert opt.step_size(opt.VariableAveraging(1.0, 1.0, 2.489), 100) == pytest.approx(c, rel=1e-12)
    with pytest.raises(ValueError):
        opt.step_size(opt.StronglyConvex(1.0, 1.0), 0)


@given(st.floats(0.1, 10), st.floats(0.1, 10), st.integers(1, 10_000))
def test_variable_rule_decreases_and_matches_constant_at_N(theta, M, N):
    var = opt.VariableAveraging(1.0, 1.0, M)
    const = opt.ConstantAveraging(1.0, M, N)
    assert opt.step_size(var, N) == pytest.approx(opt.step_size(const, N), rel=1e-12)
    assert opt.step_size(opt.VariableAveraging(theta, 1.0, M), N + 1) < opt.step_size(
        opt.VariableAveraging(theta, 1.0, M), N)


def test_derive_nu():
    assert opt.derive_nu(6, 5, 0.1, margin=0) == pytest.approx(299.0)
    assert opt.derive_nu(6, 5, 0.1) == pytest.approx(299.5)
    assert opt.derive_nu(3.5, 1, 0.2) == pytest.approx(17.0)
    with pytest.raises(ValueError):
        opt.derive_nu(2.5, 1, 0.2)


def test_mesh_bound_examples():
    sched = opt.MeshSchedule(17.5)
    assert opt.mesh_bound(sched, opt.StronglyConvex(3.5, 17), 100) == pytest.approx(17.5 / 117, rel=1e-14)
    var = opt.VariableAveraging(1.0, 1.0, 1.0)
    assert opt.mesh_bound(opt.MeshSchedule(2.0), var, 1) == 2.0
    # (2 / (10 + sqrt 99))^2; the hand value 0.010025 rounds sqrt 99 to 9.975
    expect = (2 / (10 + math.sqrt(99))) ** 2
    assert opt.mesh_bound(opt.MeshSchedule(2.0, p=0.5), var, 100) == pytest.approx(expect, rel=1e-14)
    assert round(expect, 5) == 0.01005


@given(st.floats(0.1, 50), st.sampled_from([0.25, 0.5, 1.0]), st.integers(1, 5000))
def test_mesh_bound_nonincreasing(c, p, n):
    s = opt.MeshSchedule(c, p=p)
    for rule in (opt.StronglyConvex(1.0, 3.0), opt.ConstantAveraging(1, 1, 10)):
        assert opt.mesh_bound(s, rule, n + 1) <= opt.mesh_bound(s, rule, n)


def test_schedule_validation():
    with pytest.raises(ValueError):
        opt.MeshSchedule(0.0)
    with pytest.raises(ValueError):
        opt.MeshSchedule(1.0, p=1.5)
    with pytest.raises(ValueError):
        opt.MeshSchedule(1.0, initial_level=3, max_level=2)


def test_compute_M_bound():
    C = 2 / math.pi**2
    hand = (C * (math.sqrt(2.5) + C * (1 + math.sqrt(1 + 9 * math.pi**4)))) ** 2
    assert M_EX3 == pytest.approx(hand, rel=1e-14)
    assert opt.compute_M_bound(3.55) < M_EX3 / 3.55**2 * 1.01
    with pytest.raises(ValueError):
        opt.compute_M_bound(0.0)


def test_running_average_synthetic():
    m = uniform_mesh(0)
    avg = opt.RunningAverage(m)
    for val, w in ((1, 1), (2, 1), (3, 2)):
        avg.add(P0Function.constant(m, val), w)
    assert np.allclose(avg.value().values, 2.25, rtol=1e-15)


def test_running_average_across_refinement():
    coarse, fine = uniform_mesh(0), uniform_mesh(2)
    avg = opt.RunningAverage(coarse)
    avg.add(P0Function.constant(coarse, 1.0), 1.0)
    avg.add(P0Function.constant(fine, 4.0), 2.0)
    assert avg.mesh is fine
    assert np.allclose(avg.value().values, 3.0)
    with pytest.raises(ValueError):
        opt.RunningAverage(coarse).value()


def _const_gradient(value):
    def g(problem, u, realization, solver):
        return P0Function.constant(u.mesh, value)
    return g


def _config(rule, n_steps, gradient_fn=None, schedule=None, problem=None, **kw):
    return opt.PsgConfig(problem or fem.strongly_convex_problem(0.2), example3(), rule,
                         schedule or opt.MeshSchedule(2.0, max_level=2), n_steps,
                         gradient_fn=gradient_fn or _const_gradient(0.0), **kw)


def test_zero_gradient_leaves_iterate_unchanged():
    rec = opt.run_psg(_config(opt.StronglyConvex(1.0, 3.0), 5), u0=P0Function.constant(uniform_mesh(0), 0.3))
    assert np.all(rec.final.values == 0.3)


def test_constant_gradient_step_and_projection():
    rule = opt.StronglyConvex(1.0, 0.0)
    rec = opt.run_psg(_config(rule, 3, _const_gradient(-0.25)))
    # u = 0 + 1/1*0.25 + 1/2*0.25 + 1/3*0.25, then clamp
    assert np.allclose(rec.final.values, min(1.0, 0.25 * (1 + 1 / 2 + 1 / 3)))
    rec = opt.run_psg(_config(rule, 3, _const_gradient(-10.0)))
    assert np.all(rec.final.values == 1.0)


def test_averaging_window_and_weights():
    rule = opt.VariableAveraging(1.0, 1.0, 1.0)
    cfg = _config(rule, 4, _const_gradient(-0.1), alpha=0.5)
    assert cfg.window_start == 2
    rec = opt.run_psg(cfg)
    # pre-step iterates u^n for n = 2..4 weighted by t_n = 1/sqrt(n)
    u, iters = 0.0, []
    for n in range(1, 5):
        iters.append(u)
        u = min(1.0, u + 0.1 / math.sqrt(n))
    w = np.array([1 / math.sqrt(n) for n in (2, 3, 4)])
    assert np.allclose(rec.averaged.values, (w @ np.array(iters[1:])) / w.sum(), rtol=1e-14)
    assert np.allclose(rec.final.values, u)
    assert (w / w.sum()).sum() == pytest.approx(1.0, abs=1e-14)


def test_single_step_average_is_the_start_iterate():
    rec = opt.run_psg(_config(opt.ConstantAveraging(1.0, 1.0, 1), 1, _const_gradient(-0.5)),
                      u0=P0Function.constant(uniform_mesh(0), 0.2))
    assert len(rec.rows) == 1
    assert np.allclose(rec.averaged.values, 0.2)
    assert np.allclose(rec.final.values, 0.7)


def test_refinement_follows_schedule():
    rule = opt.StronglyConvex(1.0, 0.0)
    sched = opt.MeshSchedule(1.0)
    rec = opt.run_psg(_config(rule, 40, schedule=sched))
    hs = [r["h_n"] for r in rec.rows]
    assert all(r["h_n"] <= r["h_bound"] for r in rec.rows)
    assert all(b <= a for a, b in zip(hs, hs[1:]))
    # h_0 = 0.707 already meets the n=1 bound 1.0; n=2 needs 0.5
    assert [r["level"] for r in rec.rows[:2]] == [0, 1]
    assert rec.final.mesh.h_max <= 1.0 / 40


def test_level_cap_marks_rows():
    rec = opt.run_psg(_config(opt.StronglyConvex(1.0, 0.0), 10, schedule=opt.MeshSchedule(0.5, max_level=1)))
    assert max(r["level"] for r in rec.rows) == 1
    assert any(r["capped"] for r in rec.rows)
    assert not opt.run_psg(_config(opt.StronglyConvex(1.0, 0.0), 3,
                                   schedule=opt.MeshSchedule(0.5, refine=False))).rows[-1]["refined"]


def test_snapshots_keyed_by_steps_completed():
    rec = opt.run_psg(_config(opt.StronglyConvex(1.0, 0.0), 3, _const_gradient(-0.1), snapshots=(1, 3)))
    assert sorted(rec.snapshots) == [1, 3]
    assert np.allclose(rec.snapshots[1].values, 0.1)
    assert rec.snapshots[3] is rec.final


@given(st.integers(0, 2**31 - 1))
def test_iterates_stay_admissible(seed):
    rng = np.random.default_rng(seed)

    def noisy(problem, u, realization, solver):
        return P0Function(u.mesh, rng.normal(scale=5.0, size=u.mesh.n_triangles))

    rec = opt.run_psg(_config(opt.VariableAveraging(1.0, 1.0, 1.0), 6, noisy))
    for v in (rec.final.values, rec.averaged.values):
        assert np.all((v >= -1) & (v <= 1))


def test_real_run_is_bit_reproducible():
    cfg = opt.PsgConfig(fem.strongly_convex_problem(0.2), kl_example1(), opt.StronglyConvex(3.51, 17.0),
                        opt.MeshSchedule(17.5, max_level=3), 4, seed=7)
    a, b = opt.run_psg(cfg), opt.run_psg(cfg)
    assert np.array_equal(a.final.values, b.final.values)
    assert [r["level"] for r in a.rows] == [r["level"] for r in b.rows]
    assert a.config["seed"] == 7 and a.config["rule_nu"] == 17.0


def test_real_run_decreases_objective():
    prob = fem.strongly_convex_problem(0.2)
    spec = kl_example1()
    cfg = opt.PsgConfig(prob, spec, opt.StronglyConvex(3.51, 17.0), opt.MeshSchedule(17.5, max_level=3), 20, seed=1)
    rec = opt.run_psg(cfg)
    f = spec.sample(np.random.default_rng(99))
    j0 = fem.objective_sample(P0Function.zeros(rec.final.mesh), f, prob)
    assert fem.objective_sample(rec.final, f, prob) < j0


def test_config_validation():
    with pytest.raises(ValueError):
        _config(opt.StronglyConvex(1.0, 0.0), 0)
    with pytest.raises(ValueError):
        _config(opt.StronglyConvex(1.0, 0.0), 3, alpha=0.0)
    with pytest.raises(ValueError):
        opt.StronglyConvex(-1.0, 0.0)
    with pytest.raises(ValueError):
        opt.ConstantAveraging(1.0, 1.0, 0)
