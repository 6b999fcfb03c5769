import hashlib
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cldyn import datagen as dg


def test_sine_zero_at_origin():
    assert dg.gen_sine(7.0, 1.3, [0.0])[0, 0] == 0.0


def test_sine_closed_form_value():
    assert dg.gen_sine(3.0, 1.0, [0.1])[0, 0] == pytest.approx(1.76336, abs=1e-5)


def test_sine_periodicity():
    t = np.linspace(0, 2, 21)
    np.testing.assert_allclose(dg.gen_sine(3.0, 2 / 3, t), dg.gen_sine(3.0, 2 / 3, t + 1.5),
                               atol=1e-12)


def test_sine_rejects_descending_grid():
    with pytest.raises(ValueError):
        dg.gen_sine(1.0, 1.0, [0.2, 0.1])


def _oscillator(s):
    return np.array([s[1], -s[0]])


def test_zero_field_is_constant():
    traj = dg.integrate_ode(lambda s: np.zeros_like(s), [1.0, -2.0], 0.1, 20)
    assert traj.shape == (21, 2)
    np.testing.assert_array_equal(traj, np.tile([1.0, -2.0], (21, 1)))


def test_rk4_energy_conservation():
    traj = dg.integrate_ode(_oscillator, [1.0, 0.0], 0.01, 1000)
    energy = 0.5 * (traj ** 2).sum(axis=1)
    assert np.max(np.abs(energy - energy[0])) / energy[0] < 1e-8


def test_rk4_fourth_order_convergence():
    T = 2.0
    exact = np.array([math.cos(T), -math.sin(T)])
    errs = []
    for n in (20, 40):
        traj = dg.integrate_ode(_oscillator, [1.0, 0.0], T / n, n)
        errs.append(np.linalg.norm(traj[-1] - exact))
    assert abs(errs[0] / errs[1] - 16.0) < 2.0


def test_integrator_rejects_bad_dt_and_divergence():
    with pytest.raises(ValueError):
        dg.integrate_ode(_oscillator, [1.0, 0.0], 0.0, 5)
    with np.errstate(over="ignore"), pytest.raises(FloatingPointError, match="non-finite"):
        dg.integrate_ode(lambda s: s ** 3, [10.0], 1.0, 10)


def test_lv_decoupled_growth():
    traj = dg.gen_lotka_volterra(0.3, 0.0, 0.0, 0.5, dt=0.1, n_points=11)
    np.testing.assert_allclose(traj[:, 0], 2 * np.exp(0.3 * np.arange(11) * 0.1), rtol=1e-8)


def test_lv_all_zero_is_constant():
    traj = dg.gen_lotka_volterra(0, 0, 0, 0, n_points=10)
    np.testing.assert_array_equal(traj, np.full((10, 2), 2.0))


def test_lv_first_integral_reference_mode():
    p = (0.25, 0.25, 0.25, 0.5)
    traj = dg.gen_lotka_volterra(*p, dt=0.4, n_points=26)
    V = dg.lv_first_integral(traj, *p)
    assert np.max(np.abs(V - V[0]) / abs(V[0])) < 1e-4


def test_lorenz_equilibrium():
    traj = dg.gen_lorenz(8.0, 28.0, 5 / 3, x0=(0.0, 0.0, 0.0), n_points=100)
    np.testing.assert_array_equal(traj, np.zeros((100, 3)))


def test_lorenz_bounded():
    traj = dg.gen_lorenz(8.0, 28.0, 5 / 3, n_points=5001)
    assert np.max(np.abs(traj)) < 100


def test_lorenz_sensitive_to_initial_state():
    a = dg.gen_lorenz(10.0, 28.0, 8 / 3, x0=(1.0, 1.0, 28.0), n_points=501)
    b = dg.gen_lorenz(10.0, 28.0, 8 / 3, x0=(1.0 + 1e-6, 1.0, 28.0), n_points=501)
    sep = np.linalg.norm(a - b, axis=1)
    assert sep[-1] >= 10 * sep[0]


def test_windowize_examples():
    assert len(dg.windowize(np.arange(15), 15)) == 1
    assert dg.window_starts(45, 15, 5) == [0, 20]
    with pytest.raises(ValueError):
        dg.windowize(np.arange(10), 15)


@given(st.integers(1, 30), st.integers(0, 10), st.integers(0, 200))
def test_windows_are_disjoint_and_counted(T, jump, extra):
    L = T + extra
    starts = dg.window_starts(L, T, jump)
    assert len(starts) == (L - T) // (T + jump) + 1
    for a, b in zip(starts, starts[1:]):
        assert b >= a + T
    wins = dg.windowize(np.arange(L), T, jump)
    for s, w in zip(starts, wins):
        np.testing.assert_array_equal(w, np.arange(s, s + T))


def test_noise_is_standard_deviation():
    rng = np.random.default_rng(0)
    clean = np.zeros((100_000, 1))
    assert dg.add_noise(clean, 0.0, rng) is not clean
    np.testing.assert_array_equal(dg.add_noise(clean, 0.0, rng), clean)
    noisy = dg.add_noise(clean, 0.12, rng)
    assert abs(np.std(noisy - clean) - 0.12) / 0.12 < 0.01


def test_sine_noise_level():
    modes = dg.mode_grid("sine")
    assert {m.params["A"]: m.noise_sigma for m in modes}[12.0] == pytest.approx(0.12)


def test_mode_spec_validates_keys():
    with pytest.raises(ValueError):
        dg.ModeSpec("sine", {"A": 1.0})
    with pytest.raises(ValueError):
        dg.ModeSpec("sine", {"A": 1.0, "f": 1.0}, -0.1)


def test_sequence_validation():
    with pytest.raises(ValueError):
        dg.Sequence(np.array([[1.0]]), 0.1, 0)
    with pytest.raises(ValueError):
        dg.Sequence(np.array([1.0, np.nan]), 0.1, 0)
    with pytest.raises(ValueError):
        dg.Sequence(np.array([1.0, 2.0]), 0.0, 0)


@pytest.mark.parametrize("system,n_modes,n_tasks,T,D,dt", [
    ("sine", 15, 5, 15, 1, 0.1),
    ("lotka_volterra", 8, 4, 25, 2, 0.4),
    ("lorenz", 12, 4, 50, 3, 0.01),
])
def test_suite_counts(system, n_modes, n_tasks, T, D, dt):
    suite = dg.build_synthetic_suite(system, 3)
    assert len(dg.mode_grid(system)) == n_modes
    assert len(suite) == n_tasks
    per_task = n_modes // n_tasks
    seen = []
    for task in suite:
        assert len(task.modes) == per_task
        assert len(task.train) == 12 * per_task and len(task.test) == 6 * per_task
        for s in task.train + task.test:
            assert s.values.shape == (T, D) and s.dt == dt
        seen += sorted({s.mode_id for s in task.train})
    assert sorted(seen) == list(range(n_modes))


def test_sine_test_split_is_clean_and_train_is_noisy():
    suite = dg.build_synthetic_suite("sine", 0)
    grid = dg.mode_grid("sine")
    for task in suite:
        for s in task.test:
            p = grid[s.mode_id].params
            long = dg.gen_sine(p["A"], p["f"], np.arange(18 * 20) * 0.1)[:, 0]
            # each clean window is an exact slice of the generator output
            hits = [k for k in range(0, len(long) - 14, 20) if np.array_equal(long[k:k + 15],
                                                                             s.values[:, 0])]
            assert hits
        for s in task.train[:3]:
            p = grid[s.mode_id].params
            long = dg.gen_sine(p["A"], p["f"], np.arange(18 * 20) * 0.1)[:, 0]
            best = min(np.max(np.abs(long[k:k + 15] - s.values[:, 0]))
                       for k in range(0, len(long) - 14, 20))
            assert 0 < best < 6 * p["A"] / 100


def test_sine_values_match_closed_form():
    suite = dg.build_synthetic_suite("sine", 1)
    grid = dg.mode_grid("sine")
    s = suite[0].test[0]
    p = grid[s.mode_id].params
    t = np.arange(18 * 20) * 0.1
    long = p["A"] * np.sin(2 * np.pi * p["f"] * t)
    err = min(np.max(np.abs(long[k:k + 15] - s.values[:, 0])) for k in range(0, 346, 20))
    assert err <= 1e-12


def test_lv_suite_conserves_first_integral():
    grid = dg.mode_grid("lotka_volterra")
    for task in dg.build_synthetic_suite("lotka_volterra", 0):
        for s in task.test:
            p = grid[s.mode_id].params
            V = dg.lv_first_integral(s.values, p["alpha"], p["beta"], p["gamma"], p["delta"])
            assert np.max(np.abs(V - V[0]) / np.abs(V[0])) < 1e-4


def _digest(suite):
    h = hashlib.sha256()
    for t in suite:
        for s in t.train + t.test:
            h.update(s.values.tobytes())
            h.update(str(s.mode_id).encode())
    return h.hexdigest()


def test_suite_is_seed_deterministic():
    assert _digest(dg.build_synthetic_suite("lorenz", 4)) == \
        _digest(dg.build_synthetic_suite("lorenz", 4))
    assert _digest(dg.build_synthetic_suite("sine", 4)) != \
        _digest(dg.build_synthetic_suite("sine", 5))


@given(st.integers(1, 6), st.integers(1, 5), st.integers(0, 10_000))
def test_partition_is_a_partition(n_tasks, per_task, seed):
    groups = dg.partition_modes(n_tasks * per_task, n_tasks, np.random.default_rng(seed))
    flat = sorted(i for g in groups for i in g)
    assert flat == list(range(n_tasks * per_task))
    assert all(len(g) == per_task for g in groups)


def test_partition_rejects_uneven_split():
    with pytest.raises(ValueError):
        dg.partition_modes(10, 4, np.random.default_rng(0))


def _write_libras(path, per_class=24, n_classes=15, rng=None):
    rng = rng or np.random.default_rng(0)
    with open(path, "w") as fh:
        for label in range(1, n_classes + 1):
            for _ in range(per_class):
                fh.write(",".join(f"{v:.6f}" for v in rng.uniform(0, 1, 90)) + f",{label}\n")
        fh.write("\n")


def test_libras_loader(tmp_path):
    path = tmp_path / "movement_libras.data"
    _write_libras(path)
    suite = dg.load_libras(path, seed=0)
    assert len(suite) == 5
    assert sum(len(t.modes) for t in suite) == 15
    for t in suite:
        assert len(t.modes) == 3 and len(t.train) == 36 and len(t.test) == 36
        assert t.train[0].values.shape == (45, 2)
        assert t.train[0].dt == pytest.approx(7 / 45)


def test_libras_coordinates_are_paired(tmp_path):
    path = tmp_path / "one.data"
    row = list(range(90))
    with open(path, "w") as fh:
        for label in range(1, 16):
            for _ in range(2):
                fh.write(",".join(map(str, row)) + f",{label}\n")
    seq = dg.load_libras(path)[0].train[0].values
    np.testing.assert_array_equal(seq[0], [0, 1])
    np.testing.assert_array_equal(seq[44], [88, 89])


def test_libras_malformed(tmp_path):
    path = tmp_path / "bad.data"
    path.write_text("1,2,3\n")
    with pytest.raises(ValueError, match="91 columns"):
        dg.load_libras(path)
    with pytest.raises(FileNotFoundError):
        dg.load_libras(tmp_path / "missing.data")


def _write_chartraj(path, counts, rng=None, min_len=109):
    rng = rng or np.random.default_rng(0)
    with open(path, "w") as fh:
        fh.write("instance,label,t,dim0,dim1,dim2\n")
        inst = 0
        for label, n in enumerate(counts):
            for _ in range(n):
                length = min_len + int(rng.integers(0, 40))
                for t in range(length):
                    x = rng.standard_normal(3)
                    fh.write(f"{inst},{label},{t},{x[0]:.5f},{x[1]:.5f},{x[2]:.5f}\n")
                inst += 1


def test_char_trajectories_halving(tmp_path):
    counts = [5, 4, 3, 6] * 5
    path = tmp_path / "chars.csv"
    _write_chartraj(path, counts)
    suite = dg.load_char_trajectories(path)
    assert len(suite) == 5
    n_train = sum(len(t.train) for t in suite)
    n_test = sum(len(t.test) for t in suite)
    assert n_train == sum(n // 2 for n in counts)
    assert n_test == sum(n - n // 2 for n in counts)
    for t in suite:
        assert len(t.modes) == 4
        assert all(s.values.shape == (109, 3) for s in t.train + t.test)


def test_subsample_keeps_endpoints():
    v = np.arange(200.0)[:, None]
    out = dg.subsample(v, 109)
    assert out.shape == (109, 1)
    assert out[0, 0] == 0 and out[-1, 0] == 199
    assert np.all(np.diff(out[:, 0]) > 0)


def test_dataset_round_trip_and_stable_bytes(tmp_path):
    suite = dg.build_synthetic_suite("lotka_volterra", 2)
    dg.write_dataset(suite, tmp_path / "a", {"system": "lotka_volterra", "dt": 0.4, "seed": 2})
    dg.write_dataset(dg.build_synthetic_suite("lotka_volterra", 2), tmp_path / "b",
                     {"system": "lotka_volterra", "dt": 0.4, "seed": 2})
    for f in (tmp_path / "a").iterdir():
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()
    header = (tmp_path / "a" / "task0_train.csv").read_text().splitlines()[0]
    assert header == "task_id,mode_id,seq_id,t,dim0,dim1"
    back, manifest = dg.read_dataset(tmp_path / "a")
    assert manifest["seed"] == 2
    for t0, t1 in zip(suite, back):
        for a, b in zip(t0.train + t0.test, t1.train + t1.test):
            np.testing.assert_array_equal(a.values, b.values)
            assert a.mode_id == b.mode_id


def test_context_length_is_a_third():
    assert dg.context_length(15) == 5
    assert dg.context_length(50) == 16
    assert dg.PRESETS["sine"].context_len == 5
