"""Synthetic multi-modal dynamical systems, UCI ingestion and task partitioning."""
from __future__ import annotations

import csv
import itertools
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

SYSTEMS = ("sine", "lotka_volterra", "lorenz", "libras", "char_trajectories")
JUMP = 5


@dataclass
class Sequence:
    values: np.ndarray
    dt: float
    mode_id: int
    task_id: int = -1

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        if self.values.ndim != 2 or self.values.shape[0] < 2:
            raise ValueError("a sequence needs shape (T, D) with T >= 2")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("sequence contains non-finite values")
        if not self.dt > 0:
            raise ValueError("dt must be positive")

    @property
    def T(self):
        return self.values.shape[0]


@dataclass
class ModeSpec:
    system: str
    params: dict
    noise_sigma: float = 0.0

    _KEYS = {"sine": {"A", "f"}, "lotka_volterra": {"alpha", "beta", "gamma", "delta"},
             "lorenz": {"sigma", "rho", "beta"}, "libras": {"label"},
             "char_trajectories": {"label"}}

    def __post_init__(self):
        if self.system not in SYSTEMS:
            raise ValueError(f"unknown system {self.system!r}")
        if set(self.params) != self._KEYS[self.system]:
            raise ValueError(f"{self.system} mode needs keys {sorted(self._KEYS[self.system])}")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")


@dataclass
class TaskDataset:
    task_id: int
    train: list
    test: list
    modes: list = field(default_factory=list)

    def train_array(self):
        return np.stack([s.values for s in self.train])

    def test_array(self):
        return np.stack([s.values for s in self.test])


@dataclass(frozen=True)
class SystemPreset:
    T: int
    dt: float
    n_tasks: int
    n_train: int
    n_test: int
    context_len: int
    substeps: int = 1


PRESETS = {
    "sine": SystemPreset(15, 0.1, 5, 12, 6, 5),
    "lotka_volterra": SystemPreset(25, 0.4, 4, 12, 6, 8, substeps=4),
    "lorenz": SystemPreset(50, 0.01, 4, 12, 6, 16),
    "libras": SystemPreset(45, 7 / 45, 5, 12, 12, 15),
    "char_trajectories": SystemPreset(109, 0.05, 5, 0, 0, 35),
}


# ------------------------------------------------------------------ generators

def gen_sine(A, f, t_grid):
    t = np.asarray(t_grid, dtype=np.float64)
    if t.size > 1 and np.any(np.diff(t) <= 0):
        raise ValueError("t_grid must be ascending")
    return (A * np.sin(2.0 * np.pi * f * t))[:, None]


def integrate_ode(field_fn, x0, dt, steps, substeps=1):
    """Classical fixed-step RK4; returns ``steps + 1`` rows starting at ``x0``.

    ``substeps`` RK4 steps of size ``dt / substeps`` are taken between rows.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    x = np.array(x0, dtype=np.float64)
    h = dt / substeps
    out = np.empty((steps + 1, x.size))
    out[0] = x
    for i in range(steps):
        for _ in range(substeps):
            k1 = field_fn(x)
            k2 = field_fn(x + 0.5 * h * k1)
            k3 = field_fn(x + 0.5 * h * k2)
            k4 = field_fn(x + h * k3)
            x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(x)):
            raise FloatingPointError(f"integrate_ode: non-finite state at step {i + 1}: {x}")
        out[i + 1] = x
    return out


def gen_lotka_volterra(alpha, beta, gamma, delta, x0=(2.0, 2.0), dt=0.4, n_points=100,
                       substeps=4):
    if min(alpha, beta, gamma, delta) < 0:
        raise ValueError("Lotka-Volterra parameters must be non-negative")

    def field_fn(s):
        x, y = s
        return np.array([alpha * x - beta * x * y, delta * x * y - gamma * y])

    traj = integrate_ode(field_fn, x0, dt, n_points - 1, substeps)
    if traj.min() < 1e-12:
        logger.warning("Lotka-Volterra population fell below 1e-12 (min %g)", traj.min())
    return traj


def gen_lorenz(sigma, rho, beta, x0=(1.0, 1.0, 28.0), dt=0.01, n_points=100, substeps=1):
    if min(sigma, rho, beta) < 0:
        raise ValueError("Lorenz parameters must be non-negative")

    def field_fn(s):
        x, y, z = s
        return np.array([sigma * (y - x), x * (rho - z) - y, x * y - beta * z])

    return integrate_ode(field_fn, x0, dt, n_points - 1, substeps)


def lv_first_integral(traj, alpha, beta, gamma, delta):
    x, y = traj[:, 0], traj[:, 1]
    return delta * x - gamma * np.log(x) + beta * y - alpha * np.log(y)


def window_starts(L, T, jump=JUMP):
    if L < T:
        raise ValueError(f"trajectory length {L} is shorter than the window {T}")
    return list(range(0, L - T + 1, T + jump))


def windowize(long_traj, T, jump=JUMP):
    """Non-overlapping length-``T`` windows separated by ``jump`` points."""
    traj = np.asarray(long_traj)
    return [traj[s:s + T] for s in window_starts(len(traj), T, jump)]


def add_noise(values, sigma, rng):
    """Add i.i.d. N(0, sigma^2) noise; ``sigma`` is a standard deviation."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    values = np.asarray(values, dtype=np.float64)
    if sigma == 0:
        return values.copy()
    return values + rng.normal(0.0, sigma, values.shape)


# ------------------------------------------------------------------ mode grids

def mode_grid(system):
    if system == "sine":
        return [ModeSpec("sine", {"A": A, "f": f}, A / 100.0)
                for A, f in itertools.product([3.0, 6.0, 9.0, 12.0, 15.0], [2 / 3, 1.0, 4 / 3])]
    if system == "lotka_volterra":
        return [ModeSpec("lotka_volterra", {"alpha": a, "beta": b, "gamma": g, "delta": 0.5}, 0.001)
                for a, b, g in itertools.product([0.25, 0.75], repeat=3)]
    if system == "lorenz":
        return [ModeSpec("lorenz", {"sigma": s, "rho": r, "beta": b}, 0.01)
                for r, s, b in itertools.product([28.0, 42.0, 56.0], [8.0, 12.0], [5 / 3, 13 / 3])]
    raise ValueError(f"{system!r} is not a synthetic system")


def long_trajectory(mode: ModeSpec, n_points, preset: SystemPreset):
    p = mode.params
    if mode.system == "sine":
        return gen_sine(p["A"], p["f"], np.arange(n_points) * preset.dt)
    if mode.system == "lotka_volterra":
        return gen_lotka_volterra(p["alpha"], p["beta"], p["gamma"], p["delta"], dt=preset.dt,
                                  n_points=n_points, substeps=preset.substeps)
    if mode.system == "lorenz":
        return gen_lorenz(p["sigma"], p["rho"], p["beta"], dt=preset.dt, n_points=n_points,
                          substeps=preset.substeps)
    raise ValueError(f"{mode.system!r} is not a synthetic system")


def partition_modes(n_modes, n_tasks, rng):
    """Random equal-size groups of mode indices, in random task order."""
    if n_modes % n_tasks:
        raise ValueError(f"{n_modes} modes cannot be split into {n_tasks} equal tasks")
    perm = rng.permutation(n_modes)
    return [sorted(int(i) for i in chunk) for chunk in np.split(perm, n_tasks)]


def build_synthetic_suite(system, seed, preset: SystemPreset | None = None, noise_scale=1.0):
    """Full task suite for a synthetic system, in seed-determined task order."""
    preset = preset or PRESETS[system]
    modes = mode_grid(system)
    rng = np.random.default_rng(seed)
    groups = partition_modes(len(modes), preset.n_tasks, rng)
    per_mode = preset.n_train + preset.n_test
    n_points = per_mode * (preset.T + JUMP)
    split_rng, noise_rng = (np.random.default_rng(s) for s in rng.spawn(2))

    train_by_mode, test_by_mode = {}, {}
    for mode_id, mode in enumerate(modes):
        traj = long_trajectory(mode, n_points, preset)
        windows = windowize(traj, preset.T)
        if len(windows) < per_mode:
            raise ValueError(f"only {len(windows)} windows for mode {mode_id}, need {per_mode}")
        order = split_rng.permutation(len(windows))
        train_by_mode[mode_id] = [add_noise(windows[i], mode.noise_sigma * noise_scale, noise_rng)
                                  for i in order[:preset.n_train]]
        test_by_mode[mode_id] = [windows[i].copy() for i in order[preset.n_train:per_mode]]

    tasks = []
    for task_id, group in enumerate(groups):
        train, test = [], []
        for mode_id in group:
            train += [Sequence(v, preset.dt, mode_id, task_id) for v in train_by_mode[mode_id]]
            test += [Sequence(v, preset.dt, mode_id, task_id) for v in test_by_mode[mode_id]]
        tasks.append(TaskDataset(task_id, train, test, [modes[m] for m in group]))
    return tasks


# ------------------------------------------------------------------ UCI data

def _rows(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"data file not found: {path}")
    with open(path, newline="") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if line:
                yield lineno, [c.strip() for c in line.split(",")]


def _group_classes(by_class, n_tasks, rng, dt, split):
    labels = sorted(by_class)
    groups = partition_modes(len(labels), n_tasks, rng)
    tasks = []
    for task_id, group in enumerate(groups):
        train, test, modes = [], [], []
        for mode_idx in group:
            label = labels[mode_idx]
            seqs = by_class[label]
            if len(seqs) < 2:
                raise ValueError(f"class {label} has fewer than 2 instances")
            n_train = split(len(seqs))
            train += [Sequence(v, dt, mode_idx, task_id) for v in seqs[:n_train]]
            test += [Sequence(v, dt, mode_idx, task_id) for v in seqs[n_train:]]
            modes.append(label)
        tasks.append(TaskDataset(task_id, train, test, modes))
    return tasks


def load_libras(path, seed=0):
    """Libras movement CSV: 90 coordinates (x1, y1, ..., x45, y45) then the class.

    Per class, the first half of the instances (file order) is the train split.
    """
    by_class = {}
    for lineno, row in _rows(path):
        if len(row) != 91:
            raise ValueError(f"{path}:{lineno}: expected 91 columns, got {len(row)}")
        try:
            coords = np.array([float(c) for c in row[:90]])
            label = int(float(row[90]))
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: malformed row") from exc
        by_class.setdefault(label, []).append(coords.reshape(45, 2))
    if len(by_class) != 15:
        logger.warning("Libras file has %d classes, expected 15", len(by_class))
    preset = PRESETS["libras"]
    return _group_classes(by_class, preset.n_tasks, np.random.default_rng(seed), preset.dt,
                          lambda n: n // 2)


def subsample(values, length):
    """Uniform integer index selection including the first and last frame."""
    values = np.asarray(values)
    idx = np.round(np.linspace(0, len(values) - 1, length)).astype(int)
    return values[idx]


def load_char_trajectories(path, seed=0, length=None):
    """Character Trajectories in long CSV form.

    Header ``instance,label,t,dim0,dim1,dim2``; one row per time point,
    instances contiguous and in file order.  Every instance is subsampled to
    the shortest instance length (109 for the UCI release).  Per class, the
    first ``floor(n / 2)`` instances form the train split.
    """
    series = {}
    order = []
    labels = {}
    for lineno, row in _rows(path):
        if row[0] == "instance":
            continue
        if len(row) != 6:
            raise ValueError(f"{path}:{lineno}: expected 6 columns, got {len(row)}")
        try:
            inst, label = row[0], row[1]
            vals = [float(c) for c in row[3:]]
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: malformed row") from exc
        if inst not in series:
            series[inst] = []
            order.append(inst)
            labels[inst] = label
        series[inst].append(vals)
    if not order:
        raise ValueError(f"{path}: no data rows")
    min_len = min(len(series[i]) for i in order)
    length = length or min_len
    by_class = {}
    for inst in order:
        by_class.setdefault(labels[inst], []).append(subsample(np.array(series[inst]), length))
    preset = PRESETS["char_trajectories"]
    return _group_classes(by_class, preset.n_tasks, np.random.default_rng(seed), preset.dt,
                          lambda n: n // 2)


def load_suite(system, seed, data_path=None):
    if system in ("sine", "lotka_volterra", "lorenz"):
        return build_synthetic_suite(system, seed)
    if data_path is None:
        raise ValueError(f"{system} needs a data path")
    if system == "libras":
        return load_libras(data_path, seed)
    if system == "char_trajectories":
        return load_char_trajectories(data_path, seed)
    raise ValueError(f"unknown system {system!r}")


# ------------------------------------------------------------------ on-disk format

def write_dataset(tasks, out_dir, manifest):
    """One CSV per split per task plus ``manifest.json``."""
    import json

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for task in tasks:
        for split in ("train", "test"):
            seqs = getattr(task, split)
            D = seqs[0].values.shape[1]
            with open(out_dir / f"task{task.task_id}_{split}.csv", "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["task_id", "mode_id", "seq_id", "t"] + [f"dim{i}" for i in range(D)])
                for seq_id, s in enumerate(seqs):
                    for t, row in enumerate(s.values):
                        w.writerow([task.task_id, s.mode_id, seq_id, t] + [repr(float(v)) for v in row])
    manifest = dict(manifest)
    manifest["tasks"] = [{"task_id": t.task_id,
                          "modes": [m.params if isinstance(m, ModeSpec) else m for m in t.modes],
                          "n_train": len(t.train), "n_test": len(t.test)} for t in tasks]
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def read_dataset(out_dir):
    import json

    out_dir = Path(out_dir)
    with open(out_dir / "manifest.json") as fh:
        manifest = json.load(fh)
    dt = manifest["dt"]
    tasks = []
    for entry in manifest["tasks"]:
        splits = {}
        for split in ("train", "test"):
            seqs = {}
            with open(out_dir / f"task{entry['task_id']}_{split}.csv", newline="") as fh:
                for row in csv.DictReader(fh):
                    key = int(row["seq_id"])
                    dims = sorted((k for k in row if k.startswith("dim")), key=lambda k: int(k[3:]))
                    seqs.setdefault(key, (int(row["mode_id"]), []))[1].append(
                        [float(row[k]) for k in dims])
            splits[split] = [Sequence(np.array(v), dt, m, entry["task_id"])
                             for _, (m, v) in sorted(seqs.items())]
        tasks.append(TaskDataset(entry["task_id"], splits["train"], splits["test"], entry["modes"]))
    return tasks, manifest


def context_length(T):
    return max(1, math.floor(T / 3))
