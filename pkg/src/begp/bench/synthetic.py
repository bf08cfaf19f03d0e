"""Synthetic multi-task families: the toy system and the Forrester family."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..begp import MultiTaskData

TOY = "toy"
FORRESTER = "forrester"
FAMILIES = (TOY, FORRESTER)

FORRESTER_HIGH = (1.0, 0.0, 0.0)
FORRESTER_LOW = (0.5, 10.0, -5.0)


def toy_eta(x, theta):
    x = np.asarray(x, dtype=np.float64)
    z = theta[0] + 4.0 * x - 4.0
    return 0.1 * z**4 - z**2 + (2.0 + theta[1]) * np.sin(2.0 * z)


def forrester(x):
    x = np.asarray(x, dtype=np.float64)
    return (6.0 * x - 2.0) ** 2 * np.sin(12.0 * x - 4.0)


def forrester_family(x, theta):
    x = np.asarray(x, dtype=np.float64)
    return theta[0] * forrester(x) + theta[1] * (x - 0.5) + theta[2]


@dataclass(frozen=True)
class SyntheticTask:
    family: str
    theta: tuple

    def __post_init__(self):
        expected = {TOY: 2, FORRESTER: 3}.get(self.family)
        if expected is None:
            raise ValueError(f"unknown family {self.family!r}")
        if len(self.theta) != expected:
            raise ValueError(f"{self.family} tasks take {expected} parameters")

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 2:
            x = x[:, 0]
        if self.family == TOY:
            return toy_eta(x, self.theta)
        return forrester_family(x, self.theta)

    def grid_optimum(self, n=10**6):
        """Minimum over a uniform grid on [0, 1] as ``(x*, f*)``."""
        xs = np.linspace(0.0, 1.0, n)
        f = self(xs)
        i = int(np.argmin(f))
        return float(xs[i]), float(f[i])


def sample_theta(family, rng):
    if family == TOY:
        return tuple(rng.uniform(0.0, 1.0, size=2).tolist())
    if family == FORRESTER:
        return (rng.uniform(0.0, 1.0), rng.uniform(0.0, 10.0), rng.uniform(-5.0, 5.0))
    raise ValueError(f"unknown family {family!r}")


def sample_task_family(family: str, n_tasks: int, seed) -> list[SyntheticTask]:
    """Draw legacy tasks; the Forrester family always starts with its low-fidelity task."""
    if n_tasks < 1:
        raise ValueError("n_tasks must be at least 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    tasks = []
    if family == FORRESTER:
        tasks.append(SyntheticTask(FORRESTER, FORRESTER_LOW))
    while len(tasks) < n_tasks:
        tasks.append(SyntheticTask(family, sample_theta(family, rng)))
    return tasks


def task_token(i: int) -> str:
    return f"task_{i}"


def build_legacy_dataset(tasks, points_per_task: int, seed, tokens=None) -> MultiTaskData:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    tokens = tokens or [task_token(i) for i in range(len(tasks))]
    names, xs, ys = [], [], []
    for tok, task in zip(tokens, tasks):
        x = rng.uniform(0.0, 1.0, size=points_per_task)
        names += [tok] * points_per_task
        xs.append(x)
        ys.append(task(x))
    x = np.concatenate(xs) if xs else np.empty(0)
    return MultiTaskData(names, x.reshape(-1, 1), np.concatenate(ys) if ys else np.empty(0))
