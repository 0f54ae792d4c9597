"""Per-episode metrics, CSV export and plot-ready text columns."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from drlcontrol.errors import ContractViolation, DrlControlError


class ExportError(DrlControlError, OSError):
    pass


@dataclass
class EpisodeRecord:
    episode: int
    total_reward: float
    steps: int
    wall_clock: float = 0.0


@dataclass
class StepRecord:
    t: int
    setpoint: np.ndarray
    y: np.ndarray
    a: np.ndarray
    reward: float


@dataclass
class MetricsLog:
    """Append-only record of a run; episode indices are 0, 1, 2, ... in order."""

    episodes: list = field(default_factory=list)
    traces: dict = field(default_factory=dict)
    n_y: int = 1
    n_a: int = 1

    def add_episode(self, episode, total_reward, steps, wall_clock=0.0, trace=None):
        if episode != len(self.episodes):
            raise ContractViolation(f"episode {episode} appended out of order (expected {len(self.episodes)})")
        self.episodes.append(EpisodeRecord(episode, float(total_reward), int(steps), float(wall_clock)))
        if trace is not None:
            self.traces[episode] = list(trace)

    @property
    def rewards(self):
        return np.array([e.total_reward for e in self.episodes])

    @property
    def steps(self):
        return np.array([e.steps for e in self.episodes], dtype=np.int64)

    def __len__(self):
        return len(self.episodes)


def moving_average(series, window):
    """Trailing mean over ``min(window, i + 1)`` points; same length as the input."""
    if window < 1:
        raise ValueError("window must be >= 1")
    x = np.asarray(series, dtype=np.float64)
    if x.size == 0:
        return x.copy()
    c = np.concatenate([[0.0], np.cumsum(x)])
    idx = np.arange(1, x.size + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)


def _fmt(v):
    return repr(float(v))


def _open(path):
    try:
        return open(path, "w", newline="")
    except OSError as exc:
        raise ExportError(f"cannot write {path}: {exc.strerror}") from None


def trace_header(n_y, n_a):
    def names(prefix, n):
        return [prefix] if n == 1 else [f"{prefix}{i + 1}" for i in range(n)]

    return ["t", *names("setpoint", n_y), *names("y", n_y), *names("a", n_a), "reward"]


def _trace_row(rec: StepRecord):
    return [str(rec.t), *map(_fmt, np.atleast_1d(rec.setpoint)), *map(_fmt, np.atleast_1d(rec.y)),
            *map(_fmt, np.atleast_1d(rec.a)), _fmt(rec.reward)]


def export_csv(log: MetricsLog, directory):
    """Write ``episodes.csv`` and one ``trace_<episode>.csv`` per stored trace."""
    d = Path(directory)
    try:
        d.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ExportError(f"cannot create {d}: {exc.strerror}") from None
    written = []
    path = d / "episodes.csv"
    with _open(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["episode", "total_reward", "steps"])
        for e in log.episodes:
            w.writerow([e.episode, _fmt(e.total_reward), e.steps])
    written.append(path)
    for ep, trace in sorted(log.traces.items()):
        path = d / f"trace_{ep}.csv"
        with _open(path) as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(trace_header(log.n_y, log.n_a))
            for rec in trace:
                w.writerow(_trace_row(rec))
        written.append(path)
    return written


def emit_plot_data(log: MetricsLog, directory, window=21):
    """Whitespace-separated columns with a ``#`` header line.

    ``rewards.dat``: episode, total reward, moving average, steps.
    ``trace_<episode>.dat``: the trace columns of the CSV export.
    """
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    written = []
    path = d / "rewards.dat"
    ma = moving_average(log.rewards, window)
    with _open(path) as fh:
        fh.write(f"# episode total_reward moving_average_{window} steps\n")
        for e, m in zip(log.episodes, ma):
            fh.write(f"{e.episode} {_fmt(e.total_reward)} {_fmt(m)} {e.steps}\n")
    written.append(path)
    for ep, trace in sorted(log.traces.items()):
        path = d / f"trace_{ep}.dat"
        with _open(path) as fh:
            fh.write("# " + " ".join(trace_header(log.n_y, log.n_a)) + "\n")
            for rec in trace:
                fh.write(" ".join(_trace_row(rec)) + "\n")
        written.append(path)
    return written


def read_episodes_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [(int(r["episode"]), float(r["total_reward"]), int(r["steps"])) for r in rows]


def read_trace_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        data = [[float(v) for v in row] for row in reader]
    return header, np.array(data).reshape(-1, len(header))
