"""Data-noising sweeps: collect -> train BC -> evaluate, over noise grids and seeds."""
from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .bc import TrainConfig, train
from .pmobstacle import EnvConfig, ScriptedExpert, collect_dataset, evaluate, successful_only

log = logging.getLogger(__name__)

SYSTEM, POLICY, COMBINED = "system", "policy", "combined"
DEFAULT_GRID = (0.01, 0.02, 0.03, 0.04)

RAW_COLUMNS = ["kind", "dataset_size", "train_sigma_s", "train_sigma_p", "eval_sigma_s",
               "repeat", "success_rate", "n_eval_episodes", "status", "reason"]
AGG_COLUMNS = ["kind", "dataset_size", "train_sigma_s", "train_sigma_p", "eval_sigma_s",
               "n_repeats", "mean", "stderr"]


def _default_train_config() -> TrainConfig:
    # small datasets get as many optimizer updates as large ones
    return TrainConfig(min_updates=10_000)


@dataclass
class SweepSpec:
    env: EnvConfig = field(default_factory=EnvConfig)
    expert: ScriptedExpert = field(default_factory=ScriptedExpert)
    train: TrainConfig = field(default_factory=_default_train_config)
    dataset_sizes: list[int] = field(default_factory=lambda: [1000, 10])
    train_sigma_s: list[float] = field(default_factory=lambda: list(DEFAULT_GRID))
    train_sigma_p: list[float] = field(default_factory=lambda: list(DEFAULT_GRID))
    combined_sigma_s: float = 0.03
    eval_sigma_s: list[float] = field(default_factory=lambda: list(DEFAULT_GRID))
    repeats: int = 3
    base_seed: int = 0
    n_eval_episodes: int = 100
    successful_only: bool = True
    workers: int = 1

    def __post_init__(self):
        for name in ("dataset_sizes", "train_sigma_s", "train_sigma_p", "eval_sigma_s"):
            grid = getattr(self, name)
            if not grid or any(not v >= 0 for v in grid):
                raise ValueError(f"{name} must be a nonempty list of nonnegative values")
        if any(n < 1 for n in self.dataset_sizes):
            raise ValueError("dataset sizes must be positive")
        if self.repeats < 1 or self.n_eval_episodes < 1 or self.workers < 1:
            raise ValueError("repeats, n_eval_episodes and workers must be >= 1")
        if not self.combined_sigma_s >= 0:
            raise ValueError("combined_sigma_s must be nonnegative")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["env"] = self.env.to_dict()
        d["expert"] = {"waypoints": [list(w) for w in self.expert.waypoints], "gain": self.expert.gain,
                       "sigma_p": self.expert.sigma_p, "switch_radius": self.expert.switch_radius}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> SweepSpec:
        d = dict(d)
        if "env" in d:
            d["env"] = EnvConfig.from_dict(d["env"])
        if "expert" in d:
            e = dict(d["expert"])
            if "waypoints" in e:
                e["waypoints"] = tuple(tuple(float(x) for x in w) for w in e["waypoints"])
            d["expert"] = ScriptedExpert(**e)
        if "train" in d:
            d["train"] = TrainConfig(**d["train"])
        return cls(**d)


@dataclass(frozen=True)
class SweepRow:
    kind: str
    dataset_size: int
    train_sigma_s: float
    train_sigma_p: float
    eval_sigma_s: float
    repeat: int
    success_rate: float  # nan for missing cells
    n_eval_episodes: int
    status: str = "ok"
    reason: str = ""

    @property
    def key(self) -> tuple:
        return (self.kind, self.dataset_size, self.train_sigma_s, self.train_sigma_p,
                self.eval_sigma_s, self.repeat)


@dataclass(frozen=True)
class Aggregate:
    kind: str
    dataset_size: int
    train_sigma_s: float
    train_sigma_p: float
    eval_sigma_s: float
    n_repeats: int
    mean: float
    stderr: float


@dataclass
class SweepResult:
    rows: list[SweepRow]

    def __post_init__(self):
        self.rows = sorted(self.rows, key=lambda r: r.key)

    def aggregates(self) -> list[Aggregate]:
        return aggregate(self.rows)

    def cell_mean(self, kind: str, size: int, sigma_s: float, sigma_p: float,
                  eval_sigma_s: float | None = None) -> float:
        """Mean success over repeats (and over the eval grid when ``eval_sigma_s`` is None)."""
        vals = [r.success_rate for r in self.rows
                if r.kind == kind and r.dataset_size == size and r.status == "ok"
                and math.isclose(r.train_sigma_s, sigma_s) and math.isclose(r.train_sigma_p, sigma_p)
                and (eval_sigma_s is None or math.isclose(r.eval_sigma_s, eval_sigma_s))]
        if not vals:
            raise KeyError(f"no rows for {kind} size={size} sigma_s={sigma_s} sigma_p={sigma_p}")
        return float(np.mean(vals))

    def __add__(self, other: SweepResult) -> SweepResult:
        return SweepResult(self.rows + other.rows)


def aggregate(rows: list[SweepRow]) -> list[Aggregate]:
    """Mean and standard error (sample std / sqrt(repeats)) per cell; 0.0 stderr for a single repeat."""
    groups: dict[tuple, list[float]] = {}
    for r in rows:
        if r.status != "ok":
            continue
        groups.setdefault(r.key[:-1], []).append(r.success_rate)
    out = []
    for key in sorted(groups):
        vals = np.array(groups[key])
        stderr = float(np.std(vals, ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
        out.append(Aggregate(*key, len(vals), float(np.mean(vals)), stderr))
    return out


def derive_seeds(base_seed: int, size: int, sigma_s: float, sigma_p: float, repeat: int) -> tuple[int, int]:
    """(collection seed, training seed) for one cell; a pure function of the cell key."""
    words = np.random.SeedSequence(
        [base_seed, size, round(sigma_s * 1_000_000), round(sigma_p * 1_000_000), repeat]
    ).generate_state(2)
    return int(words[0]), int(words[1])


def eval_seed(base_seed: int, eval_sigma_s: float, repeat: int) -> int:
    # shared by every cell of a repeat so policies face the same evaluation episodes
    return int(np.random.SeedSequence([base_seed, 0xE7A1, round(eval_sigma_s * 1_000_000), repeat])
               .generate_state(1)[0])


def run_cell(spec: SweepSpec, kind: str, size: int, sigma_s: float, sigma_p: float,
             repeat: int) -> list[SweepRow]:
    """Collect, train and evaluate one grid cell on every eval noise level."""
    collect_seed, train_seed = derive_seeds(spec.base_seed, size, sigma_s, sigma_p, repeat)
    try:
        data = collect_dataset(replace(spec.env, sigma_s=sigma_s),
                               replace(spec.expert, sigma_p=sigma_p), size, collect_seed)
        if spec.successful_only:
            data = successful_only(data)
        policy = train(data, replace(spec.train, seed=train_seed))
    except (ValueError, ArithmeticError) as exc:
        log.warning("cell %s size=%d sigma_s=%g sigma_p=%g repeat=%d failed: %s",
                    kind, size, sigma_s, sigma_p, repeat, exc)
        return [SweepRow(kind, size, sigma_s, sigma_p, e, repeat, math.nan, 0, "missing", str(exc))
                for e in spec.eval_sigma_s]
    rows = []
    for e in spec.eval_sigma_s:
        rate, _ = evaluate(policy, spec.env, e, spec.n_eval_episodes, eval_seed(spec.base_seed, e, repeat))
        rows.append(SweepRow(kind, size, sigma_s, sigma_p, e, repeat, rate, spec.n_eval_episodes))
    return rows


def _run_cell_job(args):
    return run_cell(*args)


def _run_cells(spec: SweepSpec, kind: str, cells: list[tuple[int, float, float, int]],
               cache: dict | None) -> SweepResult:
    cache = {} if cache is None else cache
    todo = [c for c in cells if c not in cache]
    jobs = [(spec, kind, *c) for c in todo]
    if spec.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(spec.workers) as pool:
            results = list(pool.map(_run_cell_job, jobs))
    else:
        results = [_run_cell_job(j) for j in jobs]
    for c, rows in zip(todo, results):
        cache[c] = rows
    rows = [replace(r, kind=kind) for c in cells for r in cache[c]]
    return SweepResult(rows)


def _grid(sizes, pairs, repeats):
    return [(n, s, p, rep) for n in sizes for s, p in pairs for rep in range(repeats)]


def run_system_noise_sweep(spec: SweepSpec, cache: dict | None = None) -> SweepResult:
    """Dataset system noise from ``train_sigma_s``, no policy noise.

    ``cache`` maps (size, sigma_s, sigma_p, repeat) to rows and is shared
    between sweeps: identical cells have identical seeds, so they are reused.
    """
    pairs = [(s, 0.0) for s in spec.train_sigma_s]
    return _run_cells(spec, SYSTEM, _grid(spec.dataset_sizes, pairs, spec.repeats), cache)


def run_policy_noise_sweep(spec: SweepSpec, cache: dict | None = None) -> SweepResult:
    pairs = [(0.0, p) for p in spec.train_sigma_p]
    return _run_cells(spec, POLICY, _grid(spec.dataset_sizes, pairs, spec.repeats), cache)


def run_combined_noise_sweep(spec: SweepSpec, cache: dict | None = None) -> SweepResult:
    pairs = [(spec.combined_sigma_s, p) for p in spec.train_sigma_p]
    return _run_cells(spec, COMBINED, _grid(spec.dataset_sizes, pairs, spec.repeats), cache)


def _fmt(x: float) -> str:
    return repr(float(x))


def provenance_line(seed: int, config_hash: str) -> str:
    return f"# ildata {__version__} seed={seed} config={config_hash}"


def export_results(result: SweepResult, path, provenance: str | None = None) -> tuple[Path, Path, Path]:
    """Write ``raw.csv``, ``agg.csv`` and ``summary.md`` into directory ``path``."""
    if not result.rows:
        raise ValueError("cannot export an empty sweep result")
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    raw_path, agg_path, md_path = out / "raw.csv", out / "agg.csv", out / "summary.md"
    try:
        with open(raw_path, "w", newline="", encoding="utf-8") as fh:
            if provenance:
                fh.write(provenance + "\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(RAW_COLUMNS)
            for r in result.rows:
                w.writerow([r.kind, r.dataset_size, _fmt(r.train_sigma_s), _fmt(r.train_sigma_p),
                            _fmt(r.eval_sigma_s), r.repeat, _fmt(r.success_rate), r.n_eval_episodes,
                            r.status, r.reason])
        with open(agg_path, "w", newline="", encoding="utf-8") as fh:
            if provenance:
                fh.write(provenance + "\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(AGG_COLUMNS)
            for a in result.aggregates():
                w.writerow([a.kind, a.dataset_size, _fmt(a.train_sigma_s), _fmt(a.train_sigma_p),
                            _fmt(a.eval_sigma_s), a.n_repeats, _fmt(a.mean), _fmt(a.stderr)])
        md_path.write_text(((provenance + "\n\n") if provenance else "") + summary_markdown(result),
                           encoding="utf-8")
    except OSError as exc:
        raise OSError(f"failed to export results to {out}: {exc}") from exc
    return raw_path, agg_path, md_path


def _data_rows(fh):
    return csv.DictReader(line for line in fh if not line.startswith("#"))


def load_raw(path) -> SweepResult:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [SweepRow(d["kind"], int(d["dataset_size"]), float(d["train_sigma_s"]),
                         float(d["train_sigma_p"]), float(d["eval_sigma_s"]), int(d["repeat"]),
                         float(d["success_rate"]), int(d["n_eval_episodes"]), d["status"], d["reason"])
                for d in _data_rows(fh)]
    return SweepResult(rows)


def load_aggregates(path) -> list[Aggregate]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [Aggregate(d["kind"], int(d["dataset_size"]), float(d["train_sigma_s"]),
                          float(d["train_sigma_p"]), float(d["eval_sigma_s"]), int(d["n_repeats"]),
                          float(d["mean"]), float(d["stderr"]))
                for d in _data_rows(fh)]


def summary_markdown(result: SweepResult) -> str:
    """One table per (kind, dataset size): training noise rows, eval noise columns, mean(stderr)."""
    aggs = result.aggregates()
    blocks = []
    for kind, size in sorted({(a.kind, a.dataset_size) for a in aggs}):
        sel = [a for a in aggs if a.kind == kind and a.dataset_size == size]
        evals = sorted({a.eval_sigma_s for a in sel})
        trains = sorted({(a.train_sigma_s, a.train_sigma_p) for a in sel})
        lines = [f"### {kind} noise, {size} episodes", "",
                 "| train | " + " | ".join(f"eval σ_s={e:g}" for e in evals) + " |",
                 "|---|" + "---|" * len(evals)]
        for s, p in trains:
            cells = {a.eval_sigma_s: a for a in sel if (a.train_sigma_s, a.train_sigma_p) == (s, p)}
            label = f"σ_s={s:g}, σ_p={p:g}"
            vals = [f"{cells[e].mean:.1f}({cells[e].stderr:.1f})" if e in cells else "-" for e in evals]
            lines.append(f"| {label} | " + " | ".join(vals) + " |")
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + "\n"
