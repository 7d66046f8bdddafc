"""Multi-seed experiment orchestration, CSV/SVG emission and presets."""
from __future__ import annotations

import csv
import json
import math
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .algorithms import AlgoConfig, RunTrace, run
from .environment import Environment, generate_instance
from .estimation import MleConfig

CSV_HEADER = ("algorithm", "seed", "round", "cum_regret", "cum_seconds", "opt_calls")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SummaryRow:
    algorithm: str
    seed: int
    round: int
    cum_regret: float
    cum_seconds: float
    opt_calls: int


@dataclass
class ExperimentConfig:
    N: int
    K: int
    d: int
    L: int
    T: int
    seeds: list[int]
    algorithms: list[AlgoConfig]
    output: str = "results"
    timing: bool = False
    decimate: int | None = None
    workers: int = 1
    run_seed: int = 0

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if not self.algorithms:
            raise ConfigError("at least one algorithm is required")
        if self.T < 1:
            raise ConfigError("horizon T must be >= 1")
        if self.decimate is not None and self.decimate < 1:
            raise ConfigError("decimate must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if not 1 <= self.L <= self.N:
            raise ConfigError(f"capacity L={self.L} outside [1, N={self.N}]")

    @property
    def decimation(self) -> int:
        if self.decimate is not None:
            return self.decimate
        return 1 if self.T <= 10_000 else 10


# ---------------------------------------------------------------- config I/O

_ALGO_FIELDS = {f.name for f in fields(AlgoConfig)} - {"T", "mle", "theta_init"}


def parse_seeds(spec) -> list[int]:
    """Accepts a list of ints, a single int, or an inclusive range string "a..b"."""
    if isinstance(spec, int):
        return [spec]
    if isinstance(spec, str):
        try:
            if ".." in spec:
                a, b = spec.split("..", 1)
                a, b = int(a), int(b)
                if b < a:
                    raise ConfigError(f"empty seed range {spec!r}")
                return list(range(a, b + 1))
            return [int(s) for s in spec.split(",") if s.strip()]
        except ValueError:
            raise ConfigError(f"bad seed specification {spec!r}") from None
    try:
        return [int(s) for s in spec]
    except (TypeError, ValueError):
        raise ConfigError(f"bad seed specification {spec!r}") from None


def algo_from_dict(doc: dict, T: int) -> AlgoConfig:
    if not isinstance(doc, dict) or "algorithm" not in doc:
        raise ConfigError("each algorithm entry needs an 'algorithm' field")
    unknown = set(doc) - _ALGO_FIELDS - {"mle"}
    if unknown:
        raise ConfigError(f"unknown algorithm fields: {sorted(unknown)}")
    kw = {k: v for k, v in doc.items() if k != "mle"}
    if "mle" in doc:
        kw["mle"] = MleConfig(**doc["mle"])
    try:
        return AlgoConfig(T=T, **kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def config_from_dict(doc: dict) -> ExperimentConfig:
    try:
        inst = doc["instance"]
        T = int(doc["T"])
        algos = [algo_from_dict(a, T) for a in doc["algorithms"]]
        return ExperimentConfig(
            N=int(inst["N"]), K=int(inst["K"]), d=int(inst["d"]), L=int(inst["L"]), T=T,
            seeds=parse_seeds(doc.get("seeds", [0])), algorithms=algos,
            output=str(doc.get("output", "results")), timing=bool(doc.get("timing", False)),
            decimate=doc.get("decimate"), workers=int(doc.get("workers", 1)),
            run_seed=int(doc.get("run_seed", 0)),
        )
    except KeyError as exc:
        raise ConfigError(f"config missing field {exc}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return config_from_dict(doc)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    algos = []
    for a in cfg.algorithms:
        entry = {k: v for k, v in asdict(a).items() if k in _ALGO_FIELDS and v is not None}
        if a.mle is not None:
            entry["mle"] = asdict(a.mle)
        algos.append(entry)
    return {"instance": {"N": cfg.N, "K": cfg.K, "d": cfg.d, "L": cfg.L}, "T": cfg.T,
            "seeds": list(cfg.seeds), "algorithms": algos, "output": cfg.output,
            "timing": cfg.timing, "decimate": cfg.decimate, "workers": cfg.workers,
            "run_seed": cfg.run_seed}


# Constants calibrated on seeds 100-109 of the small setting (see README).
CALIBRATED = {
    "bsmb": {"algorithm": "bsmb", "M": 3, "C1": 5e-5, "C3_warm": 1e-6},
    "bsmb_plus": {"algorithm": "bsmb_plus", "M": 3, "C3": 0.01, "zeta_scale": 0.002},
    "baseline": {"algorithm": "baseline", "C4": 1.0},
    "bsmb_alpha": {"algorithm": "bsmb_alpha", "M": 3, "C1": 5e-5, "C3_warm": 1e-6},
}

PRESETS = {
    "small": {
        "instance": {"N": 3, "K": 2, "d": 5, "L": 2}, "T": 5000, "seeds": "0..9",
        "algorithms": [CALIBRATED[a] for a in ("bsmb", "bsmb_plus", "baseline", "bsmb_alpha")],
        "output": "results/small",
    },
    "runtime": {
        "instance": {"N": 7, "K": 4, "d": 5, "L": 3}, "T": 2000, "seeds": "0..2",
        "algorithms": [CALIBRATED["bsmb"], CALIBRATED["baseline"]],
        "output": "results/runtime", "timing": True,
    },
}


def preset(name: str, **overrides) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    doc = json.loads(json.dumps(PRESETS[name]))
    doc.update(overrides)
    return config_from_dict(doc)


# ---------------------------------------------------------------- running

def recorded_rounds(T: int, k: int) -> np.ndarray:
    """Rounds k, 2k, ... plus T itself: ceil(T / k) rounds in total."""
    rounds = np.arange(k, T + 1, k)
    if rounds.size == 0 or rounds[-1] != T:
        rounds = np.append(rounds, T)
    return rounds


def trace_rows(trace: RunTrace, seed: int, k: int, name: str | None = None) -> list[SummaryRow]:
    rounds = recorded_rounds(trace.T, k)
    reg = trace.cum_regret
    sec = trace.cum_seconds
    calls = trace.opt_calls
    name = name or trace.algorithm
    return [SummaryRow(name, seed, int(t), float(reg[t - 1]), float(sec[t - 1]), int(calls[t - 1]))
            for t in rounds]


@dataclass
class CellResult:
    algorithm: str
    seed: int
    rows: list[SummaryRow] = field(default_factory=list)
    error: str | None = None
    trace: RunTrace | None = None


def run_cell(cfg: ExperimentConfig, algo: AlgoConfig, seed: int, keep_trace: bool = False) -> CellResult:
    try:
        inst = generate_instance(cfg.N, cfg.K, cfg.d, cfg.L, seed)
        trace = run(Environment(inst, cfg.run_seed), algo)
        rows = trace_rows(trace, seed, cfg.decimation, algo.name)
        return CellResult(algo.name, seed, rows, None, trace if keep_trace else None)
    except Exception as exc:  # a failing cell must not take down the experiment
        msg = f"{type(exc).__name__}: {exc}"
        return CellResult(algo.name, seed, [], msg + "\n" + traceback.format_exc(limit=3))


def _run_cell_args(args):
    return run_cell(*args)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    rows: list[SummaryRow]
    summary: dict
    failures: list[tuple[str, int, str]]
    traces: dict = field(default_factory=dict)


def summarize(rows: list[SummaryRow]) -> dict:
    """Per algorithm: recorded rounds and mean/stderr of cumulative regret across seeds."""
    out = {}
    for algo in sorted({r.algorithm for r in rows}):
        sub = [r for r in rows if r.algorithm == algo]
        seeds = sorted({r.seed for r in sub})
        rounds = sorted({r.round for r in sub})
        reg = np.full((len(seeds), len(rounds)), np.nan)
        sec = np.full_like(reg, np.nan)
        si = {s: i for i, s in enumerate(seeds)}
        ri = {t: j for j, t in enumerate(rounds)}
        for r in sub:
            reg[si[r.seed], ri[r.round]] = r.cum_regret
            sec[si[r.seed], ri[r.round]] = r.cum_seconds
        n = len(seeds)
        stderr = np.nanstd(reg, axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros(len(rounds))
        out[algo] = {"seeds": seeds, "rounds": rounds,
                     "mean_regret": np.nanmean(reg, axis=0).tolist(),
                     "stderr_regret": stderr.tolist(),
                     "mean_seconds": np.nanmean(sec, axis=0).tolist()}
    return out


def run_experiment(cfg: ExperimentConfig, keep_traces: bool = False,
                   progress=None) -> ExperimentResult:
    """Runs every (algorithm, seed) cell; failures are recorded, not raised."""
    cells = [(cfg, algo, seed, keep_traces) for algo in cfg.algorithms for seed in cfg.seeds]
    workers = 1 if cfg.timing else cfg.workers
    results: list[CellResult] = []
    if workers == 1:
        for args in cells:
            res = _run_cell_args(args)
            results.append(res)
            if progress:
                progress(res)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for res in pool.map(_run_cell_args, cells):
                results.append(res)
                if progress:
                    progress(res)
    rows = sorted((r for res in results for r in res.rows),
                  key=lambda r: (r.algorithm, r.seed, r.round))
    failures = [(res.algorithm, res.seed, res.error) for res in results if res.error]
    traces = {(res.algorithm, res.seed): res.trace for res in results if res.trace is not None}
    return ExperimentResult(cfg, rows, summarize(rows), failures, traces)


# ---------------------------------------------------------------- output

def emit_csv(rows, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in rows:
            w.writerow([r.algorithm, r.seed, r.round, repr(r.cum_regret), repr(r.cum_seconds),
                        r.opt_calls])


def read_csv(path) -> list[SummaryRow]:
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != CSV_HEADER:
            raise ValueError(f"unexpected CSV header {header}")
        return [SummaryRow(a, int(s), int(t), float(c), float(sec), int(o))
                for a, s, t, c, sec, o in reader]


def emit_plot(rows, path) -> None:
    """Two panels: mean cumulative regret (+- stderr) and mean cumulative runtime."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    summary = summarize(list(rows))
    with matplotlib.rc_context({"svg.hashsalt": "smbandit", "svg.fonttype": "path"}):
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
        for algo, s in summary.items():
            t = np.array(s["rounds"])
            m = np.array(s["mean_regret"])
            e = np.array(s["stderr_regret"])
            ax1.plot(t, m, label=algo)
            ax1.fill_between(t, m - e, m + e, alpha=0.2)
            ax2.plot(t, s["mean_seconds"], label=algo)
        ax1.set_xlabel("round")
        ax1.set_ylabel("cumulative regret")
        ax2.set_xlabel("round")
        ax2.set_ylabel("cumulative wall-clock (s)")
        if summary:
            ax1.legend()
            ax2.set_yscale("symlog", linthresh=1e-3)
        fig.tight_layout()
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)


def write_outputs(result: ExperimentResult, out_dir) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"csv": out / "results.csv", "plot": out / "regret.svg",
             "summary": out / "summary.json"}
    emit_csv(result.rows, paths["csv"])
    emit_plot(result.rows, paths["plot"])
    doc = {"config": config_to_dict(result.config), "summary": result.summary,
           "failures": [{"algorithm": a, "seed": s, "error": e} for a, s, e in result.failures]}
    paths["summary"].write_text(json.dumps(doc, indent=2))
    return paths
