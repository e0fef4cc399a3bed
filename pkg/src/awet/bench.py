"""Experiment harness: seeded runs, metrics files, ablations, curves and the paired test.

Layout written by :func:`run_experiment` under ``out_dir/tag``::

    seed_<k>/metrics.csv    evaluation rows (byte-reproducible)
    seed_<k>/timing.csv     wall-clock seconds per evaluation row
    seed_<k>/losses.csv     one row per online update (optional)
    seed_<k>/manifest.json  everything needed to regenerate metrics.csv
    seed_<k>/*.bin          final actor and critic checkpoints
    summary.csv             per-seed finals plus mean and population std

Wall-clock time lives in ``timing.csv`` so that ``metrics.csv`` stays
identical between two runs of the same configuration.
"""

from __future__ import annotations

import configparser
import csv
import dataclasses
import hashlib
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from awet import nnet
from awet.demos import ExpertBuffer, annotate_mc_returns, generate_demos, load_demos
from awet.envs import make
from awet.errors import AlignmentError, AwetError, RejectedInputError, UndefinedTestError
from awet.trainer import AwetConfig, LossReport, Trainer, evaluate, td3_baseline_config

METRICS_COLUMNS = ("episode", "mean_return", "success_rate", "successes", "eval_episodes", "discards", "a_a_mean")
VARIANTS = ("AWET", "no_AA", "no_ET", "no_AA_no_ET", "no_clip")
# Gate against whole expert trajectories instead of equal-length prefixes.
EXTRA_VARIANTS = ("ET_full_expert", "c_l_0.1", "c_l_0.5", "c_l_0.9")
DEMO_COUNTS = (20, 40, 60, 80, 100)
EXACT_WILCOXON_MAX_N = 20


# -- configuration -----------------------------------------------------------------


@dataclass
class RunConfig:
    task: str
    awet: AwetConfig = field(default_factory=AwetConfig)
    n_demos: int = 100
    n_seeds: int = 1
    eval_every: int = 20
    eval_episodes: int = 100
    out_dir: str = "runs"
    tag: str = "AWET"
    first_seed: int = 0
    # Extra integers mixed into every RNG stream; ablation cells get distinct values.
    cell: tuple[int, ...] = ()
    # Plain TD3/DDPG from scratch: no demos, no offline stage, no expert terms.
    baseline: bool = False
    demo_file: str | None = None
    record_losses: bool = True
    save_checkpoints: bool = True

    def __post_init__(self):
        self.cell = tuple(int(v) for v in self.cell)
        if isinstance(self.awet, dict):
            self.awet = AwetConfig(**self.awet)
        if self.n_seeds < 1:
            raise RejectedInputError("n_seeds must be >= 1")
        if self.eval_episodes < 1:
            raise RejectedInputError("eval_episodes must be >= 1")
        if self.eval_every < 1:
            raise RejectedInputError("eval_every must be >= 1")
        if self.n_demos < 0:
            raise RejectedInputError("n_demos must be >= 0")
        make(self.task)  # unknown task names fail here

    @property
    def seeds(self) -> list[int]:
        return list(range(self.first_seed, self.first_seed + self.n_seeds))

    def effective_awet(self) -> AwetConfig:
        return td3_baseline_config(self.awet) if self.baseline else self.awet

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["awet"]["hidden_sizes"] = list(self.awet.hidden_sizes)
        d["cell"] = list(self.cell)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        d["awet"] = AwetConfig(**d.get("awet", {}))
        return cls(**d)


def _parse_value(raw: str, default, key: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(int(p) for p in raw.replace(",", " ").split())
    except ValueError:
        raise RejectedInputError(f"bad value for {key}: {raw!r}") from None
    if default is None and raw.lower() in ("", "none"):
        return None
    return raw


def _section_kwargs(section, defaults: dict, where: str) -> dict:
    out = {}
    for key, raw in section.items():
        if key not in defaults:
            raise RejectedInputError(f"unknown key {key!r} in [{where}]")
        out[key] = _parse_value(raw, defaults[key], f"{where}.{key}")
    return out


def parse_run_config(text: str) -> RunConfig:
    """Parse ``[run]`` and ``[awet]`` sections of ``key = value`` lines."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise RejectedInputError(f"unreadable config: {exc}") from None
    extra = set(cp.sections()) - {"run", "awet"}
    if extra:
        raise RejectedInputError(f"unknown config sections: {sorted(extra)}")
    if not cp.has_section("run") or "task" not in cp["run"]:
        raise RejectedInputError("config needs a [run] section with a task")
    run_defaults = {f.name: _field_default(f) for f in dataclasses.fields(RunConfig) if f.name != "awet"}
    run_defaults["task"] = ""
    awet_defaults = {f.name: _field_default(f) for f in dataclasses.fields(AwetConfig)}
    run_kw = _section_kwargs(cp["run"], run_defaults, "run")
    awet_kw = _section_kwargs(cp["awet"], awet_defaults, "awet") if cp.has_section("awet") else {}
    return RunConfig(awet=AwetConfig(**awet_kw), **run_kw)


def _field_default(f: dataclasses.Field):
    if f.default is not dataclasses.MISSING:
        return f.default
    if f.default_factory is not dataclasses.MISSING:
        return f.default_factory()
    return None


def load_run_config(path: str | Path) -> RunConfig:
    return parse_run_config(Path(path).read_text())


def format_run_config(config: RunConfig) -> str:
    def fmt(v):
        if isinstance(v, tuple):
            return ", ".join(str(x) for x in v)
        return "none" if v is None else str(v)

    lines = ["[run]"]
    for f in dataclasses.fields(RunConfig):
        if f.name != "awet":
            lines.append(f"{f.name} = {fmt(getattr(config, f.name))}")
    lines.append("")
    lines.append("[awet]")
    for f in dataclasses.fields(AwetConfig):
        lines.append(f"{f.name} = {fmt(getattr(config.awet, f.name))}")
    return "\n".join(lines) + "\n"


def apply_variant(config: RunConfig, variant: str) -> RunConfig:
    """Return a copy of ``config`` with one ablation switched on."""
    flags = {
        "AWET": {},
        "no_AA": {"use_advantage_weight": False},
        "no_ET": {"use_early_termination": False},
        "no_AA_no_ET": {"use_advantage_weight": False, "use_early_termination": False},
        "no_clip": {"use_loss_clip": False},
        "ET_full_expert": {"dtw_mode": "full_expert"},
    }
    key = {v.lower(): v for v in flags}.get(variant.lower())
    if key is not None:
        return dataclasses.replace(config, awet=dataclasses.replace(config.awet, **flags[key]), tag=key)
    if variant.startswith("demos_"):
        try:
            n = int(variant[len("demos_"):])
        except ValueError:
            n = -1
        if n >= 2:
            return dataclasses.replace(config, n_demos=n, tag=variant)
    if variant.startswith("c_l_"):
        try:
            c_l = float(variant[len("c_l_"):])
        except ValueError:
            c_l = -1.0
        if 0.0 <= c_l <= 1.0:
            return dataclasses.replace(config, awet=dataclasses.replace(config.awet, c_l=c_l), tag=variant)
    raise RejectedInputError(f"unknown variant {variant!r}")


# -- one seed ---------------------------------------------------------------------


@dataclass
class MetricsRecord:
    episode: int
    mean_return: float
    success_rate: float
    successes: int
    eval_episodes: int
    discards: int
    wall_seconds: float
    a_a_mean: float

    def __post_init__(self):
        if self.success_rate != self.successes / self.eval_episodes:
            raise RejectedInputError("success_rate must equal successes / eval_episodes")

    def as_row(self) -> list:
        return [self.episode, self.mean_return, self.success_rate, self.successes,
                self.eval_episodes, self.discards, self.a_a_mean]


@dataclass
class SeedResult:
    seed: int
    status: str  # "ok" or "failed"
    records: list[MetricsRecord]
    error: str = ""
    dataset_digest: str = ""
    stream_ids: tuple[str, ...] = ()

    @property
    def final(self) -> MetricsRecord | None:
        return self.records[-1] if self.records else None


def eval_seeds(seed: int, n: int) -> list[int]:
    """Fixed evaluation episodes for a seed, drawn apart from every training stream."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xE7A1]))
    return [int(v) for v in rng.integers(2**31 - 1, size=n)]


def load_expert(config: RunConfig, seed: int) -> ExpertBuffer | None:
    if config.baseline:
        return None
    gamma = config.awet.gamma
    if config.demo_file:
        trajs, _ = load_demos(config.demo_file, make(config.task))
        if config.n_demos:
            trajs = trajs[: config.n_demos]
    else:
        # Seeded by the run seed alone, so every ablation cell of a seed sees the same demos.
        trajs = generate_demos(config.task, config.n_demos, seed)
    return ExpertBuffer(annotate_mc_returns(trajs, gamma))


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_rows(path: Path, header: Sequence[str], columns: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _seed_dir(config: RunConfig, seed: int) -> Path:
    return Path(config.out_dir) / config.tag / f"seed_{seed}"


def run_seed(config: RunConfig, seed: int) -> SeedResult:
    """Generate demos, pre-train, fine-tune and evaluate one seed; write its files."""
    out = _seed_dir(config, seed)
    out.mkdir(parents=True, exist_ok=True)
    task = make(config.task)
    cfg = config.effective_awet()
    evs = eval_seeds(seed, config.eval_episodes)
    records: list[MetricsRecord] = []
    timings: list[tuple[int, float]] = []
    t0 = time.perf_counter()
    digest = ""
    ids: tuple[str, ...] = ()
    loss_fh = None
    try:
        expert = load_expert(config, seed)
        digest = expert.digest() if expert is not None else "none"
        sink = None
        if config.record_losses:
            loss_fh = open(out / "losses.csv", "w", newline="")
            writer = csv.writer(loss_fh)
            writer.writerow(LossReport.FIELDS)
            sink = lambda rep: writer.writerow(rep.as_row())  # noqa: E731
        trainer = Trainer(task, cfg, expert, seed=seed, cell=config.cell, report_sink=sink)
        ids = tuple(trainer.stream_ids)
        trainer.run_offline_stage()

        def record(episode: int) -> None:
            ev = evaluate(task, trainer.nets, evs)
            wall = time.perf_counter() - t0
            records.append(MetricsRecord(episode, ev.mean_return, ev.success_rate, ev.successes, ev.episodes,
                                         trainer.stats.discarded, wall, trainer.stats.a_a_mean))
            timings.append((episode, wall))

        record(0)
        n = cfg.online_episodes
        if n:
            trainer.start_online()
            for ep in range(1, n + 1):
                trainer.run_episode()
                if ep % config.eval_every == 0 or ep == n:
                    record(ep)
        if config.save_checkpoints:
            nnet.save_params(out / "actor.bin", trainer.nets.actor)
            nnet.save_params(out / "critic1.bin", trainer.nets.critic1)
            nnet.save_params(out / "critic2.bin", trainer.nets.critic2)
        status, error = "ok", ""
    except AwetError as exc:
        status, error = "failed", f"{type(exc).__name__}: {exc}"
    finally:
        if loss_fh is not None:
            loss_fh.close()
    header = [
        "awet metrics v1",
        f"task={config.task} tag={config.tag} seed={seed} n_demos={config.n_demos} "
        f"eval_episodes={config.eval_episodes} eval_every={config.eval_every}",
        "success_rate = successes / eval_episodes; episode 0 is the evaluation right after the offline stage",
        "evaluation uses the deterministic policy (no exploration noise)",
    ]
    if status != "ok":
        header.append(f"status=failed error={error}")
    _write_rows(out / "metrics.csv", header, METRICS_COLUMNS, (r.as_row() for r in records))
    _write_rows(out / "timing.csv", ["wall-clock seconds since the seed started"], ("episode", "wall_seconds"), timings)
    metrics_sha = hashlib.sha256((out / "metrics.csv").read_bytes()).hexdigest()
    manifest = {
        "format": "awet-manifest v1",
        "run": config.to_dict(),
        "seed": seed,
        "stream_ids": list(ids),
        "dataset_digest": digest,
        "metrics_sha256": metrics_sha,
        "status": status,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return SeedResult(seed, status, records, error, digest, ids)


def _run_seed_job(args) -> SeedResult:
    return run_seed(*args)


def replay_manifest(path: str | Path, out_dir: str | Path) -> Path:
    """Re-run the seed described by a manifest into ``out_dir``; return the new metrics path."""
    m = json.loads(Path(path).read_text())
    config = RunConfig.from_dict(m["run"])
    config = dataclasses.replace(config, out_dir=str(out_dir))
    run_seed(config, int(m["seed"]))
    return _seed_dir(config, int(m["seed"])) / "metrics.csv"


# -- summaries -------------------------------------------------------------------------


@dataclass
class Summary:
    config: RunConfig
    seeds: list[SeedResult]

    def _finals(self, attr: str) -> np.ndarray:
        return np.array([getattr(s.final, attr) for s in self.seeds if s.status == "ok"], dtype=np.float64)

    @property
    def n_failed(self) -> int:
        return sum(s.status != "ok" for s in self.seeds)

    def stat(self, attr: str) -> tuple[float, float]:
        """Mean and population std over completed seeds of the final record's ``attr``."""
        v = self._finals(attr)
        if v.size == 0:
            return float("nan"), float("nan")
        return float(np.mean(v)), float(np.std(v))

    def final_success(self) -> list[float]:
        return [s.final.success_rate if s.status == "ok" else float("nan") for s in self.seeds]


SUMMARY_COLUMNS = ("seed", "status", "final_episode", "final_success_rate", "final_mean_return", "discards",
                   "a_a_mean", "error")


def write_summary(summary: Summary, path: Path) -> None:
    cfg = summary.config
    rows = []
    for s in summary.seeds:
        f = s.final
        if f is None:
            rows.append([s.seed, s.status, "", "", "", "", "", s.error])
        else:
            rows.append([s.seed, s.status, f.episode, f.success_rate, f.mean_return, f.discards, f.a_a_mean, s.error])
    for label, idx in (("mean", 0), ("std", 1)):
        rows.append([label, "", "", summary.stat("success_rate")[idx], summary.stat("mean_return")[idx],
                     summary.stat("discards")[idx], summary.stat("a_a_mean")[idx], ""])
    header = [
        "awet summary v1",
        f"task={cfg.task} tag={cfg.tag} seeds={cfg.n_seeds} failed={summary.n_failed}",
        "std is the population standard deviation (ddof=0) over completed seeds",
    ]
    _write_rows(path, header, SUMMARY_COLUMNS, rows)


def run_experiment(config: RunConfig, jobs: int = 1) -> Summary:
    """Run every seed of ``config`` and write per-seed files plus ``summary.csv``.

    A seed that raises one of the package errors is recorded as failed and
    the remaining seeds still run. With ``jobs > 1`` seeds run in separate
    processes; this function stays the only writer of the summary.
    """
    args = [(config, s) for s in config.seeds]
    if jobs > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_seed_job, args))
    else:
        results = [run_seed(*a) for a in args]
    summary = Summary(config, results)
    path = Path(config.out_dir) / config.tag
    path.mkdir(parents=True, exist_ok=True)
    write_summary(summary, path / "summary.csv")
    return summary


# -- ablation matrix -----------------------------------------------------------------


@dataclass
class AblationResult:
    summaries: dict[str, Summary]
    aliases: dict[str, str]
    rows: list[list]
    table: list[list]

    def success_mean(self, variant: str) -> float:
        return self.summaries[self.aliases.get(variant, variant)].stat("success_rate")[0]


ABLATION_ROW_COLUMNS = ("variant", "n_demos", "seed", "status", "final_success_rate", "final_mean_return",
                        "discards", "a_a_mean")
ABLATION_TABLE_COLUMNS = ("variant", "n_demos", "n_seeds", "n_failed", "success_mean", "success_std",
                          "return_mean", "return_std", "discards_mean", "a_a_mean", "same_run_as")


def ablation_cells(base: RunConfig, variants: Sequence[str] = VARIANTS,
                   demo_counts: Sequence[int] = DEMO_COUNTS) -> tuple[list[tuple[str, RunConfig]], dict[str, str]]:
    """Expand the matrix into ``(name, config)`` cells, each with its own RNG cell id.

    A demo count equal to ``base.n_demos`` is the AWET cell itself when AWET
    is in the matrix; it is reported under both names instead of being run twice.
    """
    cells: list[tuple[str, RunConfig]] = []
    aliases: dict[str, str] = {}
    names = list(variants)
    for n in demo_counts:
        name = f"demos_{n}"
        if n == base.n_demos and "AWET" in variants:
            aliases[name] = "AWET"
        else:
            names.append(name)
    for idx, name in enumerate(names):
        cfg = apply_variant(base, name)
        cells.append((name, dataclasses.replace(cfg, cell=(*base.cell, idx + 1))))
    return cells, aliases


def ablation_matrix(base: RunConfig, variants: Sequence[str] = VARIANTS,
                    demo_counts: Sequence[int] = DEMO_COUNTS, jobs: int = 1) -> AblationResult:
    """Run every ablation cell and write ``ablation.csv`` and ``ablation_summary.csv``.

    ``streams.log`` lists the RNG stream ids used by each cell and seed; a
    repeated id across cells raises :class:`RejectedInputError`.
    """
    cells, aliases = ablation_cells(base, variants, demo_counts)
    out = Path(base.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summaries: dict[str, Summary] = {}
    seen: dict[str, str] = {}
    log_lines = []
    for name, cfg in cells:
        summary = run_experiment(cfg, jobs=jobs)
        summaries[name] = summary
        for s in summary.seeds:
            for sid in s.stream_ids:
                if sid in seen:
                    raise RejectedInputError(f"stream {sid} shared by cells {seen[sid]} and {name}")
                seen[sid] = name
                log_lines.append(f"{name} {s.seed} {sid}")
    (out / "streams.log").write_text("\n".join(log_lines) + "\n")

    def n_demos(name):
        return summaries[name].config.n_demos

    ordered = [name for name, _ in cells] + list(aliases)
    rows, table = [], []
    for name in ordered:
        src = aliases.get(name, name)
        summ = summaries[src]
        for s in summ.seeds:
            f = s.final
            rows.append([name, n_demos(src), s.seed, s.status,
                         f.success_rate if f else float("nan"), f.mean_return if f else float("nan"),
                         f.discards if f else 0, f.a_a_mean if f else float("nan")])
        sm, ss = summ.stat("success_rate")
        rm, rs = summ.stat("mean_return")
        table.append([name, n_demos(src), len(summ.seeds), summ.n_failed, sm, ss, rm, rs,
                      summ.stat("discards")[0], summ.stat("a_a_mean")[0], src if src != name else ""])
    header = [f"awet ablation v1 task={base.task} seeds={base.n_seeds}",
              "final = last evaluation row; std is the population std over completed seeds"]
    _write_rows(out / "ablation.csv", header, ABLATION_ROW_COLUMNS, rows)
    _write_rows(out / "ablation_summary.csv", header, ABLATION_TABLE_COLUMNS, table)
    return AblationResult(summaries, aliases, rows, table)


# -- Wilcoxon signed-rank --------------------------------------------------------------


@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float  # W+, the rank sum of positive differences
    n: int  # pairs left after dropping zero differences
    p_greater: float  # one-sided, alternative a > b
    p_less: float  # one-sided, alternative a < b
    p_two_sided: float
    method: str  # "exact" or "normal"


def _midranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(len(x))
    sx = x[order]
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2 + 1
        i = j + 1
    return ranks


def _exact_upper_tail(ranks: np.ndarray, w: float) -> float:
    """P(W+ >= w) over all 2**n equally likely sign assignments.

    Ranks are doubled so mid-ranks become integers; the sign assignments are
    then counted by convolution, one rank at a time.
    """
    r2 = np.rint(2 * ranks).astype(np.int64)
    counts = np.zeros(int(r2.sum()) + 1)
    counts[0] = 1.0
    for r in r2:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: len(counts) - r]
        counts = counts + shifted
    target = int(math.ceil(2 * w - 1e-9))
    return float(counts[target:].sum() / 2.0 ** len(r2))


def wilcoxon_signed_rank(a, b, method: str = "auto") -> WilcoxonResult:
    """Paired Wilcoxon signed-rank test of ``a`` against ``b``.

    Zero differences are dropped, absolute differences get mid-ranks on ties.
    ``method='auto'`` enumerates the null distribution exactly for up to 20
    pairs and otherwise uses the normal approximation with the tie-corrected
    variance and a 0.5 continuity correction.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise RejectedInputError(f"paired samples must be 1-D of equal length, got {a.shape} and {b.shape}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise RejectedInputError("paired samples must be finite")
    d = a - b
    d = d[d != 0]
    n = len(d)
    if n == 0:
        raise UndefinedTestError("all paired differences are zero")
    ranks = _midranks(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    if method == "auto":
        method = "exact" if n <= EXACT_WILCOXON_MAX_N else "normal"
    if method == "exact":
        p_greater = _exact_upper_tail(ranks, w_plus)
        p_less = _exact_upper_tail(ranks, w_minus)
    elif method == "normal":
        mean = n * (n + 1) / 4.0
        _, tie_counts = np.unique(ranks, return_counts=True)
        var = n * (n + 1) * (2 * n + 1) / 24.0 - float(np.sum(tie_counts**3 - tie_counts)) / 48.0
        sd = math.sqrt(var)
        p_greater = 0.5 * math.erfc(((w_plus - mean - 0.5) / sd) / math.sqrt(2.0))
        p_less = 0.5 * math.erfc(((mean - w_plus - 0.5) / sd) / math.sqrt(2.0))
    else:
        raise RejectedInputError(f"unknown method {method!r}")
    p_two = min(1.0, 2.0 * min(p_greater, p_less))
    return WilcoxonResult(w_plus, n, p_greater, p_less, p_two, method)


# -- curves ------------------------------------------------------------------------------


def read_metrics(path: str | Path) -> tuple[dict, np.ndarray]:
    """Return ``(header_fields, rows)`` of a metrics file; rows follow METRICS_COLUMNS."""
    meta: dict[str, str] = {}
    rows = []
    columns = None
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            for tok in line[1:].split():
                if "=" in tok:
                    k, v = tok.split("=", 1)
                    meta.setdefault(k, v)
            continue
        if not line.strip():
            continue
        if columns is None:
            columns = tuple(line.split(","))
            if columns != METRICS_COLUMNS:
                raise RejectedInputError(f"{path}: unexpected columns {columns}")
            continue
        rows.append([float(v) for v in line.split(",")])
    if columns is None:
        raise RejectedInputError(f"{path}: not a metrics file")
    return meta, np.array(rows, dtype=np.float64).reshape(-1, len(METRICS_COLUMNS))


CURVE_COLUMNS = ("variant", "episode", "n_seeds", "success_mean", "success_std", "return_mean", "return_std")


def emit_curves(metrics_files: Sequence[str | Path], out_path: str | Path) -> list[list]:
    """Mean and population std over seeds at every online evaluation point, per variant.

    The episode-0 row (the post-offline evaluation) is left out, so a run
    with ``online_episodes`` divisible by ``eval_every`` yields
    ``online_episodes / eval_every`` rows per variant.
    """
    files = [Path(p) for p in metrics_files]
    if not files:
        raise RejectedInputError("emit_curves needs at least one metrics file")
    groups: dict[str, list[np.ndarray]] = {}
    grids: dict[str, tuple] = {}
    for f in files:
        meta, rows = read_metrics(f)
        variant = meta.get("tag", "run")
        rows = rows[rows[:, 0] > 0]
        grid = tuple(rows[:, 0].astype(int))
        if variant in grids and grids[variant] != grid:
            raise AlignmentError(f"{f}: evaluation episodes {grid} differ from {grids[variant]} for {variant}")
        grids.setdefault(variant, grid)
        groups.setdefault(variant, []).append(rows)
    out = []
    for variant, runs in groups.items():
        stack = np.stack(runs)  # seeds x points x columns
        succ, ret = stack[:, :, 2], stack[:, :, 1]
        for k, ep in enumerate(grids[variant]):
            out.append([variant, ep, len(runs), float(succ[:, k].mean()), float(succ[:, k].std()),
                        float(ret[:, k].mean()), float(ret[:, k].std())])
    _write_rows(Path(out_path), ["awet curves v1", "std is the population standard deviation (ddof=0) over seeds"],
                CURVE_COLUMNS, out)
    return out


def find_metrics(root: str | Path) -> list[Path]:
    return sorted(Path(root).rglob("metrics.csv"))


def read_samples(path: str | Path) -> np.ndarray:
    """Numbers for the paired test: a summary file's per-seed final success, or a plain list."""
    text = Path(path).read_text().splitlines()
    body = [ln for ln in text if ln.strip() and not ln.startswith("#")]
    if body and body[0].split(",")[:2] == ["seed", "status"]:
        cols = body[0].split(",")
        k = cols.index("final_success_rate")
        vals = []
        for ln in body[1:]:
            parts = ln.split(",")
            if parts[0] in ("mean", "std"):
                continue
            vals.append(float(parts[k]) if parts[k] else float("nan"))
        return np.array(vals)
    try:
        return np.array([float(v) for ln in body for v in ln.replace(",", " ").split()])
    except ValueError:
        raise RejectedInputError(f"{path}: expected numbers or a summary.csv") from None

