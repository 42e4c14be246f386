from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import pandas as pd

from .artifacts import RunManifest, write_csv_atomic
from .data import GeneratorConfig, generate, load_data_dir, save_dataset
from .evaluation import (
    RESULT_COLUMNS,
    SUMMARY_COLUMNS,
    EvalReport,
    SeasonSummary,
    SignTestResult,
    multi_year_filter,
    run_online,
    sign_test,
    signtest_frame,
    summary_frame,
)
from .registry import DEFAULT_ALGOS, UnknownAggregatorError, build_aggregators

logger = logging.getLogger(__name__)

RESULTS_FILE = "results.csv"
SUMMARY_FILE = "summary.csv"
EXPERTS_FILE = "experts.csv"
SIGNTEST_FILE = "signtest.csv"


class PairSyntaxError(ValueError):
    """Raised for a comparison pair that is not ``A:B``."""


# ---------------------------------------------------------------------------
# gen
# ---------------------------------------------------------------------------


@dataclass(slots=True)
class GenResult:
    n_games: int
    n_predictions: int
    files: list[Path]


def run_gen(
    config: GeneratorConfig, out_dir: Path, flags: Optional[dict] = None
) -> GenResult:
    dataset, truths = generate(config)
    files = save_dataset(dataset, out_dir, truths)
    files.append(RunManifest("gen", seed=config.seed, flags=flags or {}).write(out_dir))
    return GenResult(
        n_games=len(dataset),
        n_predictions=sum(len(row) for row in dataset.predictions),
        files=files,
    )


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------


@dataclass(slots=True)
class RunConfig:
    """Runtime configuration for an evaluation run.

    Either ``data_dir`` or ``generator`` supplies the dataset.
    """

    out_dir: Path
    data_dir: Optional[Path] = None
    generator: Optional[GeneratorConfig] = None
    algos: Sequence[str] = DEFAULT_ALGOS
    seasons: Sequence[str] = ()
    include_top_expert: bool = True
    workers: int = 1
    seed: Optional[int] = None
    flags: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if (self.data_dir is None) == (self.generator is None):
            raise ValueError("必须且只能指定 data_dir 或 generator 之一")
        if self.workers < 1:
            raise ValueError(f"workers 必须 ≥ 1: {self.workers}")


@dataclass(slots=True)
class RunResult:
    report: EvalReport
    summaries: list[SeasonSummary]
    files: list[Path]


def run_benchmark(config: RunConfig) -> RunResult:
    """Entry point: load or generate the dataset, evaluate every aggregator
    online and write results.csv, summary.csv, experts.csv and run.json."""
    if config.data_dir is not None:
        dataset, _ = load_data_dir(config.data_dir)
    else:
        assert config.generator is not None
        dataset, _ = generate(config.generator)

    seasons = [str(season) for season in config.seasons]
    if seasons:
        dataset = multi_year_filter(dataset, seasons)

    aggregators = build_aggregators(list(config.algos), dataset)
    if "below-zero" in aggregators:
        logger.warning("below-zero 使用赛季结束后的得分（事后诊断），不是在线算法")
    report = run_online(dataset, aggregators, workers=config.workers)

    summaries = report.summaries(include_top_expert=config.include_top_expert)
    label: Optional[str] = None
    if len(seasons) > 1:
        label = f"{seasons[0]}-{seasons[-1]}"
        summaries.extend(report.period_summaries(label, config.include_top_expert))

    out_dir = config.out_dir
    files = [
        write_csv_atomic(report.results_frame(), out_dir / RESULTS_FILE),
        write_csv_atomic(summary_frame(summaries), out_dir / SUMMARY_FILE),
        write_csv_atomic(report.experts_frame(label), out_dir / EXPERTS_FILE),
        RunManifest("run", seed=config.seed, flags=config.flags).write(out_dir),
    ]
    logger.info("评估完成，结果写入 %s", out_dir)
    return RunResult(report=report, summaries=summaries, files=files)


# ---------------------------------------------------------------------------
# compare
# ---------------------------------------------------------------------------


@dataclass(slots=True)
class CompareConfig:
    results_path: Path
    pairs: Sequence[str]
    out_path: Optional[Path] = None
    flags: dict = field(default_factory=dict)

    @property
    def resolved_out(self) -> Path:
        return self.out_path or self.results_path.parent / SIGNTEST_FILE


@dataclass(slots=True)
class CompareResult:
    tests: list[SignTestResult]
    files: list[Path]


def load_results(path: Path) -> pd.DataFrame:
    if not path.is_file():
        raise FileNotFoundError(f"文件不存在: {path}")
    frame = pd.read_csv(path, dtype={"aggregator": str, "season": str})
    if list(frame.columns) != RESULT_COLUMNS:
        raise ValueError(f"{path} 的表头应为 {','.join(RESULT_COLUMNS)}")
    return frame


def resolve_pair(text: str, known: Sequence[str]) -> tuple[str, str]:
    """Split ``A:B`` at the colon where both sides are known aggregators.

    Specifiers may contain colons themselves, hence the search.
    """
    pair = text.strip()
    if ":" not in pair or pair.startswith(":") or pair.endswith(":"):
        raise PairSyntaxError(f"比较对格式应为 A:B: {text!r}")
    names = set(known)
    candidates = []
    parts = pair.split(":")
    for cut in range(1, len(parts)):
        a, b = ":".join(parts[:cut]), ":".join(parts[cut:])
        if a in names and b in names:
            candidates.append((a, b))
    if len(candidates) == 1:
        return candidates[0]
    if len(candidates) > 1:
        raise PairSyntaxError(f"比较对有歧义: {text!r}")
    raise UnknownAggregatorError(
        f"结果文件中不存在比较对 {text!r} 的聚合器，已有: {', '.join(known)}"
    )


def run_compare(config: CompareConfig) -> CompareResult:
    results = load_results(config.results_path)
    known = list(dict.fromkeys(results["aggregator"]))
    tests: list[SignTestResult] = []
    for text in config.pairs:
        a, b = resolve_pair(text, known)
        left = results[results["aggregator"] == a][["season", "game_id", "prob_score"]]
        right = results[results["aggregator"] == b][["season", "game_id", "prob_score"]]
        merged = left.merge(right, on=["season", "game_id"], suffixes=("_a", "_b"))
        if len(merged) != len(left) or len(merged) != len(right):
            raise ValueError(f"{a} 与 {b} 的比赛集合不一致")
        result = sign_test(
            merged["prob_score_a"].to_numpy(), merged["prob_score_b"].to_numpy(), (a, b)
        )
        logger.info(
            "%s vs %s：胜 %s 负 %s 平 %s，p=%.4g",
            a,
            b,
            result.wins,
            result.losses,
            result.ties,
            result.p_value,
        )
        tests.append(result)

    out = config.resolved_out
    files = [
        write_csv_atomic(signtest_frame(tests), out, float_format="%.6g"),
        RunManifest("compare", flags=config.flags).write(out.parent),
    ]
    return CompareResult(tests=tests, files=files)


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


@dataclass(slots=True)
class ScoreTable:
    seasons: list[str]
    rows: list[tuple[str, list[Optional[float]]]]


def load_score_table(path: Path) -> ScoreTable:
    """Aggregator x season totals from summary.csv, both in order of appearance."""
    if not path.is_file():
        raise FileNotFoundError(f"文件不存在: {path}")
    frame = pd.read_csv(path, dtype={"aggregator": str, "season": str})
    if list(frame.columns) != SUMMARY_COLUMNS:
        raise ValueError(f"{path} 的表头应为 {','.join(SUMMARY_COLUMNS)}")
    seasons = list(dict.fromkeys(frame["season"]))
    aggregators = list(dict.fromkeys(frame["aggregator"]))
    totals = {
        (row.aggregator, row.season): float(row.total_score)
        for row in frame.itertuples(index=False)
    }
    rows = [
        (name, [totals.get((name, season)) for season in seasons]) for name in aggregators
    ]
    return ScoreTable(seasons=seasons, rows=rows)


__all__ = [
    "CompareConfig",
    "CompareResult",
    "GenResult",
    "PairSyntaxError",
    "RunConfig",
    "RunResult",
    "ScoreTable",
    "load_results",
    "load_score_table",
    "resolve_pair",
    "run_benchmark",
    "run_compare",
    "run_gen",
]
