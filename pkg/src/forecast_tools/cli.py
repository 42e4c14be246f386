from __future__ import annotations

import json
import logging
import math
import tomllib
from pathlib import Path
from typing import Any, NoReturn, Optional

import typer
from rich import box
from rich.console import Console
from rich.table import Table

from .benchmark import (
    CompareConfig,
    PairSyntaxError,
    RunConfig,
    load_score_table,
    run_benchmark,
    run_compare,
    run_gen,
)
from .core import DomainError
from .data import GeneratorConfig
from .evaluation import SeasonSummary
from .logging import configure_logging
from .registry import DEFAULT_ALGOS, UnknownAggregatorError, parse_algos

console = Console()
app = typer.Typer(help="专家概率预测聚合与评测命令行工具")

logger = logging.getLogger(__name__)


def _split_list(text: Optional[str]) -> list[str]:
    if not text:
        return []
    return [item.strip() for item in text.split(",") if item.strip()]


def _load_config(path: Path) -> dict[str, dict[str, Any]]:
    """Read ``--config``: one table per command, keys mirroring flag names."""
    try:
        if path.suffix.lower() == ".toml":
            raw = tomllib.loads(path.read_text(encoding="utf-8"))
        else:
            raw = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, tomllib.TOMLDecodeError, json.JSONDecodeError) as exc:
        raise typer.BadParameter(f"无法读取配置文件 {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise typer.BadParameter(f"配置文件 {path} 顶层必须是表")

    default_map: dict[str, dict[str, Any]] = {}
    for command, values in raw.items():
        if not isinstance(values, dict):
            raise typer.BadParameter(f"配置文件中 [{command}] 必须是表")
        default_map[command] = {
            key.replace("-", "_"): (
                ",".join(map(str, value)) if isinstance(value, list) else value
            )
            for key, value in values.items()
        }
    return default_map


@app.callback()
def main(
    ctx: typer.Context,
    config: Optional[Path] = typer.Option(
        None,
        "--config",
        exists=True,
        dir_okay=False,
        readable=True,
        help="TOML/JSON 配置文件，按命令名分表，键名与参数名一致",
    ),
) -> None:
    if config is not None:
        ctx.default_map = _load_config(config)


def _generator_config(
    experts: int,
    games: int,
    seasons: int,
    sigma_lo: float,
    sigma_hi: float,
    missing: float,
    law: str,
    seed: int,
) -> GeneratorConfig:
    try:
        return GeneratorConfig(
            n_experts=experts,
            n_games=games,
            sigma_lo=sigma_lo,
            sigma_hi=sigma_hi,
            missing_rate=missing,
            seed=seed,
            n_seasons=seasons,
            law=law,  # type: ignore[arg-type]
        )
    except DomainError as exc:
        raise typer.BadParameter(str(exc)) from exc


def _fail(message: str, exc: Exception) -> NoReturn:
    logging.getLogger("forecast_tools").exception(message)
    typer.secho(f"{message}: {exc}", err=True, fg=typer.colors.RED)
    raise typer.Exit(code=1) from exc


@app.command("gen")
def gen(
    experts: int = typer.Option(..., "--experts", help="专家数量"),
    games: int = typer.Option(..., "--games", help="每个赛季的比赛数量"),
    seasons: int = typer.Option(1, "--seasons", help="赛季数量"),
    sigma_lo: float = typer.Option(0.05, "--sigma-lo", help="专家噪声标准差下界"),
    sigma_hi: float = typer.Option(0.4, "--sigma-hi", help="专家噪声标准差上界"),
    missing: float = typer.Option(0.0, "--missing", help="每条预测缺失的概率，需 < 1"),
    law: str = typer.Option("uniform", "--law", help="真实概率分布：uniform 或 beta:<a>:<b>"),
    seed: int = typer.Option(0, "--seed", help="随机种子"),
    out: Path = typer.Option(
        ...,
        "--out",
        file_okay=False,
        dir_okay=True,
        writable=True,
        help="数据集输出目录",
    ),
    log_level: Optional[str] = typer.Option("INFO", help="日志级别"),
) -> None:
    """按高斯专家模型生成合成数据集。"""

    configure_logging(log_level)
    config = _generator_config(experts, games, seasons, sigma_lo, sigma_hi, missing, law, seed)
    flags = {
        "experts": experts,
        "games": games,
        "seasons": seasons,
        "sigma_lo": sigma_lo,
        "sigma_hi": sigma_hi,
        "missing": missing,
        "law": str(config.law),
    }
    logger.debug("执行 gen，%s", flags)

    try:
        result = run_gen(config, out, flags)
    except Exception as exc:
        _fail("生成失败", exc)

    table = Table(title="生成结果", expand=True)
    table.add_column("指标", justify="left")
    table.add_column("数量", justify="right")
    table.add_row("比赛", str(result.n_games))
    table.add_row("预测", str(result.n_predictions))
    table.add_row("文件", str(len(result.files)))
    console.print(table)


def _format_score(value: float) -> str:
    return "-" if math.isnan(value) else f"{value:.2f}"


def _render_summaries(rows: list[SeasonSummary]) -> None:
    table = Table(title="评估结果", expand=True)
    table.add_column("聚合器", justify="left")
    table.add_column("赛季", justify="left")
    table.add_column("总分", justify="right")
    table.add_column("0-1 错误率", justify="right")
    table.add_column("排名", justify="right")
    table.add_column("平均对数损失", justify="right")
    table.add_column("回退", justify="right")
    for row in rows:
        table.add_row(
            row.aggregator,
            row.season,
            _format_score(row.total_score),
            f"{row.zero_one_error:.3f}",
            str(row.rank_vs_experts),
            "-" if math.isnan(row.mean_log_loss) else f"{row.mean_log_loss:.4f}",
            str(row.fallbacks),
        )
    console.print(table)
    console.print("[dim]0-1 判定：p ≥ 0.5 记为预测事件发生[/dim]")


@app.command("run")
def run(
    data: Optional[Path] = typer.Option(
        None,
        "--data",
        exists=True,
        file_okay=False,
        dir_okay=True,
        readable=True,
        help="数据集目录（包含 predictions.csv 与 outcomes.csv）",
    ),
    algos: str = typer.Option(
        ",".join(DEFAULT_ALGOS),
        "--algos",
        help="逗号分隔的聚合器列表，例如 average,variance-top:20,experts",
    ),
    out: Path = typer.Option(
        ...,
        "--out",
        file_okay=False,
        dir_okay=True,
        writable=True,
        help="结果输出目录",
    ),
    period: Optional[str] = typer.Option(
        None,
        "--period",
        help="逗号分隔的赛季，只保留在所有这些赛季都有预测的专家",
    ),
    top_expert: bool = typer.Option(
        True,
        "--top-expert/--no-top-expert",
        help="汇总中是否加入每赛季最佳专家一行",
    ),
    workers: int = typer.Option(1, "--workers", min=1, help="并行评估的线程数"),
    experts: Optional[int] = typer.Option(None, "--experts", help="未指定 --data 时生成的专家数量"),
    games: Optional[int] = typer.Option(None, "--games", help="未指定 --data 时每个赛季的比赛数量"),
    seasons: int = typer.Option(1, "--seasons", help="生成的赛季数量"),
    sigma_lo: float = typer.Option(0.05, "--sigma-lo", help="专家噪声标准差下界"),
    sigma_hi: float = typer.Option(0.4, "--sigma-hi", help="专家噪声标准差上界"),
    missing: float = typer.Option(0.0, "--missing", help="每条预测缺失的概率，需 < 1"),
    law: str = typer.Option("uniform", "--law", help="真实概率分布：uniform 或 beta:<a>:<b>"),
    seed: int = typer.Option(0, "--seed", help="随机种子"),
    log_level: Optional[str] = typer.Option("INFO", help="日志级别"),
) -> None:
    """在线评测各聚合器，写出 results.csv、summary.csv 与 experts.csv。"""

    configure_logging(log_level)
    try:
        specifiers = parse_algos(algos)
    except UnknownAggregatorError as exc:
        raise typer.BadParameter(str(exc), param_hint="--algos") from exc

    flags: dict[str, Any] = {"algos": specifiers, "period": _split_list(period)}
    generator: Optional[GeneratorConfig] = None
    if data is None:
        if experts is None or games is None:
            raise typer.BadParameter("未指定 --data 时必须提供 --experts 与 --games")
        generator = _generator_config(
            experts, games, seasons, sigma_lo, sigma_hi, missing, law, seed
        )
        flags.update(
            experts=experts,
            games=games,
            seasons=seasons,
            sigma_lo=sigma_lo,
            sigma_hi=sigma_hi,
            missing=missing,
            law=str(generator.law),
        )
    else:
        flags["data"] = data
    logger.debug("执行 run，%s", flags)

    config = RunConfig(
        out_dir=out,
        data_dir=data,
        generator=generator,
        algos=specifiers,
        seasons=_split_list(period),
        include_top_expert=top_expert,
        workers=workers,
        seed=seed if generator is not None else None,
        flags=flags,
    )

    try:
        result = run_benchmark(config)
    except Exception as exc:
        _fail("评估失败", exc)

    _render_summaries(result.summaries)


@app.command("compare")
def compare(
    results: Path = typer.Option(
        ...,
        "--results",
        exists=True,
        dir_okay=False,
        readable=True,
        help="run 命令输出的 results.csv",
    ),
    pairs: str = typer.Option(..., "--pairs", help="逗号分隔的比较对，例如 variance:average"),
    out: Optional[Path] = typer.Option(
        None, "--out", dir_okay=False, help="signtest.csv 路径，默认与 results.csv 同目录"
    ),
    log_level: Optional[str] = typer.Option("INFO", help="日志级别"),
) -> None:
    """对聚合器两两做单侧符号检验。"""

    configure_logging(log_level)
    items = _split_list(pairs)
    if not items:
        raise typer.BadParameter("比较对列表为空", param_hint="--pairs")
    for item in items:
        if ":" not in item:
            raise typer.BadParameter(f"比较对格式应为 A:B: {item!r}", param_hint="--pairs")

    config = CompareConfig(
        results_path=results,
        pairs=items,
        out_path=out,
        flags={"results": results, "pairs": items},
    )
    try:
        result = run_compare(config)
    except (PairSyntaxError, UnknownAggregatorError) as exc:
        raise typer.BadParameter(str(exc), param_hint="--pairs") from exc
    except Exception as exc:
        _fail("比较失败", exc)

    table = Table(title="符号检验", expand=True)
    for column in ("A", "B", "胜", "负", "平", "p 值"):
        table.add_column(column, justify="left" if column in ("A", "B") else "right")
    for test in result.tests:
        table.add_row(
            test.aggregator_a,
            test.aggregator_b,
            str(test.wins),
            str(test.losses),
            str(test.ties),
            f"{test.p_value:.4g}",
        )
    console.print(table)


@app.command("report")
def report(
    summary: Path = typer.Option(..., "--summary", help="run 命令输出的 summary.csv"),
    log_level: Optional[str] = typer.Option("INFO", help="日志级别"),
) -> None:
    """按 聚合器 × 赛季 打印总分表。"""

    configure_logging(log_level)
    try:
        score_table = load_score_table(summary)
    except Exception as exc:
        _fail("读取汇总失败", exc)

    table = Table(box=box.SIMPLE_HEAD, show_edge=False)
    table.add_column("aggregator", justify="left", no_wrap=True)
    for season in score_table.seasons:
        table.add_column(season, justify="right", no_wrap=True)
    for name, totals in score_table.rows:
        table.add_row(name, *("-" if v is None else f"{v:.2f}" for v in totals))
    console.print(table)


__all__ = ["app"]
