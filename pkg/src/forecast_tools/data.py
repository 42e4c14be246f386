"""Synthetic Gaussian-expert datasets and CSV ingestion/serialization."""

from __future__ import annotations

import logging
import math
from collections.abc import Iterator
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd

from .artifacts import write_csv_atomic
from .core import Dataset, DomainError, Game, PredictionRow, season_sort_key

logger = logging.getLogger(__name__)

PREDICTIONS_FILE = "predictions.csv"
OUTCOMES_FILE = "outcomes.csv"
TRUTHS_FILE = "truths.csv"
SIGMAS_FILE = "sigmas.csv"

PREDICTION_COLUMNS = ["season", "game_id", "expert_id", "prob"]
OUTCOME_COLUMNS = ["season", "game_id", "outcome"]
TRUTH_COLUMNS = ["season", "game_id", "true_prob"]
SIGMA_COLUMNS = ["expert_id", "sigma"]

FLOAT_FORMAT = "%.6f"
DECIMALS = 6


def to_stored(value: float) -> float:
    """Round exactly as the CSV writer does, so reloads compare equal."""
    return float(f"{value:.{DECIMALS}f}")


_STREAM_GAMES = 0
_STREAM_EXPERT = 1
_STREAM_REMASK = 2


class DatasetFormatError(ValueError):
    """Raised for malformed dataset files; ``line`` is 1-based, header is line 1."""

    def __init__(self, message: str, *, path: Path | None = None, line: int | None = None) -> None:
        location = ""
        if path is not None:
            location = f"{path}"
            if line is not None:
                location += f":{line}"
            location += ": "
        super().__init__(f"{location}{message}")
        self.path = path
        self.line = line


# ---------------------------------------------------------------------------
# generator
# ---------------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class TrueProbLaw:
    kind: str = "uniform"
    a: float = 1.0
    b: float = 1.0

    @classmethod
    def parse(cls, text: str) -> TrueProbLaw:
        """``uniform`` or ``beta:<a>:<b>``."""
        parts = text.strip().lower().split(":")
        if parts == ["uniform"]:
            return cls()
        if len(parts) == 3 and parts[0] == "beta":
            try:
                a, b = float(parts[1]), float(parts[2])
            except ValueError:
                raise DomainError(f"无法解析的 beta 参数: {text!r}") from None
            if not (a > 0 and b > 0):
                raise DomainError(f"beta 参数必须为正: {text!r}")
            return cls(kind="beta", a=a, b=b)
        raise DomainError(f"未知的真实概率分布: {text!r}，可选 uniform 或 beta:<a>:<b>")

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.kind == "beta":
            return rng.beta(self.a, self.b, size)
        return rng.uniform(0.0, 1.0, size)

    def __str__(self) -> str:
        return "uniform" if self.kind == "uniform" else f"beta:{self.a:g}:{self.b:g}"


@dataclass(slots=True)
class GeneratorConfig:
    n_experts: int
    n_games: int
    sigma_lo: float
    sigma_hi: float
    missing_rate: float = 0.0
    seed: int = 0
    n_seasons: int = 1
    law: TrueProbLaw = field(default_factory=TrueProbLaw)
    first_season: int = 2000

    def __post_init__(self) -> None:
        if isinstance(self.law, str):
            self.law = TrueProbLaw.parse(self.law)
        if self.n_experts < 1 or self.n_games < 1 or self.n_seasons < 1:
            raise DomainError("专家数、比赛数与赛季数都必须 ≥ 1")
        if not 0.0 < self.sigma_lo <= self.sigma_hi:
            raise DomainError(
                f"sigma 范围必须满足 0 < lo ≤ hi: [{self.sigma_lo}, {self.sigma_hi}]"
            )
        if not 0.0 <= self.missing_rate < 1.0:
            raise DomainError(f"missing_rate 必须位于 [0,1): {self.missing_rate}")
        if not 0 <= self.seed < 2**64:
            raise DomainError(f"seed 必须是 64 位无符号整数: {self.seed}")


@dataclass(frozen=True, slots=True)
class Truths:
    """Hidden generator parameters: per-expert sigma (true probabilities live on
    each :class:`Game`)."""

    sigmas: dict[str, float]


def _stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


def expert_ids(n_experts: int) -> list[str]:
    width = max(3, len(str(n_experts - 1)))
    return [f"e{i:0{width}d}" for i in range(n_experts)]


def generate(config: GeneratorConfig) -> tuple[Dataset, Truths]:
    """Draw a dataset under the Gaussian-expert model.

    Games come from one stream and each expert from its own, so adding
    experts leaves outcomes and the other experts untouched.
    """
    total = config.n_games * config.n_seasons
    roster = expert_ids(config.n_experts)

    games_rng = _stream(config.seed, _STREAM_GAMES)
    true_probs = np.array([to_stored(p) for p in config.law.sample(games_rng, total)])
    outcomes = (games_rng.random(total) < true_probs).astype(int)

    sigmas = np.empty(config.n_experts)
    advice = np.empty((total, config.n_experts))
    missing = np.zeros((total, config.n_experts), dtype=bool)
    for i in range(config.n_experts):
        rng = _stream(config.seed, _STREAM_EXPERT, i)
        sigmas[i] = to_stored(float(rng.uniform(config.sigma_lo, config.sigma_hi)))
        noise = rng.normal(0.0, sigmas[i], total)
        advice[:, i] = [to_stored(p) for p in np.clip(true_probs + noise, 0.0, 1.0)]
        missing[:, i] = rng.random(total) < config.missing_rate

    remask_rng = _stream(config.seed, _STREAM_REMASK)
    remasked = 0
    for t in np.flatnonzero(missing.all(axis=1)):
        while missing[t].all():
            missing[t] = remask_rng.random(config.n_experts) < config.missing_rate
        remasked += 1
    if remasked:
        logger.warning("%s 场比赛所有专家均被遮蔽，已重新抽样遮蔽", remasked)

    games: list[Game] = []
    rows: list[PredictionRow] = []
    for t in range(total):
        season = str(config.first_season + t // config.n_games)
        games.append(
            Game(
                season=season,
                game_id=t % config.n_games + 1,
                outcome=int(outcomes[t]),
                true_prob=float(true_probs[t]),
            )
        )
        rows.append(
            PredictionRow(
                {roster[i]: float(advice[t, i]) for i in np.flatnonzero(~missing[t])}
            )
        )

    dataset = Dataset(roster=tuple(roster), games=tuple(games), predictions=tuple(rows))
    logger.info(
        "生成数据集：%s 位专家，%s 个赛季共 %s 场比赛，seed=%s",
        config.n_experts,
        config.n_seasons,
        total,
        config.seed,
    )
    return dataset, Truths(sigmas=dict(zip(roster, map(float, sigmas))))


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def save_dataset(
    dataset: Dataset, directory: Path, truths: Optional[Truths] = None
) -> list[Path]:
    """Write the dataset CSVs; truths.csv only when every game carries a true
    probability, sigmas.csv only when ``truths`` is given."""
    directory.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    predictions = pd.DataFrame(
        [
            (game.season, game.game_id, expert_id, prob)
            for game, row in zip(dataset.games, dataset.predictions)
            for expert_id, prob in row.items()
        ],
        columns=PREDICTION_COLUMNS,
    )
    written.append(write_csv_atomic(predictions, directory / PREDICTIONS_FILE, FLOAT_FORMAT))

    outcomes = pd.DataFrame(
        [(game.season, game.game_id, game.outcome) for game in dataset.games],
        columns=OUTCOME_COLUMNS,
    )
    written.append(write_csv_atomic(outcomes, directory / OUTCOMES_FILE, FLOAT_FORMAT))

    if dataset.games and all(game.true_prob is not None for game in dataset.games):
        truth_frame = pd.DataFrame(
            [(game.season, game.game_id, game.true_prob) for game in dataset.games],
            columns=TRUTH_COLUMNS,
        )
        written.append(write_csv_atomic(truth_frame, directory / TRUTHS_FILE, FLOAT_FORMAT))

    if truths is not None:
        sigma_frame = pd.DataFrame(sorted(truths.sigmas.items()), columns=SIGMA_COLUMNS)
        written.append(write_csv_atomic(sigma_frame, directory / SIGMAS_FILE, FLOAT_FORMAT))

    logger.info("数据集已写入 %s（%s 个文件）", directory, len(written))
    return written


def _read_table(path: Path, columns: list[str]) -> pd.DataFrame:
    if not path.is_file():
        raise FileNotFoundError(f"文件不存在: {path}")
    try:
        frame = pd.read_csv(
            path, dtype=str, keep_default_na=False, skip_blank_lines=False, encoding="utf-8"
        ).fillna("")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise DatasetFormatError(f"无法解析 CSV: {exc}", path=path) from exc
    if list(frame.columns) != columns:
        raise DatasetFormatError(
            f"表头应为 {','.join(columns)}，实际为 {','.join(map(str, frame.columns))}",
            path=path,
            line=1,
        )
    # blank lines are skipped but keep their place in the line count
    return frame[~(frame == "").all(axis=1)]


def _numbered(frame: pd.DataFrame) -> Iterator[tuple[int, tuple[str, ...]]]:
    """Rows with their line number in the file, the header being line 1."""
    for idx, *values in frame.itertuples(name=None):
        yield int(idx) + 2, tuple(values)


def _parse_int(text: str, what: str, path: Path, line: int) -> int:
    try:
        return int(text.strip())
    except ValueError:
        raise DatasetFormatError(f"{what} 不是整数: {text!r}", path=path, line=line) from None


def _parse_probability(text: str, what: str, path: Path, line: int) -> float:
    try:
        value = float(text.strip())
    except ValueError:
        raise DatasetFormatError(f"{what} 不是数字: {text!r}", path=path, line=line) from None
    if not math.isfinite(value) or not 0.0 <= value <= 1.0:
        raise DatasetFormatError(f"{what} 超出 [0,1]: {text!r}", path=path, line=line)
    return value


def _parse_token(text: str, what: str, path: Path, line: int) -> str:
    token = text.strip()
    if not token:
        raise DatasetFormatError(f"{what} 为空", path=path, line=line)
    return token


def load_dataset(
    predictions_path: Path, outcomes_path: Path, truths_path: Optional[Path] = None
) -> Dataset:
    outcome_frame = _read_table(outcomes_path, OUTCOME_COLUMNS)
    outcomes: dict[tuple[str, int], int] = {}
    for line, (season, game_id, outcome) in _numbered(outcome_frame):
        key = (
            _parse_token(season, "season", outcomes_path, line),
            _parse_int(game_id, "game_id", outcomes_path, line),
        )
        if key in outcomes:
            raise DatasetFormatError(f"重复的比赛 {key}", path=outcomes_path, line=line)
        if outcome.strip() not in ("0", "1"):
            raise DatasetFormatError(
                f"outcome 必须为 0 或 1: {outcome!r}", path=outcomes_path, line=line
            )
        outcomes[key] = int(outcome.strip())

    prediction_frame = _read_table(predictions_path, PREDICTION_COLUMNS)
    rows: dict[tuple[str, int], dict[str, float]] = {key: {} for key in outcomes}
    for line, (season, game_id, expert_id, prob) in _numbered(prediction_frame):
        key = (
            _parse_token(season, "season", predictions_path, line),
            _parse_int(game_id, "game_id", predictions_path, line),
        )
        expert = _parse_token(expert_id, "expert_id", predictions_path, line)
        if key not in rows:
            raise DatasetFormatError(f"预测引用了未知比赛 {key}", path=predictions_path, line=line)
        if expert in rows[key]:
            raise DatasetFormatError(
                f"重复的预测 {key + (expert,)}", path=predictions_path, line=line
            )
        rows[key][expert] = _parse_probability(prob, "prob", predictions_path, line)

    true_probs: dict[tuple[str, int], float] = {}
    if truths_path is not None:
        truth_frame = _read_table(truths_path, TRUTH_COLUMNS)
        for line, (season, game_id, true_prob) in _numbered(truth_frame):
            key = (
                _parse_token(season, "season", truths_path, line),
                _parse_int(game_id, "game_id", truths_path, line),
            )
            if key not in outcomes:
                raise DatasetFormatError(f"未知比赛 {key}", path=truths_path, line=line)
            true_probs[key] = _parse_probability(true_prob, "true_prob", truths_path, line)

    ordered = sorted(outcomes, key=lambda key: (season_sort_key(key[0]), key[1]))
    roster = sorted({expert for row in rows.values() for expert in row})
    dataset = Dataset(
        roster=tuple(roster),
        games=tuple(
            Game(
                season=key[0],
                game_id=key[1],
                outcome=outcomes[key],
                true_prob=true_probs.get(key),
            )
            for key in ordered
        ),
        predictions=tuple(PredictionRow(rows[key]) for key in ordered),
    )
    logger.info(
        "已加载数据集：%s 位专家，%s 场比赛，赛季 %s",
        len(dataset.roster),
        len(dataset),
        ",".join(dataset.seasons()),
    )
    return dataset.require_nonempty()


def load_sigmas(path: Path) -> Truths:
    frame = _read_table(path, SIGMA_COLUMNS)
    sigmas: dict[str, float] = {}
    for line, (expert_id, sigma) in _numbered(frame):
        try:
            sigmas[_parse_token(expert_id, "expert_id", path, line)] = float(sigma)
        except ValueError:
            raise DatasetFormatError(f"sigma 不是数字: {sigma!r}", path=path, line=line) from None
    return Truths(sigmas=sigmas)


def load_data_dir(directory: Path) -> tuple[Dataset, Optional[Truths]]:
    """Load every dataset file present in ``directory``."""
    truths_path = directory / TRUTHS_FILE
    sigmas_path = directory / SIGMAS_FILE
    dataset = load_dataset(
        directory / PREDICTIONS_FILE,
        directory / OUTCOMES_FILE,
        truths_path if truths_path.is_file() else None,
    )
    truths = load_sigmas(sigmas_path) if sigmas_path.is_file() else None
    return dataset, truths


__all__ = [
    "DatasetFormatError",
    "GeneratorConfig",
    "TrueProbLaw",
    "Truths",
    "expert_ids",
    "generate",
    "load_data_dir",
    "load_dataset",
    "load_sigmas",
    "save_dataset",
]
