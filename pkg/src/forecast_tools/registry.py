"""Aggregator specifiers: ``name`` or ``name:param:param`` strings used on the
command line and as report labels."""

from __future__ import annotations

from collections.abc import Callable, Sequence
from dataclasses import dataclass
from typing import Any

from .aggregators import (
    Aggregator,
    AverageAggregator,
    ConservativeAggregator,
    ConstantAggregator,
    ReplayAggregator,
    TopKAverageAggregator,
)
from .core import Dataset
from .evaluation import below_zero_average
from .expgrad import ExpGradAggregator, ExpGradConfig
from .experts import ExpertsAggregator, ExpertsConfig, MissingPolicy
from .market import MarketAggregator, MarketConfig
from .variance import VarianceAggregator

DEFAULT_ALGOS = (
    "average",
    "average-top:30",
    "variance",
    "variance-top:20",
    "experts-fill",
    "experts",
    "expgrad",
    "market",
)

_USAGE = {
    "average": "average",
    "average-top": "average-top:<k>",
    "constant": "constant:<c>",
    "conservative": "conservative[:<c>]",
    "variance": "variance",
    "variance-top": "variance-top:<k>",
    "experts": "experts[:<beta>:<vovk|piecewise|identity>:<power|expneg|linear>:<fill|relative>]",
    "experts-fill": "experts-fill",
    "expgrad": "expgrad[:<passes>:<lr>]",
    "market": "market[:single-update]",
    "below-zero": "below-zero",
}


class UnknownAggregatorError(ValueError):
    """Raised when a specifier names no known aggregator or has bad parameters."""


def valid_names() -> list[str]:
    return list(_USAGE.values())


@dataclass(frozen=True, slots=True)
class AggregatorSpec:
    text: str
    name: str
    params: tuple[str, ...]

    @classmethod
    def parse(cls, text: str) -> AggregatorSpec:
        cleaned = text.strip()
        name, *params = cleaned.split(":")
        if name not in _USAGE:
            raise UnknownAggregatorError(
                f"未知的聚合器: {text!r}，可选: {', '.join(valid_names())}"
            )
        return cls(text=cleaned, name=name, params=tuple(params))


def _expect(spec: AggregatorSpec, low: int, high: int) -> None:
    if not low <= len(spec.params) <= high:
        raise UnknownAggregatorError(
            f"聚合器 {spec.text!r} 参数个数错误，用法: {_USAGE[spec.name]}"
        )


def _number(spec: AggregatorSpec, value: str, kind: Callable[[str], Any]) -> Any:
    try:
        return kind(value)
    except ValueError:
        raise UnknownAggregatorError(
            f"聚合器 {spec.text!r} 的参数 {value!r} 无法解析，用法: {_USAGE[spec.name]}"
        ) from None


def _build(spec: AggregatorSpec, dataset: Dataset | None) -> Aggregator:
    name, params = spec.name, spec.params
    if name == "average":
        _expect(spec, 0, 0)
        return AverageAggregator()
    if name == "average-top":
        _expect(spec, 1, 1)
        return TopKAverageAggregator(_number(spec, params[0], int))
    if name == "constant":
        _expect(spec, 1, 1)
        return ConstantAggregator(_number(spec, params[0], float))
    if name == "conservative":
        _expect(spec, 0, 1)
        return ConservativeAggregator(*(_number(spec, p, float) for p in params))
    if name == "variance":
        _expect(spec, 0, 0)
        return VarianceAggregator()
    if name == "variance-top":
        _expect(spec, 1, 1)
        return VarianceAggregator(top_k=_number(spec, params[0], int))
    if name == "experts":
        _expect(spec, 0, 4)
        fields = ("beta", "prediction_fn", "update_fn", "missing_policy")
        values: dict[str, object] = dict(zip(fields, params))
        if "beta" in values:
            values["beta"] = _number(spec, str(values["beta"]), float)
        return ExpertsAggregator(ExpertsConfig(**values))  # type: ignore[arg-type]
    if name == "experts-fill":
        _expect(spec, 0, 0)
        return ExpertsAggregator(ExpertsConfig(missing_policy=MissingPolicy.FILL_HALF))
    if name == "expgrad":
        _expect(spec, 0, 2)
        config = ExpGradConfig()
        if params:
            config = ExpGradConfig(
                passes=_number(spec, params[0], int),
                learning_rate=_number(spec, params[1], float) if len(params) > 1 else 0.1,
            )
        return ExpGradAggregator(config)
    if name == "market":
        _expect(spec, 0, 1)
        if params and params[0] != "single-update":
            raise UnknownAggregatorError(f"聚合器 {spec.text!r}，用法: {_USAGE[name]}")
        return MarketAggregator(MarketConfig(single_update=bool(params)))
    # below-zero
    _expect(spec, 0, 0)
    if dataset is None:
        return ReplayAggregator(spec.text, [])
    return ReplayAggregator(spec.text, below_zero_average(dataset))


def build_aggregator(text: str, dataset: Dataset | None = None) -> Aggregator:
    """Instantiate the aggregator a specifier names.

    ``below-zero`` replays hindsight predictions and needs ``dataset``.
    """
    spec = AggregatorSpec.parse(text)
    try:
        return _build(spec, dataset)
    except UnknownAggregatorError:
        raise
    except ValueError as exc:
        raise UnknownAggregatorError(f"聚合器 {spec.text!r} 参数无效: {exc}") from exc


def build_aggregators(
    specifiers: Sequence[str], dataset: Dataset | None = None
) -> dict[str, Aggregator]:
    """Aggregators keyed by their specifier text, in the given order."""
    built: dict[str, Aggregator] = {}
    for text in specifiers:
        spec = AggregatorSpec.parse(text)
        if spec.text in built:
            raise UnknownAggregatorError(f"聚合器重复: {spec.text!r}")
        built[spec.text] = build_aggregator(spec.text, dataset)
    return built


def parse_algos(text: str) -> list[str]:
    """Split and validate a comma-separated specifier list."""
    specifiers = [item.strip() for item in text.split(",") if item.strip()]
    if not specifiers:
        raise UnknownAggregatorError("聚合器列表为空")
    build_aggregators(specifiers)
    return specifiers


__all__ = [
    "AggregatorSpec",
    "DEFAULT_ALGOS",
    "UnknownAggregatorError",
    "build_aggregator",
    "build_aggregators",
    "parse_algos",
    "valid_names",
]
