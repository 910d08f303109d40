"""Three-stage geometric post-processing: Axis -> Area -> Edge.

Keep rules (defaults 0.3 / 0.3 / 0.4):

* Axis: a_min / a_maj > axis_ratio_min (strict)
* Area: area >= area_ratio_min * pi * r^2 with r = (a_min + a_maj) / 4
* Edge: enclosure >= enclosure_min
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Sequence

from .instancer import Component

STAGES = ("axis", "area", "edge")


@dataclass(frozen=True)
class FilterConfig:
    axis_ratio_min: float = 0.3
    area_ratio_min: float = 0.3
    enclosure_min: float = 0.4
    use_axis: bool = True
    use_area: bool = True
    use_edge: bool = True

    def __post_init__(self):
        for name in ("axis_ratio_min", "area_ratio_min", "enclosure_min"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")

    @classmethod
    def off(cls) -> "FilterConfig":
        return cls(use_axis=False, use_area=False, use_edge=False)

    def enabled(self, stage: str) -> bool:
        return getattr(self, f"use_{stage}")

    def threshold(self, stage: str) -> float:
        return {"axis": self.axis_ratio_min, "area": self.area_ratio_min, "edge": self.enclosure_min}[stage]


def keep_axis(c: Component, cfg: FilterConfig) -> bool:
    return c.a_min / c.a_maj > cfg.axis_ratio_min


def circle_area(c: Component) -> float:
    return math.pi * c.mean_radius**2


def keep_area(c: Component, cfg: FilterConfig) -> bool:
    return c.area >= cfg.area_ratio_min * circle_area(c)


def keep_edge(c: Component, cfg: FilterConfig) -> bool:
    return c.enclosure >= cfg.enclosure_min


_PREDICATES = {"axis": keep_axis, "area": keep_area, "edge": keep_edge}


def filter_axis(components: Sequence[Component], cfg: FilterConfig = FilterConfig()) -> list[Component]:
    return [c for c in components if keep_axis(c, cfg)]


def filter_area(components: Sequence[Component], cfg: FilterConfig = FilterConfig()) -> list[Component]:
    return [c for c in components if keep_area(c, cfg)]


def filter_edge(components: Sequence[Component], cfg: FilterConfig = FilterConfig()) -> list[Component]:
    return [c for c in components if keep_edge(c, cfg)]


@dataclass
class StageRecord:
    stage: str
    enabled: bool
    threshold: float
    n_in: int
    removed: int
    kept: list[Component] = field(repr=False, default_factory=list)


@dataclass
class FilterResult:
    kept: list[Component]
    stages: list[StageRecord]

    @property
    def removed(self) -> dict[str, int]:
        return {s.stage: s.removed for s in self.stages}


def run_pipeline(components: Sequence[Component], cfg: FilterConfig = FilterConfig()) -> FilterResult:
    cur = list(components)
    stages = []
    for name in STAGES:
        n_in = len(cur)
        if cfg.enabled(name):
            pred = _PREDICATES[name]
            cur = [c for c in cur if pred(c, cfg)]
        stages.append(StageRecord(name, cfg.enabled(name), cfg.threshold(name), n_in, n_in - len(cur), list(cur)))
    return FilterResult(cur, stages)


def format_stage_report(result: FilterResult) -> str:
    out = io.StringIO()
    out.write("stage,enabled,threshold,input,removed,kept\n")
    for s in result.stages:
        out.write(f"{s.stage},{int(s.enabled)},{s.threshold:.4f},{s.n_in},{s.removed},{s.n_in - s.removed}\n")
    return out.getvalue()
