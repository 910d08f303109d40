"""End-to-end run: labels -> tiles -> segmentation stand-in -> stitch -> count -> evaluate.

Configuration is a flat ``key=value`` text file; see :data:`CONFIG_KEYS`.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import BerryCountError, ConfigError
from .filters import FilterConfig, FilterResult, format_stage_report, run_pipeline
from .instancer import Component, connected_components, format_components
from .labelgen import extract_dots, synthesize_labels
from .metrics import (EvalReport, detection_metrics, emit_correlation_plot, format_count_records,
                      format_report, iou, per_patch_counts, r_squared)
from .raster import (DotSet, InstanceMap, SemanticMask, read_dots, read_instance_map,
                     read_semantic_mask, write_semantic_mask)
from .synth import PRESETS, CorruptionSpec, corrupt, generate_scene, preset
from .tiler import extract, plan_grid, stitch

log = logging.getLogger(__name__)

SOURCE_KEYS = ("preset", "scene_dir", "instances", "pred_mask")


@dataclass(frozen=True)
class PipelineConfig:
    # input source; when none is given the vsp preset with seed 42 is used
    preset: str | None = None
    seed: int = 42
    scene_dir: str | None = None
    instances: str | None = None
    pred_mask: str | None = None
    ref_mask: str | None = None
    dots: str | None = None
    edge_width: int = 2
    patch: tuple[int, int] = (432, 256)
    overlap: float = 0.5
    filters: FilterConfig = field(default_factory=FilterConfig)
    eval_patch: tuple[int, int] = (432, 256)
    corruption: CorruptionSpec | None = None
    r2_mode: str = "ols"
    out_dir: str = "pipeline_out"

    @property
    def source(self) -> str:
        given = [k for k in SOURCE_KEYS if getattr(self, k) is not None]
        return given[0] if given else "preset"


def _parse_bool(v: str) -> bool:
    v = v.strip().lower()
    if v in ("1", "true", "on", "yes"):
        return True
    if v in ("0", "false", "off", "no"):
        return False
    raise ValueError(f"expected on/off, got {v!r}")


def parse_dims(v: str) -> tuple[int, int]:
    w, sep, h = v.strip().lower().partition("x")
    if not sep:
        raise ValueError(f"expected WIDTHxHEIGHT, got {v!r}")
    return int(w), int(h)


def _positive_dims(v: str) -> tuple[int, int]:
    w, h = parse_dims(v)
    if w < 1 or h < 1:
        raise ConfigError(f"dimensions must be positive, got {v.strip()}")
    return w, h


def _path(v: str) -> str:
    v = v.strip()
    if not v:
        raise ValueError("empty path")
    return v


def _in_range(lo, hi, conv):
    def check(v: str):
        x = conv(v)
        if not lo <= x <= hi:
            raise ConfigError(f"value {x} outside [{lo}, {hi}]")
        return x
    return check


def _preset_name(v: str) -> str:
    v = v.strip()
    if v not in PRESETS:
        raise ConfigError(f"unknown preset {v!r}; choose from {sorted(PRESETS)}")
    return v


def _overlap(v: str) -> float:
    x = float(v)
    if not 0 <= x < 1:
        raise ConfigError(f"overlap {x} outside [0, 1)")
    return x


CONFIG_KEYS = {
    "preset": _preset_name,
    "seed": int,
    "scene_dir": _path,
    "instances": _path,
    "pred_mask": _path,
    "ref_mask": _path,
    "dots": _path,
    "out_dir": _path,
    "edge_width": _in_range(1, 64, int),
    "patch": _positive_dims,
    "overlap": _overlap,
    "eval_patch": _positive_dims,
    "axis_ratio_min": _in_range(0.0, 1.0, float),
    "area_ratio_min": _in_range(0.0, 1.0, float),
    "enclosure_min": _in_range(0.0, 1.0, float),
    "filter_axis": _parse_bool,
    "filter_area": _parse_bool,
    "filter_edge": _parse_bool,
    "corrupt": _parse_bool,
    "merge_rate": _in_range(0.0, 1.0, float),
    "drop_below": _in_range(0.0, 1e6, float),
    "crescent_noise": _in_range(0, 100000, int),
    "dilate_edge": _in_range(0, 64, int),
    "corrupt_seed": int,
    "r2_mode": lambda v: {"ols": "ols", "identity": "identity"}[v.strip()],
}

_FILTER_KEYS = {"axis_ratio_min": "axis_ratio_min", "area_ratio_min": "area_ratio_min",
                "enclosure_min": "enclosure_min", "filter_axis": "use_axis",
                "filter_area": "use_area", "filter_edge": "use_edge"}
_CORRUPT_KEYS = {"merge_rate": "merge_rate", "drop_below": "drop_below",
                 "crescent_noise": "crescent_noise", "dilate_edge": "dilate_edge", "corrupt_seed": "seed"}


def parse_config(text: str) -> PipelineConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, val = line.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        if key not in CONFIG_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            values[key] = CONFIG_KEYS[key](val)
        except ConfigError as e:
            raise ConfigError(f"line {lineno}: {key}: {e}") from None
        except (KeyError, ValueError):
            raise ConfigError(f"line {lineno}: cannot parse {key}={val.strip()!r}") from None

    sources = [k for k in SOURCE_KEYS if k in values]
    if len(sources) > 1:
        raise ConfigError(f"conflicting input sources: {', '.join(sources)}")
    if "pred_mask" in values and "dots" not in values:
        raise ConfigError("pred_mask needs a dots file")

    filt = FilterConfig(**{_FILTER_KEYS[k]: v for k, v in values.items() if k in _FILTER_KEYS})
    corr_kw = {_CORRUPT_KEYS[k]: v for k, v in values.items() if k in _CORRUPT_KEYS}
    want_corrupt = values.pop("corrupt", bool(corr_kw))
    corruption = CorruptionSpec(**corr_kw) if want_corrupt else None
    rest = {k: v for k, v in values.items() if k not in _FILTER_KEYS and k not in _CORRUPT_KEYS}
    cfg = PipelineConfig(filters=filt, corruption=corruption, **rest)

    paths = [p for p in (cfg.scene_dir, cfg.instances, cfg.pred_mask, cfg.ref_mask, cfg.dots, cfg.out_dir) if p]
    resolved = [str(Path(p).resolve()) for p in paths]
    if len(set(resolved)) != len(resolved):
        raise ConfigError("configured paths must be distinct")
    return cfg


# --- running -------------------------------------------------------------------

class StageError(BerryCountError):
    """A pipeline stage failed; ``stage`` names it for the caller."""

    def __init__(self, stage: str, message: str, config_error: bool = False):
        super().__init__(message)
        self.stage = stage
        self.config_error = config_error


class _stage:
    def __init__(self, name: str):
        self.name = name

    def __enter__(self):
        log.debug("stage %s", self.name)

    def __exit__(self, etype, exc, tb):
        if exc is None or isinstance(exc, StageError):
            return False
        if isinstance(exc, (BerryCountError, ValueError, OSError, KeyError)):
            raise StageError(self.name, str(exc), isinstance(exc, ConfigError)) from exc
        return False


@dataclass
class PipelineResult:
    report: EvalReport
    mask: SemanticMask
    components: list[Component]
    filtered: FilterResult
    files: dict[str, Path]


def evaluate_mask(mask: SemanticMask, dots: DotSet, ref: SemanticMask | None, filters: FilterConfig,
                  eval_patch: tuple[int, int], r2_mode: str = "ols", threads: int = 1):
    """Components, filters and metrics for one predicted mask."""
    with _stage("components"):
        comps = connected_components(mask, threads=threads)
    with _stage("filter"):
        filtered = run_pipeline(comps, filters)
    with _stage("evaluate"):
        dots.check_bounds(mask.width, mask.height)
        ious = None
        if ref is not None:
            ious = iou(mask, ref)
        det = detection_metrics(filtered.kept, dots)
        records = per_patch_counts(filtered.kept, dots, eval_patch[0], eval_patch[1], mask.width, mask.height)
        notes = []
        try:
            fit = r_squared(records, r2_mode)
        except ValueError as e:
            fit = None
            notes.append(str(e))
    return comps, filtered, EvalReport(det, records, fit, ious, notes)


def write_outputs(out_dir: Path, comps, filtered, report: EvalReport) -> dict[str, Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    files = {
        "report": out_dir / "report.csv",
        "stages": out_dir / "stages.csv",
        "components": out_dir / "components.csv",
        "counts": out_dir / "counts.csv",
    }
    files["report"].write_text(format_report(report), newline="\n")
    files["stages"].write_text(format_stage_report(filtered), newline="\n")
    files["components"].write_text(format_components(comps), newline="\n")
    if report.fit is not None:
        svg, csv_text = emit_correlation_plot(report.records, report.fit)
        files["plot"] = out_dir / "plot.svg"
        files["plot"].write_text(svg, encoding="utf-8", newline="\n")
    else:
        csv_text = format_count_records(report.records)
    files["counts"].write_text(csv_text, newline="\n")
    return files


def run(cfg: PipelineConfig, threads: int = 1, write: bool = True) -> PipelineResult:
    threads = max(1, int(threads))
    inst: InstanceMap | None = None
    ref: SemanticMask | None = None
    dots: DotSet | None = None

    with _stage("input"):
        src = cfg.source
        if src == "preset":
            scene = generate_scene(preset(cfg.preset or "vsp", seed=cfg.seed), render=False)
            inst, dots = scene.instances, scene.dots
        elif src == "scene_dir":
            d = Path(cfg.scene_dir)
            inst = read_instance_map(d / "instances.pgm")
            dots = read_dots(cfg.dots or d / "dots.csv")
        elif src == "instances":
            inst = read_instance_map(cfg.instances)
            dots = read_dots(cfg.dots) if cfg.dots else None
        else:
            prediction = read_semantic_mask(cfg.pred_mask)
            dots = read_dots(cfg.dots)
            if cfg.ref_mask:
                ref = read_semantic_mask(cfg.ref_mask)

    if inst is not None:
        with _stage("labelgen"):
            ref = synthesize_labels(inst, cfg.edge_width)
            if dots is None:
                dots = extract_dots(inst)
        with _stage("segment"):
            prediction = ref
            if cfg.corruption is not None:
                prediction = corrupt(ref, inst, cfg.corruption)

    with _stage("tile"):
        grid = plan_grid(prediction.width, prediction.height, cfg.patch[0], cfg.patch[1], cfg.overlap)
        # per-patch work is independent; results are placed by index so any thread count agrees
        if threads > 1:
            with ThreadPoolExecutor(threads) as ex:
                patches = list(ex.map(lambda o: extract(prediction, replace(grid, origins=(o,)))[0], grid.origins))
        else:
            patches = extract(prediction, grid)
    with _stage("stitch"):
        mask = stitch(patches, grid, prediction.width, prediction.height)

    with _stage("evaluate"):
        if ref is not None and ref.shape != mask.shape:
            raise ValueError(f"reference mask {ref.width}x{ref.height} does not match prediction "
                             f"{mask.width}x{mask.height}")
    comps, filtered, report = evaluate_mask(mask, dots, ref, cfg.filters, cfg.eval_patch, cfg.r2_mode, threads)

    files: dict[str, Path] = {}
    if write:
        with _stage("write"):
            out = Path(cfg.out_dir)
            files = write_outputs(out, comps, filtered, report)
            files["mask"] = out / "mask.pgm"
            write_semantic_mask(files["mask"], mask)
    return PipelineResult(report, mask, comps, filtered, files)
