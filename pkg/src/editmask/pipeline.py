"""Manifest-driven batch mask generation and corpus statistics.

Input manifest: JSON lines with ``id``, ``reference_path``, ``target_path`` and
optional ``instruction`` / ``task_tag``; any other keys are carried through.
Relative image paths resolve against the manifest's directory.

Outputs, all under ``outdir``:

* ``<id>.mask.png``: pooled edit mask, single channel, 0/255
* ``output.jsonl``: one result per input record, in input order
* ``summary.json``: counts plus the run configuration

The full weight map is not stored; it is ``1 + (w - 1) * mask``.
"""

from __future__ import annotations

import json
import logging
import math
import os
import re
import tempfile
from collections import deque
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator

from . import imagecore
from .imagecore import PathLike
from .maskgen import MaskGenConfig, generate_mask
from .weighting import DEFAULT_KIND, DEFAULT_X_CAP, WeightFunctionKind, build_weight_map

log = logging.getLogger(__name__)

OUTPUT_MANIFEST = "output.jsonl"
SUMMARY_FILE = "summary.json"
MASK_SUFFIX = ".mask.png"

_KNOWN_INPUT_KEYS = ("id", "reference_path", "target_path", "instruction", "task_tag")
_SAFE_ID = re.compile(r"^[A-Za-z0-9][A-Za-z0-9._-]*$")


class ManifestError(ValueError):
    """Malformed manifest; ``line`` is 1-based."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


class PairFailure(RuntimeError):
    """Raised by ``run_batch`` under ``fail_fast`` for the first bad record."""


@dataclass(frozen=True)
class ManifestRecord:
    id: str
    reference_path: str
    target_path: str
    instruction: str | None = None
    task_tag: str | None = None
    extra: dict[str, Any] = field(default_factory=dict)
    base_dir: Path | None = None

    def resolve(self, path: str) -> Path:
        p = Path(path)
        if not p.is_absolute() and self.base_dir is not None:
            p = self.base_dir / p
        return p


@dataclass(frozen=True)
class OutputRecord:
    id: str
    mask_path: str | None = None
    a_edit: int | None = None
    a_total: int | None = None
    x: float | None = None
    weight_kind: str | None = None
    w: float | None = None
    degenerate_no_edit: bool = False
    degenerate_full_edit: bool = False
    error: str | None = None
    instruction: str | None = None
    task_tag: str | None = None
    extra: dict[str, Any] = field(default_factory=dict)

    def to_json(self) -> str:
        body = {k: v for k, v in asdict(self).items() if k != "extra"}
        if body["x"] is None:
            del body["x"]
        for key in ("instruction", "task_tag"):
            if body[key] is None:
                del body[key]
        for key, value in self.extra.items():
            body.setdefault(key, value)
        return json.dumps(body, ensure_ascii=False, sort_keys=False, allow_nan=False)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "OutputRecord":
        known = {f: data.get(f) for f in cls.__dataclass_fields__ if f != "extra" and f in data}
        extra = {k: v for k, v in data.items() if k not in cls.__dataclass_fields__}
        return cls(**known, extra=extra)


@dataclass(frozen=True)
class RunConfig:
    mask: MaskGenConfig = field(default_factory=MaskGenConfig)
    weight_kind: WeightFunctionKind = DEFAULT_KIND
    x_cap: float | None = DEFAULT_X_CAP
    parallelism: int = 1
    outdir: Path = Path("out")
    fail_fast: bool = False

    def __post_init__(self) -> None:
        if self.parallelism < 1:
            raise ValueError(f"parallelism must be >= 1, got {self.parallelism}")
        object.__setattr__(self, "weight_kind", WeightFunctionKind.parse(self.weight_kind))
        object.__setattr__(self, "outdir", Path(self.outdir))

    def to_dict(self) -> dict[str, Any]:
        # outdir and parallelism are left out: results must not depend on them.
        return {
            "mask": self.mask.to_dict(),
            "weight_kind": self.weight_kind.value,
            "x_cap": self.x_cap,
            "fail_fast": self.fail_fast,
        }


# -- manifests ------------------------------------------------------------------


def _parse_record(obj: Any, line: int, base_dir: Path | None) -> ManifestRecord:
    if not isinstance(obj, dict):
        raise ManifestError("expected a JSON object", line)
    for key in ("id", "reference_path", "target_path"):
        value = obj.get(key)
        if not isinstance(value, str) or not value:
            raise ManifestError(f"field {key!r} must be a non-empty string", line)
    for key in ("instruction", "task_tag"):
        if obj.get(key) is not None and not isinstance(obj[key], str):
            raise ManifestError(f"field {key!r} must be a string", line)
    return ManifestRecord(
        id=obj["id"],
        reference_path=obj["reference_path"],
        target_path=obj["target_path"],
        instruction=obj.get("instruction"),
        task_tag=obj.get("task_tag"),
        extra={k: v for k, v in obj.items() if k not in _KNOWN_INPUT_KEYS},
        base_dir=base_dir,
    )


def ingest_manifest(path: PathLike) -> list[ManifestRecord]:
    """Parse a JSONL manifest, keeping file order and rejecting duplicate ids."""
    path = Path(path)
    base_dir = path.resolve().parent
    records: list[ManifestRecord] = []
    seen: dict[str, int] = {}
    with path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"invalid JSON ({exc.msg})", lineno) from None
            record = _parse_record(obj, lineno, base_dir)
            if record.id in seen:
                raise ManifestError(f"duplicate id {record.id!r} (first seen on line {seen[record.id]})", lineno)
            seen[record.id] = lineno
            records.append(record)
    return records


def write_manifest(path: PathLike, records: Iterable[dict[str, Any]]) -> None:
    lines = [json.dumps(r, ensure_ascii=False) for r in records]
    atomic_write_text(Path(path), "".join(line + "\n" for line in lines))


def atomic_write_text(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# -- per-pair -------------------------------------------------------------------


def mask_filename(record_id: str) -> str:
    return f"{record_id}{MASK_SUFFIX}"


def _failure(record: ManifestRecord, message: str) -> OutputRecord:
    return OutputRecord(
        id=record.id,
        error=message,
        instruction=record.instruction,
        task_tag=record.task_tag,
        extra=record.extra,
    )


def _describe(exc: BaseException) -> str:
    if isinstance(exc, FileNotFoundError):
        return f"missing file: {exc.filename}"
    return f"{type(exc).__name__}: {exc}"


def process_pair(record: ManifestRecord, config: RunConfig) -> OutputRecord:
    """Mask + weight for one record. Failures come back in ``error``."""
    if not _SAFE_ID.match(record.id):
        return _failure(record, f"invalid id {record.id!r} for use as a file name")
    try:
        reference = imagecore.load_image(record.resolve(record.reference_path))
        target = imagecore.load_image(record.resolve(record.target_path))
        pooled, stats = generate_mask(reference, target, config.mask)
        _, spec = build_weight_map(pooled, stats, config.weight_kind, config.x_cap)
        name = mask_filename(record.id)
        imagecore.save_mask(pooled, config.outdir / name)
    except Exception as exc:  # per-sample failures are data
        log.debug("record %s failed", record.id, exc_info=True)
        return _failure(record, _describe(exc))

    return OutputRecord(
        id=record.id,
        mask_path=name,
        a_edit=stats.a_edit,
        a_total=stats.a_total,
        x=stats.x,
        weight_kind=config.weight_kind.value,
        w=spec.w,
        degenerate_no_edit=stats.degenerate_no_edit,
        degenerate_full_edit=stats.degenerate_full_edit,
        instruction=record.instruction,
        task_tag=record.task_tag,
        extra=record.extra,
    )


# -- batch ----------------------------------------------------------------------


@dataclass(frozen=True)
class BatchSummary:
    total: int
    ok: int
    degenerate: int
    error: int

    def to_dict(self) -> dict[str, int]:
        return asdict(self)


@dataclass(frozen=True)
class BatchResult:
    output_manifest: Path
    summary: BatchSummary


def _ordered_results(
    records: list[ManifestRecord], config: RunConfig
) -> Iterator[OutputRecord]:
    if config.parallelism == 1:
        for record in records:
            yield process_pair(record, config)
        return
    # Futures are consumed in submission order: the deque is the reorder buffer.
    window = 4 * config.parallelism
    pool = ThreadPoolExecutor(max_workers=config.parallelism)
    pending: deque[Future[OutputRecord]] = deque()
    try:
        for record in records:
            pending.append(pool.submit(process_pair, record, config))
            if len(pending) >= window:
                yield pending.popleft().result()
        while pending:
            yield pending.popleft().result()
    finally:
        pool.shutdown(wait=True, cancel_futures=True)


def summarize(results: Iterable[OutputRecord]) -> BatchSummary:
    total = ok = degenerate = error = 0
    for r in results:
        total += 1
        if r.error is not None:
            error += 1
        elif r.degenerate_no_edit or r.degenerate_full_edit:
            degenerate += 1
        else:
            ok += 1
    return BatchSummary(total, ok, degenerate, error)


def run_batch(manifest_path: PathLike, config: RunConfig) -> BatchResult:
    """Process every record and write the output manifest in input order."""
    records = ingest_manifest(manifest_path)
    outdir = config.outdir
    outdir.mkdir(parents=True, exist_ok=True)
    if not os.access(outdir, os.W_OK):
        raise PermissionError(f"output directory not writable: {outdir}")

    results: list[OutputRecord] = []
    for result in _ordered_results(records, config):
        if config.fail_fast and result.error is not None:
            raise PairFailure(f"record {result.id!r}: {result.error}")
        results.append(result)
        if len(results) % 100 == 0:
            log.info("processed %d/%d", len(results), len(records))

    out_path = outdir / OUTPUT_MANIFEST
    atomic_write_text(out_path, "".join(r.to_json() + "\n" for r in results))
    summary = summarize(results)
    atomic_write_text(
        outdir / SUMMARY_FILE,
        json.dumps({"summary": summary.to_dict(), "config": config.to_dict()}, indent=2) + "\n",
    )
    return BatchResult(out_path, summary)


def load_output_manifest(path: PathLike) -> list[OutputRecord]:
    out = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"invalid JSON ({exc.msg})", lineno) from None
            if not isinstance(obj, dict) or not isinstance(obj.get("id"), str):
                raise ManifestError("expected an object with a string 'id'", lineno)
            out.append(OutputRecord.from_dict(obj))
    return out


# -- reporting ------------------------------------------------------------------


def x_bin_index(x: float) -> int:
    """Log2 bin: bin i holds ``2**i <= x < 2**(i+1)``."""
    return int(math.floor(math.log2(x))) if x > 1 else 0


def _w_stats(values: list[float]) -> dict[str, float]:
    values = sorted(values)
    n = len(values)
    return {
        "count": n,
        "mean": sum(values) / n,
        "min": values[0],
        "median": values[n // 2] if n % 2 else (values[n // 2 - 1] + values[n // 2]) / 2,
        "max": values[-1],
    }


def _breakdown(records: list[OutputRecord]) -> dict[str, Any]:
    n = len(records)
    summary = summarize(records)
    xs = [r.x for r in records if r.error is None and r.x is not None]
    bins: dict[int, int] = {}
    for x in xs:
        i = x_bin_index(x)
        bins[i] = bins.get(i, 0) + 1
    histogram = [
        {"lo": 2.0**i, "hi": 2.0 ** (i + 1), "count": bins.get(i, 0)}
        for i in range(max(bins) + 1 if bins else 0)
    ]
    by_kind: dict[str, list[float]] = {}
    for r in records:
        if r.error is None and r.w is not None:
            by_kind.setdefault(r.weight_kind or "unknown", []).append(r.w)
    return {
        "records": n,
        "ok": summary.ok,
        "degenerate_no_edit": sum(1 for r in records if r.error is None and r.degenerate_no_edit),
        "degenerate_full_edit": sum(1 for r in records if r.error is None and r.degenerate_full_edit),
        "errors": summary.error,
        "degenerate_rate": summary.degenerate / n if n else 0.0,
        "error_rate": summary.error / n if n else 0.0,
        "x_histogram": histogram,
        "w_by_kind": {kind: _w_stats(ws) for kind, ws in sorted(by_kind.items())},
    }


def report(output_manifest_path: PathLike) -> dict[str, Any]:
    """Corpus statistics over an output manifest, overall and per task tag."""
    records = load_output_manifest(output_manifest_path)
    tags: dict[str, list[OutputRecord]] = {}
    for r in records:
        tags.setdefault(r.task_tag or "untagged", []).append(r)
    return {
        "overall": _breakdown(records),
        "by_task_tag": {tag: _breakdown(rs) for tag, rs in sorted(tags.items())},
    }


def format_report(stats: dict[str, Any]) -> str:
    """Plain-text table view of :func:`report` output."""
    lines = []
    overall = stats["overall"]
    lines.append(
        f"records {overall['records']}  ok {overall['ok']}  "
        f"no-edit {overall['degenerate_no_edit']}  full-edit {overall['degenerate_full_edit']}  "
        f"errors {overall['errors']} ({overall['error_rate']:.2%})"
    )
    lines.append("")
    lines.append(f"{'x range':>20}  {'count':>7}")
    for b in overall["x_histogram"]:
        lines.append(f"{'[' + format(b['lo'], 'g') + ', ' + format(b['hi'], 'g') + ')':>20}  {b['count']:>7}")
    lines.append("")
    lines.append(f"{'weight fn':>10}  {'n':>6}  {'mean':>8}  {'min':>8}  {'median':>8}  {'max':>8}")
    for kind, s in overall["w_by_kind"].items():
        lines.append(
            f"{kind:>10}  {s['count']:>6}  {s['mean']:>8.3f}  {s['min']:>8.3f}  {s['median']:>8.3f}  {s['max']:>8.3f}"
        )
    lines.append("")
    lines.append(f"{'task tag':>16}  {'n':>6}  {'degenerate':>10}  {'errors':>6}")
    for tag, b in stats["by_task_tag"].items():
        lines.append(f"{tag:>16}  {b['records']:>6}  {b['degenerate_rate']:>10.2%}  {b['error_rate']:>6.2%}")
    return "\n".join(lines)


__all__ = [
    "BatchResult",
    "BatchSummary",
    "ManifestError",
    "ManifestRecord",
    "OutputRecord",
    "PairFailure",
    "RunConfig",
    "format_report",
    "ingest_manifest",
    "load_output_manifest",
    "mask_filename",
    "process_pair",
    "report",
    "run_batch",
    "summarize",
    "write_manifest",
]
