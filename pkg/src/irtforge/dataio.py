"""On-disk formats: response matrices, item banks and result bundles.

Missing responses are kept as NaN in memory and are never imputed. Every
writer in this module is deterministic so that outputs can be compared
byte for byte.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from . import __version__

logger = logging.getLogger(__name__)

MISSING_TOKENS = ("", "NA")


class DataError(ValueError):
    """Malformed input file or invalid in-memory data.

    ``path`` and ``line`` locate the problem when it came from a file.
    """

    def __init__(self, message, path=None, line=None):
        self.path = None if path is None else str(path)
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(where + message)


# --------------------------------------------------------------------------
# Item bank


@dataclass(frozen=True)
class Item:
    item_id: str
    stem: str | None = None
    answer_key: str | None = None
    fixed_difficulty: float | None = None


@dataclass(frozen=True)
class ItemBank:
    items: tuple[Item, ...]

    def __post_init__(self):
        if not self.items:
            raise DataError("item bank has no items")
        seen = set()
        for item in self.items:
            if not isinstance(item.item_id, str) or not item.item_id:
                raise DataError("item_id must be a non-empty string")
            if item.item_id in seen:
                raise DataError(f"duplicate item_id {item.item_id!r}")
            seen.add(item.item_id)
            fd = item.fixed_difficulty
            if fd is not None and not math.isfinite(fd):
                raise DataError(f"fixed_difficulty of {item.item_id!r} is not finite")

    @property
    def item_ids(self) -> tuple[str, ...]:
        return tuple(item.item_id for item in self.items)

    @property
    def has_fixed_difficulties(self) -> bool:
        return all(item.fixed_difficulty is not None for item in self.items)

    def fixed_difficulties(self) -> np.ndarray:
        """Difficulties for a fixed-parameter run; every item must carry one."""
        missing = [i.item_id for i in self.items if i.fixed_difficulty is None]
        if missing:
            raise DataError(
                f"fixed-parameter mode needs fixed_difficulty for every item; "
                f"missing for {', '.join(missing)}"
            )
        return np.array([i.fixed_difficulty for i in self.items], dtype=float)

    def to_dict(self) -> dict:
        out = []
        for item in self.items:
            d: dict[str, Any] = {"item_id": item.item_id}
            if item.stem is not None:
                d["stem"] = item.stem
            if item.answer_key is not None:
                d["answer_key"] = item.answer_key
            if item.fixed_difficulty is not None:
                d["fixed_difficulty"] = item.fixed_difficulty
            out.append(d)
        return {"items": out}

    @classmethod
    def from_difficulties(cls, betas: Sequence[float], prefix: str = "q") -> "ItemBank":
        return cls(tuple(Item(f"{prefix}{j + 1}", fixed_difficulty=float(b))
                         for j, b in enumerate(betas)))


def load_item_bank(path) -> ItemBank:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DataError("file not found", path) from None
    except json.JSONDecodeError as exc:
        raise DataError(f"invalid JSON: {exc.msg}", path, exc.lineno) from None
    if not isinstance(doc, dict) or not isinstance(doc.get("items"), list):
        raise DataError("item bank must be an object with an 'items' array", path)
    items = []
    for k, raw in enumerate(doc["items"]):
        if not isinstance(raw, dict) or "item_id" not in raw:
            raise DataError(f"items[{k}] lacks item_id", path)
        fd = raw.get("fixed_difficulty")
        if fd is not None and (isinstance(fd, bool) or not isinstance(fd, (int, float))):
            raise DataError(f"items[{k}].fixed_difficulty must be a number", path)
        items.append(Item(str(raw["item_id"]), raw.get("stem"), raw.get("answer_key"),
                          None if fd is None else float(fd)))
    try:
        return ItemBank(tuple(items))
    except DataError as exc:
        raise DataError(str(exc), path) from None


def write_item_bank(bank: ItemBank, path) -> None:
    Path(path).write_text(dumps_canonical(bank.to_dict()), encoding="utf-8")


# --------------------------------------------------------------------------
# Response matrix


class ResponseMatrix:
    """Respondents x items dichotomous scores; NaN marks a missing cell.

    Instances are immutable: the score array is copied and flagged read-only.
    Row order and column order are significant and preserved by every
    operation.
    """

    def __init__(self, respondent_ids, sources, item_ids, data):
        self.respondent_ids = tuple(str(r) for r in respondent_ids)
        self.sources = tuple(str(s) for s in sources)
        self.item_ids = tuple(str(i) for i in item_ids)
        arr = np.array(data, dtype=float, copy=True)
        if arr.ndim != 2:
            raise DataError("response data must be two-dimensional")
        if arr.shape != (len(self.respondent_ids), len(self.item_ids)):
            raise DataError(
                f"data shape {arr.shape} does not match "
                f"{len(self.respondent_ids)} respondents x {len(self.item_ids)} items"
            )
        if len(self.sources) != len(self.respondent_ids):
            raise DataError("one source label is required per respondent")
        _check_unique(self.respondent_ids, "respondent_id")
        _check_unique(self.item_ids, "item_id")
        bad = ~(np.isnan(arr) | (arr == 0.0) | (arr == 1.0))
        if bad.any():
            i, j = map(int, np.argwhere(bad)[0])
            raise DataError(
                f"cell ({self.respondent_ids[i]}, {self.item_ids[j]}) = {arr[i, j]!r}; "
                "scores must be 0, 1 or missing"
            )
        empty = np.isnan(arr).all(axis=1) if arr.shape[1] else np.ones(arr.shape[0], bool)
        if empty.any():
            rid = self.respondent_ids[int(np.flatnonzero(empty)[0])]
            raise DataError(f"respondent {rid!r} has no observed responses")
        arr.flags.writeable = False
        self.data = arr

    @property
    def n_respondents(self) -> int:
        return len(self.respondent_ids)

    @property
    def n_items(self) -> int:
        return len(self.item_ids)

    @property
    def observed(self) -> np.ndarray:
        return ~np.isnan(self.data)

    @property
    def n_missing(self) -> int:
        return int(np.isnan(self.data).sum())

    def source_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for s in self.sources:
            counts[s] = counts.get(s, 0) + 1
        return dict(sorted(counts.items()))

    def take(self, rows: Iterable[int], respondent_ids=None) -> "ResponseMatrix":
        """Rows by position; repeated rows need fresh ``respondent_ids``."""
        rows = list(rows)
        if respondent_ids is None:
            respondent_ids = [self.respondent_ids[r] for r in rows]
        return ResponseMatrix(respondent_ids,
                              [self.sources[r] for r in rows],
                              self.item_ids, self.data[rows])

    def select_ids(self, ids: Iterable[str]) -> "ResponseMatrix":
        index = {rid: k for k, rid in enumerate(self.respondent_ids)}
        try:
            return self.take(index[r] for r in ids)
        except KeyError as exc:
            raise DataError(f"unknown respondent_id {exc.args[0]!r}") from None

    def where_source(self, source: str) -> "ResponseMatrix":
        return self.take(k for k, s in enumerate(self.sources) if s == source)

    def reorder_items(self, item_ids: Sequence[str]) -> "ResponseMatrix":
        """Columns in the order of ``item_ids``; absent items become all-missing."""
        col = {iid: k for k, iid in enumerate(self.item_ids)}
        unknown = set(self.item_ids) - set(item_ids)
        if unknown:
            raise DataError(f"items not in target ordering: {', '.join(sorted(unknown))}")
        out = np.full((self.n_respondents, len(item_ids)), np.nan)
        for k, iid in enumerate(item_ids):
            if iid in col:
                out[:, k] = self.data[:, col[iid]]
        return ResponseMatrix(self.respondent_ids, self.sources, item_ids, out)

    def relabel(self, respondent_ids: Sequence[str]) -> "ResponseMatrix":
        return ResponseMatrix(respondent_ids, self.sources, self.item_ids, self.data)

    @staticmethod
    def concat(parts: Sequence["ResponseMatrix"]) -> "ResponseMatrix":
        if not parts:
            raise DataError("nothing to concatenate")
        item_ids = parts[0].item_ids
        for p in parts[1:]:
            if p.item_ids != item_ids:
                raise DataError("matrices must share the same item columns")
        return ResponseMatrix(
            [r for p in parts for r in p.respondent_ids],
            [s for p in parts for s in p.sources],
            item_ids,
            np.vstack([p.data for p in parts]),
        )

    def __eq__(self, other):
        if not isinstance(other, ResponseMatrix):
            return NotImplemented
        return (self.respondent_ids == other.respondent_ids
                and self.sources == other.sources
                and self.item_ids == other.item_ids
                and np.array_equal(self.data, other.data, equal_nan=True))

    __hash__ = None

    def __repr__(self):
        return (f"ResponseMatrix({self.n_respondents} respondents x {self.n_items} items, "
                f"{self.n_missing} missing)")


def _check_unique(values, what):
    seen = set()
    for v in values:
        if not v:
            raise DataError(f"{what} must be non-empty")
        if v in seen:
            raise DataError(f"duplicate {what} {v!r}")
        seen.add(v)


def _parse_wide_cell(token, path, line):
    token = token.strip()
    if token in MISSING_TOKENS:
        return np.nan
    if token == "0":
        return 0.0
    if token == "1":
        return 1.0
    raise DataError(f"malformed cell value {token!r}; expected 0, 1, NA or empty", path, line)


def _data_lines(handle):
    """Yield (line_number, text) skipping blank lines and ``#`` comments."""
    for lineno, text in enumerate(handle, start=1):
        stripped = text.strip()
        if stripped and not stripped.startswith("#"):
            yield lineno, text


def _load_wide(path):
    with open(path, encoding="utf-8", newline="") as fh:
        lines = list(_data_lines(fh))
    if not lines:
        raise DataError("empty file: no header row", path)
    linenos = [n for n, _ in lines]
    rows = list(csv.reader(text for _, text in lines))
    header = [h.strip() for h in rows[0]]
    if len(header) < 3 or header[:2] != ["respondent_id", "source"]:
        raise DataError("header must be respondent_id,source,<item ids...>", path, linenos[0])
    item_ids = header[2:]
    if len(set(item_ids)) != len(item_ids) or any(not i for i in item_ids):
        raise DataError("item columns must be unique and non-empty", path, linenos[0])
    ids, sources, data = [], [], []
    seen = set()
    for lineno, row in zip(linenos[1:], rows[1:]):
        if len(row) != len(header):
            raise DataError(f"expected {len(header)} fields, found {len(row)}", path, lineno)
        rid, src = row[0].strip(), row[1].strip()
        if not rid:
            raise DataError("empty respondent_id", path, lineno)
        if rid in seen:
            raise DataError(f"duplicate respondent_id {rid!r}", path, lineno)
        seen.add(rid)
        cells = [_parse_wide_cell(tok, path, lineno) for tok in row[2:]]
        if all(math.isnan(c) for c in cells):
            raise DataError(f"respondent {rid!r} has no observed responses", path, lineno)
        ids.append(rid)
        sources.append(src)
        data.append(cells)
    return ids, sources, item_ids, np.array(data, dtype=float).reshape(len(ids), len(item_ids))


def _load_long(path):
    records: dict[tuple[str, str], float] = {}
    ids: list[str] = []
    src_of: dict[str, str] = {}
    item_ids: list[str] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, text in _data_lines(fh):
            try:
                rec = json.loads(text)
            except json.JSONDecodeError as exc:
                raise DataError(f"invalid JSON: {exc.msg}", path, lineno) from None
            if not isinstance(rec, dict):
                raise DataError("record must be a JSON object", path, lineno)
            for key in ("respondent_id", "source", "item_id", "score"):
                if key not in rec:
                    raise DataError(f"record lacks {key!r}", path, lineno)
            rid, src, iid, score = (str(rec["respondent_id"]), str(rec["source"]),
                                    str(rec["item_id"]), rec["score"])
            if isinstance(score, bool) or score not in (0, 1):
                raise DataError(f"malformed score {score!r}; expected 0 or 1", path, lineno)
            if not rid or not iid:
                raise DataError("respondent_id and item_id must be non-empty", path, lineno)
            if (rid, iid) in records:
                raise DataError(f"duplicate record for ({rid}, {iid})", path, lineno)
            if rid in src_of and src_of[rid] != src:
                raise DataError(f"respondent {rid!r} has conflicting source labels", path, lineno)
            if rid not in src_of:
                src_of[rid] = src
                ids.append(rid)
            if iid not in item_ids:
                item_ids.append(iid)
            records[(rid, iid)] = float(score)
    col = {iid: k for k, iid in enumerate(item_ids)}
    row = {rid: k for k, rid in enumerate(ids)}
    data = np.full((len(ids), len(item_ids)), np.nan)
    for (rid, iid), score in records.items():
        data[row[rid], col[iid]] = score
    return ids, [src_of[r] for r in ids], item_ids, data


def load_responses(path, format: str = "wide_csv", bank: ItemBank | None = None) -> ResponseMatrix:
    """Load and validate a response matrix.

    ``format`` is ``"wide_csv"`` (alias ``"wide"``) or ``"long_jsonl"``
    (alias ``"long"``). When ``bank`` is given, columns are checked against
    it and reordered to bank order; bank items absent from the file load as
    all-missing columns.
    """
    path = Path(path)
    if not path.exists():
        raise DataError("file not found", path)
    fmt = {"wide": "wide_csv", "long": "long_jsonl"}.get(format, format)
    if fmt == "wide_csv":
        ids, sources, item_ids, data = _load_wide(path)
    elif fmt == "long_jsonl":
        ids, sources, item_ids, data = _load_long(path)
    else:
        raise ValueError(f"unknown response format {format!r}")
    if not ids:
        raise DataError("no respondents", path)
    try:
        matrix = ResponseMatrix(ids, sources, item_ids, data)
        if bank is not None:
            unknown = [i for i in item_ids if i not in set(bank.item_ids)]
            if unknown:
                raise DataError(f"columns not in item bank: {', '.join(unknown)}")
            matrix = matrix.reorder_items(bank.item_ids)
    except DataError as exc:
        if exc.path is not None:
            raise
        raise DataError(str(exc), path) from None
    logger.info("loaded %s: %d respondents x %d items, %d missing cells",
                path, matrix.n_respondents, matrix.n_items, matrix.n_missing)
    return matrix


def _cell_token(v):
    return "NA" if math.isnan(v) else str(int(v))


def write_responses(matrix: ResponseMatrix, path, format: str = "wide_csv",
                    comment: str | None = None) -> None:
    """Write ``matrix`` in wide CSV or long JSONL with LF line endings.

    ``comment`` is emitted as a leading ``#`` line; the loaders skip it.
    """
    fmt = {"wide": "wide_csv", "long": "long_jsonl"}.get(format, format)
    lines = []
    if comment is not None:
        lines.append("# " + comment.replace("\n", " "))
    if fmt == "wide_csv":
        lines.append(",".join(["respondent_id", "source", *matrix.item_ids]))
        for rid, src, row in zip(matrix.respondent_ids, matrix.sources, matrix.data):
            lines.append(",".join([rid, src, *(_cell_token(v) for v in row)]))
    elif fmt == "long_jsonl":
        for rid, src, row in zip(matrix.respondent_ids, matrix.sources, matrix.data):
            for iid, v in zip(matrix.item_ids, row):
                if not math.isnan(v):
                    lines.append(json.dumps({"respondent_id": rid, "source": src,
                                             "item_id": iid, "score": int(v)}))
    else:
        raise ValueError(f"unknown response format {format!r}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


# --------------------------------------------------------------------------
# Canonical JSON


def format_number(x: float) -> str:
    """Six significant digits, ``-0`` folded to ``0``; rejects NaN and infinities."""
    if not math.isfinite(x):
        raise ValueError(f"cannot serialize non-finite number {x!r}")
    text = format(x, ".6g")
    return "0" if text in ("-0", "0") else text


def _encode(obj, out: list[str]):
    if obj is None:
        out.append("null")
    elif obj is True:
        out.append("true")
    elif obj is False:
        out.append("false")
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        out.append(format_number(float(obj)))
    elif isinstance(obj, str):
        out.append(json.dumps(obj, ensure_ascii=False))
    elif isinstance(obj, dict):
        out.append("{")
        for k, key in enumerate(sorted(obj)):
            if k:
                out.append(",")
            out.append(json.dumps(str(key), ensure_ascii=False))
            out.append(":")
            _encode(obj[key], out)
        out.append("}")
    elif isinstance(obj, (list, tuple, np.ndarray)):
        out.append("[")
        for k, v in enumerate(obj):
            if k:
                out.append(",")
            _encode(v, out)
        out.append("]")
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps_canonical(obj) -> str:
    """Sorted-key compact JSON with every float at 6 significant digits."""
    out: list[str] = []
    _encode(obj, out)
    return "".join(out) + "\n"


def write_json(obj, path) -> None:
    text = dumps_canonical(obj)  # raises before anything touches disk
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def read_json(path):
    path = Path(path)
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DataError("file not found", path) from None
    except json.JSONDecodeError as exc:
        raise DataError(f"invalid JSON: {exc.msg}", path, exc.lineno) from None


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return "sha256:" + h.hexdigest()


# --------------------------------------------------------------------------
# Result bundle


@dataclass(frozen=True)
class Convergence:
    cycles: int
    max_param_change: float
    converged: bool

    def to_dict(self):
        return {"cycles": self.cycles, "max_param_change": self.max_param_change,
                "converged": self.converged}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["cycles"]), float(d["max_param_change"]), bool(d["converged"]))


@dataclass(frozen=True)
class ResultBundle:
    """Everything one calibration run produced.

    ``latent`` and ``ability`` are ``irtforge.fpc`` objects; ``item_params``
    is an ``irtforge.calibrate.ItemParams``.
    """

    item_params: Any
    convergence: Convergence
    latent: Any = None
    ability: Any = None
    seed: int | None = None
    inputs: dict[str, str] = field(default_factory=dict)
    tool_version: str = __version__

    def to_dict(self) -> dict:
        return {
            "item_params": self.item_params.to_dict(),
            "latent": None if self.latent is None else self.latent.to_dict(),
            "ability": None if self.ability is None else self.ability.to_dict(),
            "convergence": self.convergence.to_dict(),
            "seed": self.seed,
            "provenance": {"inputs": dict(self.inputs), "tool_version": self.tool_version},
        }

    @classmethod
    def from_dict(cls, d) -> "ResultBundle":
        from .calibrate import ItemParams
        from .fpc import AbilityEstimates, LatentDist

        prov = d.get("provenance", {})
        return cls(
            item_params=ItemParams.from_dict(d["item_params"]),
            convergence=Convergence.from_dict(d["convergence"]),
            latent=None if d.get("latent") is None else LatentDist.from_dict(d["latent"]),
            ability=None if d.get("ability") is None else AbilityEstimates.from_dict(d["ability"]),
            seed=d.get("seed"),
            inputs=dict(prov.get("inputs", {})),
            tool_version=prov.get("tool_version", __version__),
        )


def write_bundle(bundle: ResultBundle, path) -> None:
    """Write ``bundle`` as canonical JSON; NaN anywhere aborts before writing."""
    write_json(bundle.to_dict(), path)


def load_bundle(path) -> ResultBundle:
    return ResultBundle.from_dict(read_json(path))


def load_report(path):
    """Read an experiment report written in JSON form.

    Returns ``(ComparisonReport, [DistStats, ...])``.
    """
    from .evaluate import ComparisonReport, DistStats

    doc = read_json(path)
    try:
        return (ComparisonReport.from_dict(doc["comparison"]),
                [DistStats.from_dict(d) for d in doc.get("distributions", [])])
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"not an experiment report: {exc}", path) from None
