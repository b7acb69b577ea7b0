"""Question suites, ground truth, scoring and result tables.

A suite is a directory of ground-truth files.  Each file holds one question
part::

    {"question": "Q4", "task": "SubclassQuery",
     "args": {"diagram": "../ccs-mini.json", "class": "ProcessingTask"},
     "expected": {"subclasses": ["ControlTask", "PerceptionTask", "PlanningTask"]}}

``diagram`` (or ``diagrams`` for two-diagram tasks) is a path relative to the
file; ``.png`` files are sent as images.  ``reference`` optionally names a
canonical metamodel used to normalize names when the diagram is an image.
Parts sharing a ``question`` label are scored together, in file-name order.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Optional, Sequence

from .diff import values_equal
from .gateway import (
    TASK_KINDS,
    Backend,
    BackendError,
    DiagramPayload,
    NormalizedAnswer,
    PayloadError,
    PromptTask,
    ask,
)
from .model import Metamodel, ModelError
from .modelformat import ParseError, parse_model_document
from .names import normalize_name

BANDS = ("TotallyCorrect", "MostlyCorrect", "PartiallyCorrect", "TotallyWrong")
BAND_TEXT = {
    "TotallyCorrect": "Totally correct",
    "MostlyCorrect": "Mostly correct",
    "PartiallyCorrect": "Partially correct",
    "TotallyWrong": "Totally wrong",
}

_EXPECTED_KEYS = {
    "ListClasses": {"classes"},
    "ListMembers": {"attributes", "operations"},
    "KindOfQuery": {"answers"},
    "RelationChainQuery": {"chain"},
    "SubclassQuery": {"subclasses"},
    "ExtractRole": {"elements"},
    "ElementProperties": {"properties"},
    "DetectDifferences": {"differences"},
}


class HarnessError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code
        self.message = message


@dataclass(frozen=True)
class GroundTruth:
    task_kind: str
    expected: dict

    def __post_init__(self) -> None:
        if self.task_kind not in TASK_KINDS:
            raise HarnessError("BAD_GROUND_TRUTH", f"unknown task kind {self.task_kind!r}")
        missing = _EXPECTED_KEYS[self.task_kind] - set(self.expected)
        if missing:
            raise HarnessError("BAD_GROUND_TRUTH",
                               f"{self.task_kind} ground truth lacks {', '.join(sorted(missing))}")


@dataclass(frozen=True)
class Score:
    task_kind: str
    recall: float
    precision: float
    hallucinations: tuple[str, ...]
    band: str
    display: str
    missing: tuple[str, ...] = ()
    partial: tuple[str, ...] = ()
    error: Optional[str] = None

    def to_json(self) -> dict:
        return {
            "taskKind": self.task_kind,
            "recall": self.recall,
            "precision": self.precision,
            "hallucinations": list(self.hallucinations),
            "missing": list(self.missing),
            "partial": list(self.partial),
            "band": self.band,
            "display": self.display,
            "error": self.error,
        }


def band_for(recall: float, precision: float, hallucinations: int) -> str:
    if recall >= 1 and precision >= 1:
        return "TotallyCorrect"
    if recall >= 0.8 and hallucinations <= 1:
        return "MostlyCorrect"
    if recall > 0:
        return "PartiallyCorrect"
    return "TotallyWrong"


def _ratio(num: int, den: int, empty: float) -> float:
    return num / den if den else empty


def _plural(n: int, word: str) -> str:
    return f"{n} {word}" if n == 1 else f"{n} {word}s"


def _describe(band: str, wrong: Sequence[str], lacking: Sequence[str], hallucinated: int) -> str:
    """Table-style verdict such as "Mostly correct with 1 wrong attribute"."""
    text = BAND_TEXT[band]
    if band in ("TotallyCorrect", "TotallyWrong"):
        return text
    details = []
    if wrong:
        details.append(" and ".join(wrong) if len(wrong) < 3 else ", ".join(wrong))
    if lacking:
        details.append("lacking " + " and ".join(lacking))
    if hallucinated >= 3:
        details.append("much hallucination")
    elif hallucinated:
        details.append("few hallucination")
    return text + (" with " + " and ".join(details) if details else "")


# -- per-kind scoring ----------------------------------------------------------


def _unique_norm(names: Sequence[Any]) -> dict[str, str]:
    out: dict[str, str] = {}
    for name in names:
        if isinstance(name, str) and normalize_name(name):
            out.setdefault(normalize_name(name), name)
    return out


def _score_names(kind: str, expected: Sequence[str], found: Sequence[Any], ratio_display: bool) -> Score:
    exp = _unique_norm(expected)
    got = _unique_norm(found)
    hit = [k for k in exp if k in got]
    extra = tuple(got[k] for k in got if k not in exp)
    missing = tuple(exp[k] for k in exp if k not in got)
    recall = _ratio(len(hit), len(exp), 1.0)
    precision = _ratio(len(hit), len(got), 1.0 if not exp else 0.0)
    band = band_for(recall, precision, len(extra))
    display = f"{len(hit)}/{len(exp)}" if ratio_display else BAND_TEXT[band]
    return Score(kind, recall, precision, extra, band, display, missing)


def _type_eq(a: Optional[str], b: Optional[str]) -> bool:
    return normalize_name(a or "") == normalize_name(b or "")


def _score_members(expected: dict, found: Any) -> Score:
    found = found if isinstance(found, dict) else {}
    wrong: list[str] = []
    lacking: list[str] = []
    partial: list[str] = []
    missing: list[str] = []
    extra: list[str] = []
    full = 0
    total = 0
    answered = 0

    groups = (
        ("attribute", expected.get("attributes") or [], found.get("attributes") or []),
        ("function", expected.get("operations") or [], found.get("operations") or []),
    )
    for label, exp_items, got_items in groups:
        got = {}
        for item in got_items:
            if isinstance(item, dict) and isinstance(item.get("name"), str):
                got.setdefault(normalize_name(item["name"]), item)
        answered += len(got)
        exp_keys = set()
        n_wrong = n_missing = 0
        for item in exp_items:
            key = normalize_name(item["name"])
            exp_keys.add(key)
            total += 1
            answer = got.get(key)
            if answer is None:
                n_missing += 1
                missing.append(item["name"])
                continue
            if label == "attribute":
                ok = item.get("type") is None or _type_eq(item["type"], answer.get("type"))
            else:
                ok = True
                if "returns" in item:
                    ok = _type_eq(item["returns"], answer.get("returns"))
                if "params" in item:
                    want = [p.get("type") for p in item["params"]]
                    have = [p.get("type") for p in answer.get("params") or [] if isinstance(p, dict)]
                    ok = ok and len(want) == len(have) and all(
                        w is None or _type_eq(w, h) for w, h in zip(want, have))
            if ok:
                full += 1
            else:
                n_wrong += 1
                partial.append(item["name"])
        extra.extend(got[k]["name"] for k in got if k not in exp_keys)
        if n_wrong:
            wrong.append(f"{_plural(n_wrong, 'wrong ' + label)}")
        if n_missing:
            lacking.append(_plural(n_missing, label))

    recall = _ratio(full, total, 1.0)
    precision = _ratio(full, answered, 1.0 if not total else 0.0)
    band = band_for(recall, precision, len(extra))
    return Score("ListMembers", recall, precision, tuple(extra), band,
                 _describe(band, wrong, lacking, len(extra)), tuple(missing), tuple(partial))


def _letters(flags: Sequence[bool]) -> str:
    """"A&B correct" style verdict over independent question parts."""
    n = len(flags)
    if n == 1:
        return "Correct" if flags[0] else "Wrong"
    labels = [chr(ord("A") + i) for i in range(n)]
    good = [label for label, ok in zip(labels, flags) if ok]
    if len(good) == n:
        return "&".join(labels) + " correct"
    if not good:
        return "&".join(labels) + " wrong"
    return "Only " + "&".join(good) + " correct"


def _score_kind_of(expected: dict, found: Any) -> Score:
    want = [bool(v) for v in expected["answers"]]
    have = list(found) if isinstance(found, (list, tuple)) else []
    have += [None] * (len(want) - len(have))
    flags = [h is not None and h == w for w, h in zip(want, have)]
    k = sum(flags)
    answered = sum(1 for h in have[:len(want)] if h is not None)
    recall = _ratio(k, len(want), 1.0)
    precision = _ratio(k, answered, 1.0 if not want else 0.0)
    band = "TotallyCorrect" if all(flags) else band_for(recall, precision, 0)
    display = _letters(flags) if len(want) <= 4 else f"{k}/{len(want)} correct"
    missing = tuple(chr(ord("A") + i) for i, ok in enumerate(flags) if not ok)
    return Score("KindOfQuery", recall, precision, (), band, display, missing)


def _score_chain(expected: dict, found: Any) -> Score:
    items = [n for n in found if isinstance(n, str)] if isinstance(found, (list, tuple)) else []
    base = _score_names("RelationChainQuery", expected["chain"], items, False)
    want = [normalize_name(n) for n in expected["chain"]]
    have = [normalize_name(n) for n in items]
    if have == want or have == want[::-1]:
        band = "TotallyCorrect"
    elif base.band == "TotallyCorrect":
        band = "MostlyCorrect"  # right classes, wrong order
    else:
        band = base.band
    return Score(base.task_kind, base.recall, base.precision, base.hallucinations, band,
                 BAND_TEXT[band], base.missing)


def _diff_key(entry: Any) -> Optional[tuple[str, str]]:
    if not isinstance(entry, dict) or not isinstance(entry.get("kind"), str):
        return None
    path = ".".join(normalize_name(p) for p in str(entry.get("path", "")).split("."))
    return entry["kind"], path


def _score_differences(expected: dict, found: Any) -> Score:
    exp = {}
    for e in expected["differences"]:
        exp.setdefault(_diff_key(e), e)
    got = {}
    for e in found if isinstance(found, (list, tuple)) else []:
        key = _diff_key(e)
        if key is not None:
            got.setdefault(key, e)
    hit = [k for k in exp if k in got]
    extra = tuple(f"{k[0]} {got[k].get('path', '')}" for k in got if k not in exp)
    missing = tuple(f"{k[0]} {exp[k].get('path', '')}" for k in exp if k not in got)
    recall = _ratio(len(hit), len(exp), 1.0)
    precision = _ratio(len(hit), len(got), 1.0 if not exp else 0.0)
    if recall >= 1:
        band = "TotallyCorrect"
        display = "Correct difference detected"
    elif recall == 0:
        band = "TotallyWrong"
        display = "No correct difference detected"
    else:
        band = band_for(recall, precision, len(extra))
        display = f"{BAND_TEXT[band]} difference detected ({len(hit)}/{len(exp)})"
    return Score("DetectDifferences", recall, precision, extra, band, display, missing)


def _score_roles(expected: dict, found: Any) -> Score:
    exp = {normalize_name(e["id"]): e for e in expected["elements"]}
    got = {}
    for e in found if isinstance(found, (list, tuple)) else []:
        if isinstance(e, dict) and isinstance(e.get("id"), str):
            got.setdefault(normalize_name(e["id"]), e)
    hit = [k for k in exp if k in got and (got[k].get("class") is None
                                           or _type_eq(got[k]["class"], exp[k].get("class")))]
    partial = tuple(exp[k]["id"] for k in exp if k in got and k not in hit)
    extra = tuple(got[k]["id"] for k in got if k not in exp)
    missing = tuple(exp[k]["id"] for k in exp if k not in got)
    recall = _ratio(len(hit), len(exp), 1.0)
    precision = _ratio(len(hit), len(got), 1.0 if not exp else 0.0)
    band = band_for(recall, precision, len(extra))
    return Score("ExtractRole", recall, precision, extra, band, f"{len(hit)}/{len(exp)}", missing, partial)


def _score_properties(expected: dict, found: Any) -> Score:
    exp = {normalize_name(p["name"]): p for p in expected["properties"]}
    got = {}
    for p in found if isinstance(found, (list, tuple)) else []:
        if isinstance(p, dict) and isinstance(p.get("name"), str):
            got.setdefault(normalize_name(p["name"]), p)
    hit = [k for k in exp if k in got and values_equal(exp[k].get("value"), got[k].get("value"))]
    partial = tuple(exp[k]["name"] for k in exp if k in got and k not in hit)
    extra = tuple(got[k]["name"] for k in got if k not in exp)
    missing = tuple(exp[k]["name"] for k in exp if k not in got)
    recall = _ratio(len(hit), len(exp), 1.0)
    precision = _ratio(len(hit), len(got), 1.0 if not exp else 0.0)
    band = band_for(recall, precision, len(extra))
    return Score("ElementProperties", recall, precision, extra, band, f"{len(hit)}/{len(exp)}", missing, partial)


def score_answer(gt: GroundTruth, ans: NormalizedAnswer) -> Score:
    """Mechanical grading of one normalized answer; a pure function."""
    if gt.task_kind != ans.kind:
        raise HarnessError("TASK_MISMATCH", f"ground truth is {gt.task_kind}, answer is {ans.kind}")
    kind = gt.task_kind
    if kind == "ListClasses":
        return _score_names(kind, gt.expected["classes"], ans.value or [], True)
    if kind == "ListMembers":
        return _score_members(gt.expected, ans.value)
    if kind == "KindOfQuery":
        return _score_kind_of(gt.expected, ans.value)
    if kind == "RelationChainQuery":
        return _score_chain(gt.expected, ans.value or [])
    if kind == "SubclassQuery":
        return _score_names(kind, gt.expected["subclasses"], ans.value or [], False)
    if kind == "ExtractRole":
        return _score_roles(gt.expected, ans.value)
    if kind == "ElementProperties":
        return _score_properties(gt.expected, ans.value)
    return _score_differences(gt.expected, ans.value)


def failed_score(kind: str, note: str) -> Score:
    return Score(kind, 0.0, 0.0, (), "TotallyWrong", BAND_TEXT["TotallyWrong"], error=note)


# -- suites --------------------------------------------------------------------


@dataclass(frozen=True)
class SuiteItem:
    task: PromptTask
    truth: GroundTruth
    reference: Optional[Metamodel] = None


@dataclass(frozen=True)
class SuiteQuestion:
    label: str
    items: tuple[SuiteItem, ...]


def _load_payload(path: Path) -> DiagramPayload:
    if path.suffix.lower() == ".png":
        return DiagramPayload.image(path.read_bytes())
    doc = parse_model_document(path.read_text(encoding="utf-8"))
    if doc.issues:
        raise HarnessError("BAD_SUITE", f"{path} does not validate: {doc.issues[0].message}")
    return DiagramPayload.canonical(doc)


def load_item(path: Path) -> tuple[str, SuiteItem]:
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except ValueError as exc:
        raise HarnessError("BAD_SUITE", f"{path}: {exc}") from None
    if not isinstance(obj, dict) or not {"task", "args", "expected"} <= set(obj):
        raise HarnessError("BAD_SUITE", f"{path}: needs task, args and expected")
    args = dict(obj["args"])
    base = path.parent
    try:
        if "diagrams" in args:
            diagrams = tuple(_load_payload(base / p) for p in args.pop("diagrams"))
        else:
            diagrams = (_load_payload(base / args.pop("diagram")),)
        reference = None
        if "reference" in args:
            ref = _load_payload(base / args.pop("reference")).document
            reference = ref.payload
        elif not diagrams[0].is_image and diagrams[0].document.kind == "metamodel":
            reference = diagrams[0].document.payload
        if isinstance(args.get("metamodel"), str):
            args["metamodel"] = _load_payload(base / args["metamodel"]).document.payload
        task = PromptTask(obj["task"], args, diagrams)
    except (KeyError, OSError, ParseError, ValueError) as exc:
        raise HarnessError("BAD_SUITE", f"{path}: {exc}") from None
    label = obj.get("question") or path.stem.upper()
    return label, SuiteItem(task, GroundTruth(obj["task"], obj["expected"]), reference)


def load_suite(directory: Path | str) -> list[SuiteQuestion]:
    """Read every ``*.json`` ground-truth file in ``directory``."""
    directory = Path(directory)
    if not directory.is_dir():
        raise HarnessError("BAD_SUITE", f"{directory} is not a directory")
    grouped: dict[str, list[SuiteItem]] = {}
    for path in sorted(directory.glob("*.json")):
        label, item = load_item(path)
        grouped.setdefault(label, []).append(item)
    return [SuiteQuestion(label, tuple(items)) for label, items in grouped.items()]


# -- running and reporting -------------------------------------------------------


@dataclass(frozen=True)
class QuestionResult:
    label: str
    scores: tuple[Score, ...]
    latency_ms: int

    @property
    def band(self) -> str:
        if len(self.scores) == 1:
            return self.scores[0].band
        good = sum(s.band == "TotallyCorrect" for s in self.scores)
        if good == len(self.scores):
            return "TotallyCorrect"
        return "PartiallyCorrect" if good else "TotallyWrong"

    @property
    def display(self) -> str:
        if len(self.scores) == 1:
            return self.scores[0].display
        return _letters([s.band == "TotallyCorrect" for s in self.scores])

    def to_json(self) -> dict:
        return {
            "question": self.label,
            "band": self.band,
            "display": self.display,
            "latencyMs": self.latency_ms,
            "parts": [s.to_json() for s in self.scores],
        }


@dataclass(frozen=True)
class RunReport:
    backend_name: str
    questions: tuple[QuestionResult, ...]
    started_at: str
    finished_at: str

    def to_json(self) -> dict:
        return {
            "backend": self.backend_name,
            "startedAt": self.started_at,
            "finishedAt": self.finished_at,
            "questions": [q.to_json() for q in self.questions],
        }


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="milliseconds")


def run_suite(backend: Optional[Backend], suite: Sequence[SuiteQuestion], name: Optional[str] = None) -> RunReport:
    """Ask every question in order; failures become annotated TotallyWrong scores."""
    started = _now()
    results = []
    for question in suite:
        scores = []
        latency = 0
        for item in question.items:
            t0 = time.perf_counter()
            try:
                _, normalized = ask(backend, item.task, item.reference)
                scores.append(score_answer(item.truth, normalized))
            except (BackendError, PayloadError, ModelError, HarnessError) as exc:
                scores.append(failed_score(item.truth.task_kind, f"{exc.code}: {exc.message}"))
            latency += int((time.perf_counter() - t0) * 1000)
        results.append(QuestionResult(question.label, tuple(scores), latency))
    backend_name = name or (backend.name if backend is not None else "none")
    return RunReport(backend_name, tuple(results), started, _now())


def _cell(text: str) -> str:
    return text.replace("|", "\\|").replace("\n", " ")


def render_report(reports: Sequence[RunReport], fmt: str = "markdown-table") -> str:
    if fmt == "json":
        return json.dumps([r.to_json() for r in reports], indent=2, ensure_ascii=False) + "\n"
    if fmt != "markdown-table":
        raise HarnessError("BAD_FORMAT", f"unknown report format {fmt!r}")
    labels: list[str] = []
    for report in reports:
        for q in report.questions:
            if q.label not in labels:
                labels.append(q.label)
    if not labels:
        labels = ["Q1", "Q2", "Q3", "Q4", "Q5"]
    lines = [
        "| Model | " + " | ".join(labels) + " |",
        "|" + "---|" * (len(labels) + 1),
    ]
    for report in reports:
        cells = {q.label: q.display for q in report.questions}
        lines.append("| " + " | ".join(_cell(c) for c in [report.backend_name] + [cells.get(l, "") for l in labels]) + " |")
    return "\n".join(lines) + "\n"
