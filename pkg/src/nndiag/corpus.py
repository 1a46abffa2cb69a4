"""Buggy/correct model corpus: each case pairs a model and dataset with the expected report."""

from __future__ import annotations

import fnmatch
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional

from nndiag.datasets import DatasetSpec, load_or_generate_dataset
from nndiag.detectors import MonitorConfig
from nndiag.monitor import DiagnosisReport, run_diagnosis
from nndiag.specio import dataset_spec_for, load_model_spec, model_spec_from_dict


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class CorpusCase:
    name: str
    model: object
    dataset: object
    expect_verdict: str
    expect_message: Optional[str]
    base: Path


@dataclass
class CaseResult:
    name: str
    passed: bool
    verdict: str = ""
    message: str = ""
    error: str = ""
    duration: float = 0.0


def builtin_manifest() -> Path:
    return Path(str(resources.files("nndiag") / "corpus" / "manifest.json"))


def matches(pattern: Optional[str], value: Optional[str]) -> bool:
    """``fnmatch`` against any of the ``|``-separated alternatives; ``None`` only matches ``None``."""
    if pattern is None or value is None:
        return pattern is None and value is None
    return any(fnmatch.fnmatchcase(value, alt.strip()) for alt in pattern.split("|"))


def load_manifest(path) -> list:
    """Cases as ``CorpusCase`` or, for malformed entries, ``(name, error)`` pairs."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from None
    entries = doc.get("cases") if isinstance(doc, dict) else None
    if not isinstance(entries, list):
        raise ManifestError(f"{path}: expected an object with a 'cases' list")
    cases = []
    for i, entry in enumerate(entries, start=1):
        name = entry.get("name", f"case{i}") if isinstance(entry, dict) else f"case{i}"
        try:
            if not isinstance(entry, dict):
                raise ManifestError("case must be an object")
            for key in ("model", "data", "expect_verdict"):
                if key not in entry:
                    raise ManifestError(f"missing '{key}'")
            cases.append(CorpusCase(
                name=name,
                model=entry["model"],
                dataset=entry["data"],
                expect_verdict=entry["expect_verdict"],
                expect_message=entry.get("expect_message"),
                base=path.parent,
            ))
        except ManifestError as exc:
            cases.append((name, str(exc)))
    return cases


def _resolve(case: CorpusCase):
    if isinstance(case.model, dict):
        spec = model_spec_from_dict(case.model)
    else:
        spec = load_model_spec(case.base / case.model)
    if isinstance(case.dataset, dict):
        ds = DatasetSpec.from_dict(case.dataset, case.base)
    else:
        ds = dataset_spec_for(case.base / case.dataset)
    return spec, load_or_generate_dataset(ds)


def run_case(case: CorpusCase, cfg: MonitorConfig) -> tuple[CaseResult, Optional[DiagnosisReport]]:
    try:
        spec, data = _resolve(case)
        report = run_diagnosis(spec, data, cfg)
    except Exception as exc:  # reported per case, the run goes on
        return CaseResult(case.name, False, error=f"{type(exc).__name__}: {exc}"), None
    verdict = report.verdict.render()
    message = None if report.message is None else report.message.text
    ok = matches(case.expect_verdict, verdict) and matches(case.expect_message, message)
    return CaseResult(case.name, ok, verdict, message or "-", duration=report.duration), report


def run_corpus(path=None, cfg: Optional[MonitorConfig] = None, jobs: int = 1) -> list[CaseResult]:
    cfg = cfg or MonitorConfig()
    cases = load_manifest(path or builtin_manifest())

    def one(case):
        if isinstance(case, tuple):
            return CaseResult(case[0], False, error=f"manifest: {case[1]}")
        return run_case(case, cfg)[0]

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(one, cases))
    return [one(case) for case in cases]


def format_results(results: list[CaseResult]) -> str:
    lines = []
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        detail = r.error or f"{r.verdict}  {r.message}"
        lines.append(f"{status}  {r.name:<28} {detail}")
    passed = sum(r.passed for r in results)
    lines.append(f"{passed}/{len(results)} passed" if results else "0 cases")
    return "\n".join(lines)
