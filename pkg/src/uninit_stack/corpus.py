"""Paired vulnerable/patched corpus runner."""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional

from .driver import RunConfig, analyze_path, guess_kind


class ManifestError(ValueError):
    pass


@dataclass
class CaseSpec:
    name: str
    category: str
    expected: List[dict]          # [{"ctx": ..., "addr": int}] that the vulnerable variant must flag
    description: str = ""


@dataclass
class CaseResult:
    name: str
    category: str
    vuln_groups: int
    patched_groups: int
    missing: List[str]
    detected: bool
    clean: bool
    seconds: float
    reports: dict = field(default_factory=dict, repr=False)

    @property
    def passed(self) -> bool:
        return self.detected and self.clean


def load_manifest(directory) -> List[CaseSpec]:
    path = Path(directory) / "manifest.json"
    if not path.exists():
        return []
    try:
        data = json.loads(path.read_text())
        cases = []
        for c in data["cases"]:
            exp = [{"ctx": e["ctx"], "addr": int(str(e["addr"]), 0)} for e in c.get("expected", [])]
            cases.append(CaseSpec(c["name"], c.get("category", ""), exp, c.get("description", "")))
    except (KeyError, TypeError, ValueError) as exc:
        raise ManifestError(f"{path}: {exc}") from exc
    for c in cases:
        for variant in ("vuln", "patched"):
            if not (Path(directory) / f"{c.name}.{variant}.il").exists():
                raise ManifestError(f"{path}: missing {c.name}.{variant}.il")
    return cases


def run_case(directory, case: CaseSpec, base: RunConfig) -> CaseResult:
    t0 = time.perf_counter()
    reports = {}
    for variant in ("vuln", "patched"):
        p = str(Path(directory) / f"{case.name}.{variant}.il")
        _, reports[variant] = analyze_path(replace(base, input=p, input_kind=guess_kind(p)))
    flagged = {(m["ctx"], int(m["addr"], 16)) for g in reports["vuln"]["groups"] for m in g["members"]}
    missing = [f"{e['ctx']}@{e['addr']:#x}" for e in case.expected if (e["ctx"], e["addr"]) not in flagged]
    vg = len(reports["vuln"]["groups"])
    pg = len(reports["patched"]["groups"])
    return CaseResult(case.name, case.category, vg, pg, missing, vg > 0 and not missing, pg == 0,
                      time.perf_counter() - t0, reports)


def run_corpus(directory, base: Optional[RunConfig] = None, jobs: int = 1) -> List[CaseResult]:
    base = base or RunConfig()
    cases = load_manifest(directory)
    if jobs <= 1:
        return [run_case(directory, c, base) for c in cases]
    with ThreadPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(lambda c: run_case(directory, c, base), cases))


def format_matrix(results: List[CaseResult]) -> str:
    rows = [f"{'case':<28} {'category':<26} {'vuln':>5} {'patched':>8}  result"]
    for r in results:
        rows.append(f"{r.name:<28} {r.category:<26} {r.vuln_groups:>5} {r.patched_groups:>8}  "
                    f"{'PASS' if r.passed else 'FAIL'}" + (f" (missing {', '.join(r.missing)})" if r.missing else ""))
    ok = sum(r.passed for r in results)
    rows.append(f"{ok}/{len(results)} cases pass")
    return "\n".join(rows) + "\n"
