"""Warning reports: a versioned JSON document and a plain-text rendering."""

from __future__ import annotations

import json
from typing import List

from .interproc import KnowledgeBase, StackWarning, group_warnings

SCHEMA_VERSION = 1


def _warning_record(w: StackWarning) -> dict:
    return {
        "ctx": w.use_ctx,
        "addr": f"{w.use_addr:#x}",
        "var": [w.var.spd, w.var.fld],
        "kind": w.kind,
        "witness_path": [str(b) for b in w.witness_path],
        "origins": [[fn, spd] for fn, spd in w.origins],
        "status": w.status,
        "annotations": list(w.annotations),
    }


def build_report(kb: KnowledgeBase, source: str = "") -> dict:
    res = kb.result
    groups = group_warnings(res.warnings)
    filtered = [w for w in res.warnings if w.filtered]
    return {
        "schema_version": SCHEMA_VERSION,
        "source": source,
        "summary": {
            "functions": len(res.states),
            "warnings": sum(1 for w in res.warnings if not w.filtered),
            "unique_warnings": len(groups),
            "filtered": len(filtered),
            "rounds": len(res.rounds),
            "converged": res.converged,
            "capped_derivations": kb.capped,
        },
        "groups": [
            {
                "group_hash": g.group_hash,
                "origin": {"function": g.origin[0], "spd": g.origin[1]},
                "spd": g.spd,
                "fields": g.fields,
                "witness_path": [str(b) for b in g.members[0].witness_path],
                "members": [_warning_record(w) for w in g.members],
                "annotations": sorted({a for w in g.members for a in w.annotations}),
            }
            for g in groups
        ],
        "filtered": [_warning_record(w) for w in filtered],
        "diagnostics": sorted(set(res.diagnostics + kb.prep.diagnostics + kb.plugin_errors)),
    }


def to_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"


def to_text(report: dict) -> str:
    s = report["summary"]
    lines: List[str] = []
    if report.get("source"):
        lines.append(f"source: {report['source']}")
    lines.append(f"{s['unique_warnings']} warning group(s), {s['warnings']} warning(s), "
                 f"{s['filtered']} filtered, {s['rounds']} round(s)")
    for g in report["groups"]:
        o = g["origin"]
        lines.append(f"[{g['group_hash']}] origin {o['function']} spd {o['spd']:#x}" if o["spd"] >= 0
                     else f"[{g['group_hash']}] origin {o['function']} spd -{-o['spd']:#x}")
        for m in g["members"]:
            lines.append(f"  {m['ctx']} {m['addr']} var ({m['var'][0]},{m['var'][1]}) {m['kind']}"
                         f"  path {' -> '.join(m['witness_path'])}")
    for m in report["filtered"]:
        lines.append(f"filtered: {m['ctx']} {m['addr']} ({m['status']}) {'; '.join(m['annotations'])}")
    for d in report["diagnostics"]:
        lines.append(f"note: {d}")
    return "\n".join(lines) + "\n"
