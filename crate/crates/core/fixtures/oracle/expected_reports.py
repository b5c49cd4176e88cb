#!/usr/bin/env python3
"""Independent oracle for the analyzer report goldens.

Walks CppCheck XML and Infer report.json with the Python standard library and
writes the expected canonical report JSON next to each fixture. The Rust
parsers are compared byte-for-byte against these files.
"""
import json
import sys
import xml.etree.ElementTree as ET
from pathlib import Path

NATIVE_ORDER = [
    "Null Dereference", "Nullptr Dereference", "Resource Leak",
    "Buffer Overrun L1", "Buffer Overrun L2", "Buffer Overrun L3", "Buffer Overrun S2",
    "Memory Leak", "Integer Overflow L2", "Use After Lifetime", "Use After Free",
    "Inferbo Alloc Is Zero",
]
INFER_LABELS = {
    "NULL_DEREFERENCE": "Null Dereference",
    "NULLPTR_DEREFERENCE": "Nullptr Dereference",
    "RESOURCE_LEAK": "Resource Leak",
    "PULSE_RESOURCE_LEAK": "Resource Leak",
    "BUFFER_OVERRUN_L1": "Buffer Overrun L1",
    "BUFFER_OVERRUN_L2": "Buffer Overrun L2",
    "BUFFER_OVERRUN_L3": "Buffer Overrun L3",
    "BUFFER_OVERRUN_S2": "Buffer Overrun S2",
    "MEMORY_LEAK": "Memory Leak",
    "MEMORY_LEAK_C": "Memory Leak",
    "PULSE_MEMORY_LEAK_C": "Memory Leak",
    "INTEGER_OVERFLOW_L2": "Integer Overflow L2",
    "USE_AFTER_LIFETIME": "Use After Lifetime",
    "USE_AFTER_FREE": "Use After Free",
    "INFERBO_ALLOC_IS_ZERO": "Inferbo Alloc Is Zero",
}
SEVERITY_ORDER = {"error": 0, "warning": 1}
ANALYZER_ORDER = {"cppcheck": 0, "infer": 1, "builtin": 2}


def category_key(cat):
    if cat.startswith("CWE-"):
        return (0, int(cat[4:]), "")
    if cat in NATIVE_ORDER:
        return (1, NATIVE_ORDER.index(cat), "")
    return (1, len(NATIVE_ORDER), cat)


def sort_key(d):
    col = d.get("column")
    return (d["file"], d["line"], (0, 0) if col is None else (1, col),
            category_key(d["category"]), SEVERITY_ORDER[d["severity"]],
            ANALYZER_ORDER[d["analyzer"]], d["message"])


def diag(file, line, column, category, message, analyzer, severity):
    d = {"file": file, "line": line}
    if column is not None:
        d["column"] = column
    d.update(category=category, message=message, analyzer=analyzer, severity=severity)
    return d


def cppcheck(path):
    root = ET.parse(path).getroot()
    out = []
    for err in root.iter("error"):
        sev = err.get("severity")
        if sev in ("style", "information", "debug", "none"):
            continue
        severity = "error" if sev == "error" else "warning"
        cwe = err.get("cwe")
        category = f"CWE-{cwe}" if cwe and cwe != "0" else f"Unknown:{err.get('id')}"
        loc = err.find("location")
        column = int(loc.get("column")) if loc.get("column") else None
        out.append(diag(loc.get("file"), max(1, int(loc.get("line"))), column,
                        category, err.get("msg"), "cppcheck", severity))
    return out, "cppcheck"


def infer(path):
    out = []
    for issue in json.loads(Path(path).read_text()):
        bt = issue["bug_type"]
        category = INFER_LABELS.get(bt, f"Unknown:{bt}")
        sev = issue.get("severity", "").lower()
        severity = "error" if sev in ("error", "critical") else "warning"
        col = issue.get("column", -1)
        out.append(diag(issue["file"], max(1, issue["line"]), col if col >= 1 else None,
                        category, issue.get("qualifier") or bt, "infer", severity))
    return out, "infer"


def main(fixtures):
    for path in sorted(Path(fixtures).iterdir()):
        if path.name.endswith(".cppcheck.xml"):
            diags, analyzer = cppcheck(path)
            stem = path.name[: -len(".xml")]
        elif path.name.endswith(".infer.json"):
            diags, analyzer = infer(path)
            stem = path.name[: -len(".json")]
        else:
            continue
        diags.sort(key=sort_key)
        report = {"diagnostics": diags, "analyzersRun": [analyzer], "analyzerFailures": []}
        target = path.parent / f"{stem}.expected.json"
        target.write_text(json.dumps(report, indent=2, ensure_ascii=False))
        print(f"{target.name}: {len(diags)} diagnostics")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else Path(__file__).resolve().parent.parent)
