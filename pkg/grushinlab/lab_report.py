"""Module with functions for writing result files and merging them into a summary."""
import os
import csv
import json
import math
import logging
from typing import Any, Dict, Iterable, List, Optional, Sequence

from .fields import GridField
from .geometry import InputError
from .utils import ensure_dir_exists, only_file_stem

_log = logging.getLogger(__name__)

SUMMARY_SCHEMA_VERSION = 1
SUMMARY_FILE = "summary.json"
CONFIG_SUFFIX = ".config.json"


def format_float(value: float) -> str:
    """Shortest form that reads back to the same double."""
    return "%.17g" % value


def _cell(value: Any) -> str:
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return format_float(value)
    return str(value)


def _finite(value: Any) -> Any:
    """Replace non-finite floats, which JSON can't hold, with None."""
    if isinstance(value, float):
        return value if math.isfinite(value) else None
    if isinstance(value, dict):
        return {str(k): _finite(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_finite(v) for v in value]
    if hasattr(value, "tolist"):
        return _finite(value.tolist())
    return value


def write_json(path: str, data: Dict[str, Any]) -> None:
    ensure_dir_exists(os.path.dirname(os.path.abspath(path)))
    with open(path, "w", newline="\n") as json_file:
        json.dump(_finite(data), json_file, indent=2, sort_keys=True, allow_nan=False)
        json_file.write("\n")


def write_csv(
    path: str, header: Sequence[str], rows: Iterable[Sequence[Any]], config: Optional[Dict[str, Any]] = None
) -> None:
    """Write an RFC-4180 table; the config of the run goes to a sidecar next to it."""
    ensure_dir_exists(os.path.dirname(os.path.abspath(path)))
    count = 0
    with open(path, "w", newline="") as csv_file:
        writer = csv.writer(csv_file, lineterminator="\r\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(value) for value in row])
            count += 1
    if config is not None:
        write_json(os.path.splitext(path)[0] + CONFIG_SUFFIX, {"config": config})
    _log.info("Wrote %d rows to %s", count, path)


def read_csv(path: str) -> List[Dict[str, str]]:
    with open(path, "r", newline="") as csv_file:
        return list(csv.DictReader(csv_file))


def _number(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        return math.nan


def _inequality_summary(rows: List[Dict[str, str]], into: Dict[str, Dict[str, Any]]) -> None:
    for row in rows:
        entry = into.setdefault(
            row["inequality"],
            {"PASS": 0, "FAIL": 0, "REPORT": 0, "max_empirical_constant": None, "min_slack": None},
        )
        entry[row["verdict"]] = entry.get(row["verdict"], 0) + 1
        constant = _number(row["empirical_constant"])
        if math.isfinite(constant):
            current = entry["max_empirical_constant"]
            entry["max_empirical_constant"] = constant if current is None else max(current, constant)
        slack = _number(row["slack"])
        if math.isfinite(slack):
            current = entry["min_slack"]
            entry["min_slack"] = slack if current is None else min(current, slack)


def summarize(out_dir: str) -> Dict[str, Any]:
    """Merge every result file of `out_dir` into one summary and write it as summary.json."""
    if not os.path.isdir(out_dir):
        raise InputError(f"output directory '{out_dir}' does not exist")
    names = sorted(os.listdir(out_dir))
    csv_names = [name for name in names if name.endswith(".csv")]
    json_names = [
        name for name in names if name.endswith(".json") and not name.endswith(CONFIG_SUFFIX) and name != SUMMARY_FILE
    ]
    if not csv_names and not json_names:
        raise InputError(f"no result files in '{out_dir}'")

    files: Dict[str, Any] = {}
    inequalities: Dict[str, Dict[str, Any]] = {}
    for name in csv_names:
        path = os.path.join(out_dir, name)
        rows = read_csv(path)
        columns = list(rows[0].keys()) if rows else []
        if columns[:1] == ["s-grid"]:
            grid = GridField.from_csv(path)
            files[name] = {"grid_field": True, "n_s": grid.s_grid.size, "n_t": grid.t_grid.size}
            continue
        files[name] = {"rows": len(rows), "columns": columns}
        if rows and "verdict" in rows[0] and "inequality" in rows[0]:
            _inequality_summary(rows, inequalities)
        if "passed" in columns:
            files[name]["failed_rows"] = sum(1 for row in rows if row["passed"] == "false")

    results: Dict[str, Any] = {}
    for name in json_names:
        with open(os.path.join(out_dir, name), "r") as json_file:
            results[only_file_stem(name)] = json.load(json_file)

    failed = sorted(name for name, entry in inequalities.items() if entry["FAIL"])
    failed += sorted(only_file_stem(name) for name, entry in files.items() if entry.get("failed_rows"))
    failed += sorted(
        name for name, result in results.items() if isinstance(result, dict) and result.get("passed") is False
    )
    summary = {
        "schema_version": SUMMARY_SCHEMA_VERSION,
        "files": files,
        "inequalities": inequalities,
        "results": results,
        "failed": failed,
        "passed": not failed,
    }
    write_json(os.path.join(out_dir, SUMMARY_FILE), summary)
    _log.info("Summarized %d files from %s", len(csv_names) + len(json_names), out_dir)
    return summary
