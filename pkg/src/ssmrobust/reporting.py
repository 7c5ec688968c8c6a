"""Accuracy report containers with CSV and markdown emission.

CSV files are fully reproducible: header comment lines carry the resolved
config hash and seed schedule (never timestamps), floats are written with
repr so parsing a file reconstructs the exact report object, and human tables
print accuracies as percentages with two decimals.
"""

from dataclasses import dataclass, field

from .errors import FormatError

TOOL_VERSION = "ssmrobust 0.1.0"

REPORT_COLUMNS = {
    "whitebox": ("condition", "epsilon", "accuracy", "n", "nonfinite"),
    "patchdrop": ("condition", "ratio", "accuracy", "n", "nonfinite"),
    "corruption": ("condition", "severity", "accuracy", "n", "nonfinite"),
    "bitflip_random": ("condition", "budget", "mean_accuracy", "std_accuracy", "trials", "nonfinite"),
    "bitflip_layerwise": ("condition", "budget", "mean_accuracy", "std_accuracy", "trials", "nonfinite"),
    "bitflip_worst": ("condition", "budget", "seed", "fast_accuracy", "full_accuracy", "nonfinite"),
    "bitflip_activations": ("condition", "budget", "accuracy", "n", "nonfinite"),
    "training": ("epoch", "mean_loss", "val_accuracy"),
}


def report_meta(kind: str, extra=None) -> dict:
    meta = {"tool": TOOL_VERSION}
    if extra:
        meta.update({str(k): str(v) for k, v in extra.items()})
    return meta


@dataclass
class EvalReport:
    kind: str
    rows: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)
    columns: tuple = ()

    def __post_init__(self):
        if not self.columns:
            if self.kind not in REPORT_COLUMNS:
                raise ValueError(f"unknown report kind {self.kind!r}")
            self.columns = REPORT_COLUMNS[self.kind]
        self.rows = [tuple(r) for r in self.rows]
        for row in self.rows:
            if len(row) != len(self.columns):
                raise ValueError(
                    f"row width {len(row)} does not match columns {self.columns}"
                )

    def condition_rows(self, condition=None):
        if condition is None:
            return [r for r in self.rows if r[0] != "clean" and r[0] != "baseline"]
        return [r for r in self.rows if r[0] == condition]


def _cell_to_str(value) -> str:
    if isinstance(value, bool):
        raise TypeError("boolean report cells are not supported")
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, str):
        if "," in value or "\n" in value or value.startswith("#"):
            raise ValueError(f"label cell {value!r} contains reserved characters")
        return value
    # numpy scalars
    if hasattr(value, "item"):
        return _cell_to_str(value.item())
    raise TypeError(f"unsupported cell type {type(value)!r}")


def _str_to_cell(text: str):
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text


def emit_csv(report: EvalReport, path) -> None:
    lines = [f"# kind = {report.kind}"]
    for key in sorted(report.meta):
        lines.append(f"# {key} = {report.meta[key]}")
    lines.append(",".join(report.columns))
    for row in report.rows:
        lines.append(",".join(_cell_to_str(v) for v in row))
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")


def parse_csv(path) -> EvalReport:
    with open(path, "r", encoding="utf-8") as f:
        lines = [ln.rstrip("\n") for ln in f if ln.strip()]
    meta = {}
    kind = None
    header = None
    rows = []
    for ln in lines:
        if ln.startswith("# "):
            body = ln[2:]
            if " = " not in body:
                raise FormatError(f"malformed meta line {ln!r}")
            key, value = body.split(" = ", 1)
            if key == "kind":
                kind = value
            else:
                meta[key] = value
        elif header is None:
            header = tuple(ln.split(","))
        else:
            rows.append(tuple(_str_to_cell(c) for c in ln.split(",")))
    if kind is None or header is None:
        raise FormatError("report CSV is missing its kind line or header row")
    return EvalReport(kind, rows=rows, meta=meta, columns=header)


def _human_cell(column: str, value) -> str:
    if isinstance(value, float) and ("accuracy" in column or column == "ratio"):
        return f"{value * 100:.2f}"
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def emit_markdown(report: EvalReport, path) -> None:
    """Human-readable table; accuracy and ratio columns print as percent."""
    head = "| " + " | ".join(report.columns) + " |"
    sep = "| " + " | ".join("---" for _ in report.columns) + " |"
    lines = [f"**{report.kind}**", ""]
    for key in sorted(report.meta):
        lines.append(f"- {key}: {report.meta[key]}")
    lines += ["", head, sep]
    for row in report.rows:
        lines.append(
            "| " + " | ".join(_human_cell(c, v) for c, v in zip(report.columns, row)) + " |"
        )
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")


def emit_report(report: EvalReport, csv_path) -> tuple:
    """Write the CSV and a markdown table alongside; returns both paths."""
    csv_path = str(csv_path)
    md_path = csv_path[:-4] + ".md" if csv_path.endswith(".csv") else csv_path + ".md"
    emit_csv(report, csv_path)
    emit_markdown(report, md_path)
    return csv_path, md_path


def merge_reports(named_reports) -> EvalReport:
    """Combine same-kind reports into one table keyed by dataset name."""
    named_reports = list(named_reports)
    if not named_reports:
        raise ValueError("nothing to merge")
    kind = named_reports[0][1].kind
    columns = named_reports[0][1].columns
    meta = {"tool": TOOL_VERSION, "merged": str(len(named_reports))}
    rows = []
    for name, report in named_reports:
        if report.kind != kind or report.columns != columns:
            raise ValueError(f"report {name!r} has mismatched kind or columns")
        for key, value in report.meta.items():
            if key != "tool":
                meta[f"{name}.{key}"] = value
        rows.extend((name,) + row for row in report.rows)
    return EvalReport(kind, rows=rows, meta=meta, columns=("dataset",) + tuple(columns))
