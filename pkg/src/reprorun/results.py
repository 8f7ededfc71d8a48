"""Fold per-version outcomes into combined verdicts and grouped reports.

Combination rules per file across interpreter versions: any success wins,
otherwise any time-limit-exceeded makes the file TLE, otherwise it is an
error. Dataset aggregation: a package with at least one successful file
is a success, a package whose remaining files only timed out is excluded,
otherwise it is an error. Success rates always report numerator and
denominator explicitly; TLE and unassigned files never enter a
denominator. All report functions are read-only and deterministic:
identical stores produce byte-identical reports.
"""

from __future__ import annotations

import csv
import io
import json
from collections import Counter
from dataclasses import dataclass, field

from .executor import (
    CATEGORY_OTHER,
    ERROR_CATEGORIES,
    MODE_CLEANED,
    MODE_RAW,
    VERDICT_ERROR,
    VERDICT_SUCCESS,
    VERDICT_TLE,
    VERDICT_UNASSIGNED,
    ExecutionOutcome,
)

DATASET_SUCCESS = "success"
DATASET_ERROR = "error"
DATASET_EXCLUDED_TLE = "excluded_tle"
DATASET_EXCLUDED_NO_RESULTS = "excluded_no_results"

GROUP_KEYS = ("journal", "policy_class", "year", "subject", "interpreter_label")

UNLABELED = "(unlabeled)"

_SOCIAL_SCIENCE = {"social science", "social sciences"}


class MismatchError(Exception):
    """compare_runs was given runs over disjoint file sets."""


@dataclass
class CombinedResult:
    """Per-file verdict folded across interpreter versions."""

    package_id: str
    file: str
    cleaning_mode: str
    verdict: str
    error_category: str | None = None

    def to_dict(self) -> dict:
        return {
            "package_id": self.package_id,
            "file": self.file,
            "cleaning_mode": self.cleaning_mode,
            "verdict": self.verdict,
            "error_category": self.error_category,
        }


@dataclass
class DatasetResult:
    """Per-package verdict folded across that package's combined file results."""

    package_id: str
    cleaning_mode: str
    verdict: str
    file_counts: dict = field(default_factory=dict)
    n_unassigned: int = 0

    def to_dict(self) -> dict:
        return {
            "package_id": self.package_id,
            "cleaning_mode": self.cleaning_mode,
            "verdict": self.verdict,
            "file_counts": self.file_counts,
            "n_unassigned": self.n_unassigned,
        }


@dataclass
class SuccessRate:
    numerator: int
    denominator: int

    @property
    def rate(self) -> float | None:
        return self.numerator / self.denominator if self.denominator else None

    def to_dict(self) -> dict:
        return {"rate": self.rate, "numerator": self.numerator, "denominator": self.denominator}


def combine_outcomes(verdicts) -> str:
    """Fold a multiset of per-interpreter verdicts into one combined verdict.

    Order-insensitive: any success -> success; else any tle -> tle; else
    all error -> error. Unassigned entries are not results and are
    ignored; an empty multiset stays unassigned.
    """
    vs = [v for v in verdicts if v != VERDICT_UNASSIGNED]
    if VERDICT_SUCCESS in vs:
        return VERDICT_SUCCESS
    if VERDICT_TLE in vs:
        return VERDICT_TLE
    if vs:
        return VERDICT_ERROR
    return VERDICT_UNASSIGNED


def _majority_category(categories: list[str]) -> str:
    counts = Counter(categories)
    return max(counts, key=lambda c: (counts[c], -ERROR_CATEGORIES.index(c)))


def combine_file_outcomes(outcomes: list[ExecutionOutcome]) -> CombinedResult:
    """Combined verdict for one file's outcomes across interpreters.

    For a combined error the category is the most frequent one among the
    per-interpreter errors (ties broken by the classifier's rule order),
    so cleaning-effect transitions have a single before/after state.
    """
    first = outcomes[0]
    verdict = combine_outcomes(o.verdict for o in outcomes)
    category = None
    if verdict == VERDICT_ERROR:
        category = _majority_category(
            [o.error_category or CATEGORY_OTHER for o in outcomes if o.verdict == VERDICT_ERROR]
        )
    return CombinedResult(
        package_id=first.package_id,
        file=first.file,
        cleaning_mode=first.cleaning_mode,
        verdict=verdict,
        error_category=category,
    )


def combined_results(outcomes: list[ExecutionOutcome], mode: str) -> list[CombinedResult]:
    """Per-file combined verdicts for one cleaning mode, sorted by (package, file)."""
    groups: dict[tuple[str, str], list[ExecutionOutcome]] = {}
    for outcome in outcomes:
        if outcome.cleaning_mode != mode:
            continue
        groups.setdefault((outcome.package_id, outcome.file), []).append(outcome)
    return [combine_file_outcomes(groups[key]) for key in sorted(groups)]


def aggregate_dataset(file_results: list[CombinedResult]) -> DatasetResult:
    """Fold one package's combined file verdicts into a dataset verdict.

    Any successful file makes the dataset a success (even when other
    files timed out); otherwise any TLE excludes the dataset; otherwise
    it is an error. An empty input is excluded with reason no_results.
    """
    pids = {r.package_id for r in file_results}
    modes = {r.cleaning_mode for r in file_results}
    if len(pids) > 1 or len(modes) > 1:
        raise ValueError(f"mixed packages/modes in dataset aggregation: {pids} {modes}")
    counts = Counter(r.verdict for r in file_results if r.verdict != VERDICT_UNASSIGNED)
    n_unassigned = sum(1 for r in file_results if r.verdict == VERDICT_UNASSIGNED)
    if counts[VERDICT_SUCCESS]:
        verdict = DATASET_SUCCESS
    elif counts[VERDICT_TLE]:
        verdict = DATASET_EXCLUDED_TLE
    elif counts[VERDICT_ERROR]:
        verdict = DATASET_ERROR
    else:
        verdict = DATASET_EXCLUDED_NO_RESULTS
    return DatasetResult(
        package_id=next(iter(pids), ""),
        cleaning_mode=next(iter(modes), ""),
        verdict=verdict,
        file_counts=dict(sorted(counts.items())),
        n_unassigned=n_unassigned,
    )


def dataset_results(combined: list[CombinedResult]) -> list[DatasetResult]:
    groups: dict[tuple[str, str], list[CombinedResult]] = {}
    for result in combined:
        groups.setdefault((result.package_id, result.cleaning_mode), []).append(result)
    return [aggregate_dataset(groups[key]) for key in sorted(groups)]


def success_rate(results, level: str = "file") -> SuccessRate:
    """Success rate with explicit counts; only explicit success/error verdicts count.

    TLE, unassigned, and excluded datasets never enter the denominator,
    matching how the source rates are computed.
    """
    if level not in ("file", "dataset"):
        raise ValueError(f"unknown level {level!r}")
    verdicts = [r.verdict for r in results]
    numerator = sum(1 for v in verdicts if v == VERDICT_SUCCESS)
    denominator = numerator + sum(1 for v in verdicts if v == VERDICT_ERROR)
    return SuccessRate(numerator, denominator)


def _state(result: CombinedResult) -> str:
    if result.verdict == VERDICT_SUCCESS:
        return VERDICT_SUCCESS
    return result.error_category or CATEGORY_OTHER


@dataclass
class CleaningEffectReport:
    """Raw-vs-cleaned comparison restricted to files explicit in both runs."""

    n_common_files: int
    n_restricted: int
    fixed: int
    broken: int
    unchanged_success: int
    unchanged_error: int
    transitions: list[dict]
    raw_rate: SuccessRate
    cleaned_rate: SuccessRate
    best_of_both: SuccessRate

    def to_dict(self) -> dict:
        return {
            "n_common_files": self.n_common_files,
            "n_restricted": self.n_restricted,
            "fixed": self.fixed,
            "broken": self.broken,
            "unchanged_success": self.unchanged_success,
            "unchanged_error": self.unchanged_error,
            "transitions": self.transitions,
            "raw_rate": self.raw_rate.to_dict(),
            "cleaned_rate": self.cleaned_rate.to_dict(),
            "best_of_both": self.best_of_both.to_dict(),
        }


def compare_runs(raw: list[CombinedResult], cleaned: list[CombinedResult]) -> CleaningEffectReport:
    """Cleaning-effect report over files with explicit verdicts in both modes.

    Emits the error-category transition matrix, fixed/broken/unchanged
    counts, per-mode rates on the restricted set, and the best-of-both
    rate (success if either mode succeeded).
    """
    raw_by = {(r.package_id, r.file): r for r in raw}
    cleaned_by = {(r.package_id, r.file): r for r in cleaned}
    common = sorted(set(raw_by) & set(cleaned_by))
    if not common and (raw_by or cleaned_by):
        raise MismatchError("raw and cleaned runs cover disjoint file sets")

    explicit = (VERDICT_SUCCESS, VERDICT_ERROR)
    pairs = [
        (raw_by[key], cleaned_by[key])
        for key in common
        if raw_by[key].verdict in explicit and cleaned_by[key].verdict in explicit
    ]
    transitions: Counter = Counter((_state(r), _state(c)) for r, c in pairs)
    fixed = sum(1 for r, c in pairs if r.verdict == VERDICT_ERROR and c.verdict == VERDICT_SUCCESS)
    broken = sum(1 for r, c in pairs if r.verdict == VERDICT_SUCCESS and c.verdict == VERDICT_ERROR)
    unchanged_success = sum(
        1 for r, c in pairs if r.verdict == VERDICT_SUCCESS and c.verdict == VERDICT_SUCCESS
    )
    unchanged_error = sum(
        1 for r, c in pairs if r.verdict == VERDICT_ERROR and c.verdict == VERDICT_ERROR
    )
    best = sum(1 for r, c in pairs if VERDICT_SUCCESS in (r.verdict, c.verdict))
    return CleaningEffectReport(
        n_common_files=len(common),
        n_restricted=len(pairs),
        fixed=fixed,
        broken=broken,
        unchanged_success=unchanged_success,
        unchanged_error=unchanged_error,
        transitions=[
            {"from": frm, "to": to, "count": count}
            for (frm, to), count in sorted(transitions.items())
        ],
        raw_rate=success_rate([r for r, _ in pairs]),
        cleaned_rate=success_rate([c for _, c in pairs]),
        best_of_both=SuccessRate(best, len(pairs)),
    )


def _subject_value(labels) -> str:
    if isinstance(labels, str):
        labels = [labels]
    labels = [str(v) for v in labels if str(v).strip()]
    specific = [v for v in labels if v.strip().lower() not in _SOCIAL_SCIENCE]
    if specific:
        return specific[0]
    return labels[0] if labels else UNLABELED


def group_value(package_record: dict | None, metadata_key: str) -> str:
    """Group label for one package under a metadata key.

    Subjects follow the specificity rule: a generic social-science label
    is dropped whenever a more specific field coexists. The year falls
    back to the publication date when not given explicitly.
    """
    record = package_record or {}
    meta = record.get("metadata", {}) or {}
    if metadata_key == "subject":
        value = meta.get("subject")
        return _subject_value(value) if value else UNLABELED
    if metadata_key == "year":
        value = meta.get("year")
        if not value:
            date = record.get("publication_date") or ""
            value = date[:4] if len(date) >= 4 and date[:4].isdigit() else None
        return str(value) if value else UNLABELED
    value = meta.get(metadata_key)
    return str(value) if value else UNLABELED


def _rate_row(group: str, file_rate: SuccessRate, dataset_rate: SuccessRate) -> dict:
    return {
        "group": group,
        "file_success_rate": file_rate.rate,
        "dataset_success_rate": dataset_rate.rate,
        "n_files": file_rate.denominator,
        "n_datasets": dataset_rate.denominator,
    }


def _per_interpreter_rows(outcomes: list[ExecutionOutcome], mode: str) -> list[dict]:
    labels = sorted({o.interpreter_label for o in outcomes if o.cleaning_mode == mode})
    rows = []
    for label in labels:
        selected = [o for o in outcomes if o.cleaning_mode == mode and o.interpreter_label == label]
        per_package: dict[str, list[str]] = {}
        for o in selected:
            per_package.setdefault(o.package_id, []).append(o.verdict)
        dataset_verdicts = []
        for verdicts in per_package.values():
            folded = combine_outcomes(verdicts)  # same precedence at dataset level
            if folded == VERDICT_TLE:
                continue  # excluded, like a TLE-only dataset
            if folded != VERDICT_UNASSIGNED:
                dataset_verdicts.append(folded)
        file_rate = SuccessRate(
            sum(1 for o in selected if o.verdict == VERDICT_SUCCESS),
            sum(1 for o in selected if o.verdict in (VERDICT_SUCCESS, VERDICT_ERROR)),
        )
        dataset_rate = SuccessRate(
            sum(1 for v in dataset_verdicts if v == VERDICT_SUCCESS), len(dataset_verdicts)
        )
        rows.append(_rate_row(label, file_rate, dataset_rate))
    return rows


def group_report(store, metadata_key: str, mode: str = MODE_CLEANED) -> list[dict]:
    """One row per group value: file and dataset success rates plus their n.

    ``n_files`` and ``n_datasets`` are the rate denominators (explicit
    success/error verdicts only). The synthetic key ``interpreter_label``
    groups the uncombined per-version outcomes instead of package
    metadata; packages missing the requested key group under
    ``(unlabeled)``.
    """
    outcomes = store.outcomes()
    if metadata_key == "interpreter_label":
        return _per_interpreter_rows(outcomes, mode)

    packages = store.packages()
    combined = combined_results(outcomes, mode)
    by_group: dict[str, list[CombinedResult]] = {}
    for result in combined:
        group = group_value(packages.get(result.package_id), metadata_key)
        by_group.setdefault(group, []).append(result)

    rows = []
    for group in sorted(by_group):
        results = by_group[group]
        file_rate = success_rate(results, level="file")
        datasets = dataset_results(results)
        dataset_rate = success_rate(datasets, level="dataset")
        rows.append(_rate_row(group, file_rate, dataset_rate))
    return rows


def mode_summary(store, mode: str) -> dict:
    """Verdict counts and rates for one cleaning mode."""
    combined = combined_results(store.outcomes(), mode)
    datasets = dataset_results(combined)
    verdict_counts = Counter(r.verdict for r in combined)
    dataset_counts = Counter(d.verdict for d in datasets)
    return {
        "mode": mode,
        "file_verdicts": dict(sorted(verdict_counts.items())),
        "dataset_verdicts": dict(sorted(dataset_counts.items())),
        "file_rate": success_rate(combined, level="file").to_dict(),
        "dataset_rate": success_rate(datasets, level="dataset").to_dict(),
    }


def overview(store) -> dict:
    """Whole-run report: per-mode summaries plus the cleaning comparison."""
    modes = sorted({o.cleaning_mode for o in store.outcomes()})
    packages = store.packages()
    report: dict = {
        "run_id": store.run_id,
        "packages": {
            "total": len(packages),
            "fetch_status_counts": dict(
                sorted(Counter(r.get("fetch_status", "ok") for r in packages.values()).items())
            ),
        },
        "modes": [mode_summary(store, m) for m in modes],
    }
    if MODE_RAW in modes and MODE_CLEANED in modes:
        raw = combined_results(store.outcomes(), MODE_RAW)
        cleaned = combined_results(store.outcomes(), MODE_CLEANED)
        report["cleaning_effect"] = compare_runs(raw, cleaned).to_dict()
    return report


# --- rendering ----------------------------------------------------------------

GROUP_COLUMNS = ("group", "file_success_rate", "dataset_success_rate", "n_files", "n_datasets")

_AGGREGATION_FOOTNOTE = (
    "note: a dataset with any successful file counts as success even if other files"
    " timed out; datasets whose files produced no success and at least one timeout"
    " are excluded from dataset-level rates."
)


def render_group_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=GROUP_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({col: row[col] for col in GROUP_COLUMNS})
    return buf.getvalue()


def render_json(payload) -> str:
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def _fmt_rate(rate: float | None) -> str:
    return "n/a" if rate is None else f"{100 * rate:.1f}%"


def render_overview_text(report: dict) -> str:
    lines = [f"run {report.get('run_id', '?')}"]
    packages = report.get("packages")
    if packages:
        lines.append(
            f"packages: {packages['total']} (fetch status {packages['fetch_status_counts']})"
        )
    for mode in report["modes"]:
        fr, dr = mode["file_rate"], mode["dataset_rate"]
        lines.append(
            f"[{mode['mode']}] file success {_fmt_rate(fr['rate'])}"
            f" ({fr['numerator']}/{fr['denominator']}),"
            f" dataset success {_fmt_rate(dr['rate'])}"
            f" ({dr['numerator']}/{dr['denominator']})"
        )
        lines.append(f"  file verdicts: {mode['file_verdicts']}")
        lines.append(f"  dataset verdicts: {mode['dataset_verdicts']}")
    effect = report.get("cleaning_effect")
    if effect:
        lines.append(
            f"cleaning effect on {effect['n_restricted']} files explicit in both runs:"
            f" fixed={effect['fixed']} broken={effect['broken']}"
            f" unchanged_success={effect['unchanged_success']}"
            f" unchanged_error={effect['unchanged_error']}"
        )
        lines.append(
            f"  raw {_fmt_rate(effect['raw_rate']['rate'])}"
            f" -> cleaned {_fmt_rate(effect['cleaned_rate']['rate'])}"
            f" (best of both {_fmt_rate(effect['best_of_both']['rate'])})"
        )
        for t in effect["transitions"]:
            lines.append(f"  {t['from']} -> {t['to']}: {t['count']}")
    lines.append(_AGGREGATION_FOOTNOTE)
    return "\n".join(lines) + "\n"
