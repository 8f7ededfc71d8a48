"""Automatic code cleaning for R scripts.

Four conservative, intra-line rewrites aimed at the most common
re-execution failures:

* non-ASCII bytes are normalized to ASCII (``?`` substitution),
* ``setwd(...)`` calls are redirected to the current directory,
* absolute-path string literals passed to calls are wrapped in
  ``basename(...)`` so the flat package directory resolves them,
* ``library``/``require`` statements gain an install-if-missing guard
  against a configured CRAN mirror, and bare ``install.packages`` calls
  get the mirror injected when they name no repository.

Every rewrite is recorded as a CleanAction so the full diff can be
reconstructed. No rewrite ever touches a comment line, and the cleaned
file always has the same number of physical lines as the input.
"""

from __future__ import annotations

import difflib
import re
from dataclasses import dataclass, field
from pathlib import Path

from . import rsource

DEFAULT_CRAN_MIRROR = "http://cran.us.r-project.org"

ENCODING_NORMALIZED = "encoding_normalized"
SETWD_REWRITTEN = "setwd_rewritten"
PATH_BASENAMED = "path_basenamed"
LIBRARY_GUARDED = "library_guarded"
MIRROR_INJECTED = "mirror_injected"

_ABSOLUTE_PATH_RE = re.compile(r"^(/|~|[A-Za-z]:[/\\]|\\\\)")
_REPOS_ARG_RE = re.compile(r"\brepos\s*=")


@dataclass(frozen=True)
class CleanAction:
    """One rewrite applied at one call site."""

    kind: str
    line: int  # 1-based line number in the original file
    before: str
    after: str

    def to_dict(self) -> dict:
        return {"kind": self.kind, "line": self.line, "before": self.before, "after": self.after}


@dataclass
class CleanReport:
    """Ordered action log for one cleaned file."""

    path: str
    actions: list[CleanAction] = field(default_factory=list)
    was_ascii: bool = True
    output_path: str = ""
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "path": self.path,
            "actions": [a.to_dict() for a in self.actions],
            "was_ascii": self.was_ascii,
            "output_path": self.output_path,
            "error": self.error,
        }


class CleanWriteError(OSError):
    """Raised when the cleaned output could not be written."""


_decode = rsource.decode_best_effort


def normalize_encoding(raw: bytes) -> tuple[str, bool]:
    """Force source bytes to ASCII text, preserving the physical line count.

    Decoding tries UTF-8 first and falls back to a single-byte decoding;
    every resulting non-ASCII character becomes ``?``. Total function:
    any byte sequence yields a result.
    """
    was_ascii = all(b < 128 for b in raw)
    text = _decode(raw)
    if not was_ascii:
        text = "".join(ch if ord(ch) < 128 else "?" for ch in text)
    return text, was_ascii


def _enclosing_call(line: str, idx: int) -> tuple[str, int, int] | None:
    """Name and span of the call whose '(' immediately precedes index idx.

    Returns (name, name_start, open_paren_idx) when the text just before
    idx is ``name(`` modulo whitespace, else None.
    """
    i = idx - 1
    while i >= 0 and line[i] in " \t":
        i -= 1
    if i < 0 or line[i] != "(":
        return None
    open_idx = i
    i -= 1
    while i >= 0 and line[i] in " \t":
        i -= 1
    end = i
    while i >= 0 and line[i] in rsource._IDENT_CHARS:
        i -= 1
    if i == end:
        return None
    return line[i + 1 : end + 1], i + 1, open_idx


def rewrite_setwd(text: str) -> tuple[str, list[CleanAction]]:
    """Replace every non-comment ``setwd(<anything>)`` call with ``setwd(".")``.

    The executor launches interpreters with the package copy as working
    directory, so pointing setwd at the current directory keeps cleaned
    scripts location independent. Calls whose closing parenthesis is not
    on the same line are left alone.
    """
    lines = text.split("\n")
    actions: list[CleanAction] = []
    for lineno, line in enumerate(lines, start=1):
        if rsource.classify_line(line) != rsource.CODE:
            continue
        code = rsource.code_portion(line)
        for _, name_start, open_idx in reversed(rsource.find_calls(code, ("setwd",))):
            close = rsource.matching_paren(code, open_idx)
            if close is None:
                continue
            before = line[name_start : close + 1]
            after = 'setwd(".")'
            if before == after:
                continue
            line = line[:name_start] + after + line[close + 1 :]
            actions.append(CleanAction(SETWD_REWRITTEN, lineno, before, after))
        lines[lineno - 1] = line
    actions.sort(key=lambda a: a.line)
    return "\n".join(lines), actions


def _wrap_candidates(line: str) -> list[tuple[int, int, str]]:
    """(start, end, text) slices on one line to wrap in basename(...), rightmost first."""
    code_end = rsource.comment_start(line)
    limit = len(line) if code_end is None else code_end
    out: list[tuple[int, int, str]] = []
    for start, end in reversed(rsource.string_spans(line[:limit])):
        if end - start < 2 or line[end - 1] != line[start]:
            continue  # unterminated literal
        content = line[start + 1 : end - 1]
        if not _ABSOLUTE_PATH_RE.match(content):
            continue
        if rsource.paren_depth_before(line, start) < 1:
            continue  # only literals appearing as call arguments
        wrap_start, wrap_end = start, end
        enclosing = _enclosing_call(line, start)
        if enclosing is not None:
            enc_name, enc_start, enc_open = enclosing
            if enc_name == "basename":
                continue  # already wrapped
            if enc_name == "file.path":
                enc_close = rsource.matching_paren(line, enc_open)
                sole_arg = (
                    enc_close is not None
                    and line[enc_open + 1 : enc_close].strip() == line[start:end]
                )
                if sole_arg:
                    outer = _enclosing_call(line, enc_start)
                    if outer is not None and outer[0] == "basename":
                        continue
                    wrap_start, wrap_end = enc_start, enc_close + 1
        out.append((wrap_start, wrap_end, line[wrap_start:wrap_end]))
    return out


def rewrite_paths(text: str) -> tuple[str, list[CleanAction]]:
    """Wrap absolute-path string literals used as call arguments in ``basename(...)``.

    Absolute means a leading ``/``, ``~``, drive letter (``X:\\`` or
    ``X:/``), or UNC prefix. When the literal is the sole argument of a
    ``file.path(...)`` call the whole call is wrapped, which is what the
    flat-directory layout needs in either form; basename of a relative
    name is itself, so false positives are harmless. Literals already
    inside ``basename(...)`` are left alone.
    """
    lines = text.split("\n")
    actions: list[CleanAction] = []
    for lineno, line in enumerate(lines, start=1):
        if rsource.classify_line(line) != rsource.CODE:
            continue
        for start, end, before in _wrap_candidates(line):
            after = f"basename({before})"
            line = line[:start] + after + line[end:]
            actions.append(CleanAction(PATH_BASENAMED, lineno, before, after))
        lines[lineno - 1] = line
    actions.sort(key=lambda a: a.line)
    return "\n".join(lines), actions


def _guard_for(pkg: str, original_call: str, mirror: str) -> str:
    return (
        f'if (!require("{pkg}")) install.packages("{pkg}", repos="{mirror}"); {original_call}'
    )


def _package_name(arg: str) -> str | None:
    quoted = rsource.strip_quotes(arg)
    if quoted is not None:
        return quoted if rsource.is_bare_name(quoted) else None
    return arg.strip() if rsource.is_bare_name(arg) else None


def rewrite_library_loads(text: str, mirror: str = DEFAULT_CRAN_MIRROR) -> tuple[str, list[CleanAction]]:
    """Guard library loads with an install-if-missing test against the mirror.

    A statement-level ``library(pkg)`` or ``require(pkg)`` becomes, on one
    line, ``if (!require("pkg")) install.packages("pkg", repos="<mirror>");
    <original call>``; the trailing explicit load makes a freshly installed
    package usable. Lines that already contain a ``!require(`` guard are
    left alone. Independently, any ``install.packages(...)`` call that
    names no ``repos`` argument gets the mirror injected, exactly once.
    """
    lines = text.split("\n")
    actions: list[CleanAction] = []
    for lineno, line in enumerate(lines, start=1):
        if rsource.classify_line(line) != rsource.CODE:
            continue
        code_end = rsource.comment_start(line)
        code = line if code_end is None else line[:code_end]
        masked = rsource.mask_strings(code)

        if not re.search(r"!\s*require\b", masked):
            replacements: list[tuple[int, int, str, str]] = []
            for offset, segment in rsource.split_statements(code):
                m = re.match(r"\s*(library|require)\s*\(", segment)
                if not m:
                    continue
                call_start = offset + m.start(1)
                open_idx = offset + m.end() - 1
                close = rsource.matching_paren(code, open_idx)
                if close is None or close >= offset + len(segment):
                    continue
                if segment[close + 1 - offset :].strip():
                    continue  # call is not the whole statement
                pkg = _package_name(rsource.first_argument(code, open_idx, close))
                if pkg is None:
                    continue
                original = line[call_start : close + 1]
                replacements.append((call_start, close + 1, original, _guard_for(pkg, original, mirror)))
            for start, end, before, after in reversed(replacements):
                line = line[:start] + after + line[end:]
                actions.append(CleanAction(LIBRARY_GUARDED, lineno, before, after))

        code_end = rsource.comment_start(line)
        code = line if code_end is None else line[:code_end]
        for _, name_start, open_idx in reversed(rsource.find_calls(code, ("install.packages",))):
            close = rsource.matching_paren(code, open_idx)
            if close is None:
                continue
            arg_slice = rsource.mask_strings(code)[open_idx + 1 : close]
            if _REPOS_ARG_RE.search(arg_slice):
                continue
            before = line[name_start : close + 1]
            injected = f', repos="{mirror}"' if line[open_idx + 1 : close].strip() else f'repos="{mirror}"'
            line = line[:close] + injected + line[close:]
            actions.append(CleanAction(MIRROR_INJECTED, lineno, before, line[name_start : close + 1 + len(injected)]))

        lines[lineno - 1] = line
    actions.sort(key=lambda a: a.line)
    return "\n".join(lines), actions


def _encoding_actions(raw: bytes, normalized: str) -> list[CleanAction]:
    decoded_lines = _decode(raw).split("\n")
    normalized_lines = normalized.split("\n")
    return [
        CleanAction(ENCODING_NORMALIZED, i, before, after)
        for i, (before, after) in enumerate(zip(decoded_lines, normalized_lines), start=1)
        if before != after
    ]


def clean_text(raw: bytes, mirror: str = DEFAULT_CRAN_MIRROR) -> tuple[str, list[CleanAction], bool]:
    """Run the full cleaning pipeline on raw script bytes."""
    text, was_ascii = normalize_encoding(raw)
    actions = _encoding_actions(raw, text)
    text, setwd_actions = rewrite_setwd(text)
    text, path_actions = rewrite_paths(text)
    text, lib_actions = rewrite_library_loads(text, mirror)
    return text, actions + setwd_actions + path_actions + lib_actions, was_ascii


def clean_file(path: Path | str, out_dir: Path | str, mirror: str = DEFAULT_CRAN_MIRROR) -> CleanReport:
    """Clean one R file into out_dir (same filename) and return the action log.

    The original file is never modified. A write failure is fatal for
    this file and is recorded on the report.
    """
    path = Path(path)
    out_dir = Path(out_dir)
    report = CleanReport(path=str(path))
    raw = path.read_bytes()
    text, report.actions, report.was_ascii = clean_text(raw, mirror)
    out_path = out_dir / path.name
    report.output_path = str(out_path)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        out_path.write_text(text, encoding="utf-8")
    except OSError as exc:
        report.error = f"write failed: {exc}"
    return report


def clean_tree(pkg_dir: Path | str, out_dir: Path | str, mirror: str = DEFAULT_CRAN_MIRROR) -> list[CleanReport]:
    """Clean every R file under pkg_dir, mirroring its layout below out_dir."""
    pkg_dir = Path(pkg_dir)
    out_dir = Path(out_dir)
    reports = []
    for path in sorted(p for p in pkg_dir.rglob("*") if p.is_file() and rsource.is_r_source(p.name)):
        rel_parent = path.parent.relative_to(pkg_dir)
        reports.append(clean_file(path, out_dir / rel_parent, mirror))
    return reports


def unified_diff(original: bytes, cleaned_text: str, name: str) -> str:
    """Unified diff between the original bytes (decoded) and the cleaned text."""
    before = _decode(original).split("\n")
    after = cleaned_text.split("\n")
    return "\n".join(
        difflib.unified_diff(before, after, fromfile=f"{name} (original)", tofile=f"{name} (cleaned)", lineterm="")
    )
