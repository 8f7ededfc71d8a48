"""Minimal line-oriented scanner for R source text.

Shared by the metrics and cleaner modules. Deliberately not a full R
grammar: it tracks single- and double-quoted string literals with
backslash escapes on a single physical line, which is enough to keep
rewrites and line classification out of strings and comments. Backticked
identifiers and R >= 4.0 raw strings are not tracked.
"""

from __future__ import annotations

CODE = "code"
COMMENT = "comment"
BLANK = "blank"

R_SUFFIXES = (".R", ".r")


def is_r_source(name: str) -> bool:
    """True for plain R script filenames (.R or .r; RMD and Rnw are not scripts)."""
    return name.endswith(R_SUFFIXES)

# R identifiers: letters, digits, dot, underscore; may start with a dot.
_IDENT_CHARS = frozenset(
    "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789._"
)


def decode_best_effort(raw: bytes) -> str:
    """Decode source bytes as UTF-8, falling back to a single-byte decoding."""
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError:
        return raw.decode("latin-1")


def split_lines(text: str) -> list[str]:
    """Split text into physical lines without a phantom line for a trailing newline."""
    if not text:
        return []
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return lines


def string_spans(line: str) -> list[tuple[int, int]]:
    """Half-open [start, end) index spans of string literals, quotes included.

    An unterminated literal extends to the end of the line.
    """
    spans: list[tuple[int, int]] = []
    i = 0
    n = len(line)
    while i < n:
        ch = line[i]
        if ch in "'\"":
            start = i
            i += 1
            while i < n:
                if line[i] == "\\":
                    i += 2
                    continue
                if line[i] == ch:
                    i += 1
                    break
                i += 1
            spans.append((start, min(i, n)))
        else:
            i += 1
    return spans


def in_spans(idx: int, spans: list[tuple[int, int]]) -> bool:
    return any(start <= idx < end for start, end in spans)


def comment_start(line: str) -> int | None:
    """Index of the first '#' outside string literals, or None."""
    spans = string_spans(line)
    for i, ch in enumerate(line):
        if ch == "#" and not in_spans(i, spans):
            return i
    return None


def code_portion(line: str) -> str:
    """The line up to (excluding) its inline comment."""
    idx = comment_start(line)
    return line if idx is None else line[:idx]


def classify_line(line: str) -> str:
    """Partition a physical line into exactly one of code, comment, blank.

    A line is a comment iff its first non-whitespace character is '#',
    blank iff whitespace-only, otherwise code (a trailing inline comment
    keeps the line classified as code).
    """
    stripped = line.strip()
    if not stripped:
        return BLANK
    if stripped.startswith("#"):
        return COMMENT
    return CODE


def is_comment_line(line: str) -> bool:
    return classify_line(line) == COMMENT


def mask_strings(line: str) -> str:
    """Replace string literal contents (and quotes) with spaces, preserving indices."""
    chars = list(line)
    for start, end in string_spans(line):
        for i in range(start, end):
            chars[i] = " "
    return "".join(chars)


def find_calls(line: str, names: tuple[str, ...] | list[str]) -> list[tuple[str, int, int]]:
    """Occurrences of ``name(`` outside strings, as (name, name_start, open_paren_idx).

    A match requires a word boundary before the name (the preceding
    character is not part of an R identifier) and an opening parenthesis
    as the next non-space character.
    """
    masked = mask_strings(line)
    hits: list[tuple[str, int, int]] = []
    for name in names:
        start = 0
        while True:
            pos = masked.find(name, start)
            if pos < 0:
                break
            start = pos + 1
            if pos > 0 and masked[pos - 1] in _IDENT_CHARS:
                continue
            after = pos + len(name)
            while after < len(masked) and masked[after] in " \t":
                after += 1
            if after < len(masked) and masked[after] == "(":
                hits.append((name, pos, after))
    hits.sort(key=lambda h: h[1])
    return hits


def matching_paren(line: str, open_idx: int) -> int | None:
    """Index of the ')' matching the '(' at open_idx, or None if not closed on this line."""
    spans = string_spans(line)
    depth = 0
    for i in range(open_idx, len(line)):
        if in_spans(i, spans):
            continue
        ch = line[i]
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
            if depth == 0:
                return i
    return None


def first_argument(line: str, open_idx: int, close_idx: int) -> str:
    """Text of the first argument of the call whose parens are at open/close idx."""
    spans = string_spans(line)
    depth = 0
    for i in range(open_idx, close_idx):
        if in_spans(i, spans):
            continue
        ch = line[i]
        if ch in "([{":
            depth += 1
        elif ch in ")]}":
            depth -= 1
        elif ch == "," and depth == 1:
            return line[open_idx + 1 : i].strip()
    return line[open_idx + 1 : close_idx].strip()


def paren_depth_before(line: str, idx: int) -> int:
    """Parenthesis nesting depth just before index idx, ignoring parens in strings."""
    spans = string_spans(line)
    depth = 0
    for i in range(idx):
        if in_spans(i, spans):
            continue
        if line[i] == "(":
            depth += 1
        elif line[i] == ")":
            depth -= 1
    return depth


def split_statements(code: str) -> list[tuple[int, str]]:
    """Split a line's code portion at top-level ';' into (offset, segment) pairs.

    Top-level means outside string literals and outside any parentheses,
    so the ';' in a generated one-line guard separates statements while a
    ';' inside a call argument does not.
    """
    spans = string_spans(code)
    segments: list[tuple[int, str]] = []
    depth = 0
    seg_start = 0
    for i, ch in enumerate(code):
        if in_spans(i, spans):
            continue
        if ch in "([{":
            depth += 1
        elif ch in ")]}":
            depth -= 1
        elif ch == ";" and depth <= 0:
            segments.append((seg_start, code[seg_start:i]))
            seg_start = i + 1
    segments.append((seg_start, code[seg_start:]))
    return segments


def strip_quotes(token: str) -> str | None:
    """The inner text of a quoted token, or None if not a single quoted literal."""
    token = token.strip()
    if len(token) >= 2 and token[0] in "'\"" and token[-1] == token[0]:
        inner = token[1:-1]
        if token[0] not in inner.replace("\\" + token[0], ""):
            return inner
    return None


def is_bare_name(token: str) -> bool:
    """True for a bare R identifier usable as a package or variable name."""
    token = token.strip()
    if not token or token[0] not in _IDENT_CHARS or token[0].isdigit():
        return False
    return all(ch in _IDENT_CHARS for ch in token)
