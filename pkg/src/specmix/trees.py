"""Hierarchical heading taxonomy: parsing and pairwise tree distances.

Headings carry dot-delimited codes ("M01.060.116"); every code prefix is a
node and the parent of a code is the code minus its last segment. Top-level
codes hang off a shared virtual root so that distances are defined across
otherwise disjoint subtrees.

File format: one heading per line, ``Name [code.seg.ments]``; lines starting
with '#' are comments; blank lines are ignored.
"""

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import TreeParseError

_LINE_RE = re.compile(r"^\s*(?P<name>.*?)\s*\[(?P<code>[^\[\]]+)\]\s*$")
_SEGMENT_RE = re.compile(r"^[A-Za-z0-9]+$")


@dataclass(frozen=True)
class HeadingTree:
    """Ordered list of (name, code) headings; order fixes matrix indices."""

    headings: tuple

    def __len__(self):
        return len(self.headings)

    @property
    def names(self):
        return [name for name, _ in self.headings]

    @property
    def codes(self):
        return [code for _, code in self.headings]


def _parse_code(code, line_number):
    segments = code.split(".")
    if not segments or any(not _SEGMENT_RE.match(seg) for seg in segments):
        raise TreeParseError(
            f"line {line_number}: malformed heading code {code!r}",
            line_number=line_number)
    return tuple(segments)


def parse_heading_lines(lines):
    headings = []
    seen = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        m = _LINE_RE.match(line)
        if m is None:
            raise TreeParseError(
                f"line {lineno}: expected 'Name [code]', got {line!r}",
                line_number=lineno)
        name = m.group("name")
        code = m.group("code")
        _parse_code(code, lineno)
        if code in seen:
            raise TreeParseError(
                f"line {lineno}: duplicate heading code {code!r} "
                f"(first seen on line {seen[code]})", line_number=lineno)
        seen[code] = lineno
        headings.append((name, code))
    if not headings:
        raise TreeParseError("no headings found")
    return HeadingTree(headings=tuple(headings))


def parse_heading_file(path):
    text = Path(path).read_text(encoding="utf-8")
    return parse_heading_lines(text.splitlines())


def tree_distance(code_a, code_b):
    """Edge count on the unique path between two heading codes."""
    a = code_a.split(".")
    b = code_b.split(".")
    common = 0
    for sa, sb in zip(a, b):
        if sa != sb:
            break
        common += 1
    return len(a) + len(b) - 2 * common


def build_tree_distance(tree):
    """Pairwise distance matrix O and its regularizer form O*.

    O[i, j] counts edges between headings i and j (through the virtual root
    when they share no prefix). O* has unit diagonal and 1/O[i, j] off it.
    """
    codes = tree.codes
    d = len(codes)
    segs = [code.split(".") for code in codes]
    depths = np.array([len(s) for s in segs], dtype=np.float64)
    o = depths[:, None] + depths[None, :]
    for i in range(d):
        for j in range(i + 1, d):
            common = 0
            for sa, sb in zip(segs[i], segs[j]):
                if sa != sb:
                    break
                common += 1
            o[i, j] -= 2 * common
            o[j, i] = o[i, j]
    np.fill_diagonal(o, 0.0)
    o_star = np.ones_like(o)
    off = ~np.eye(d, dtype=bool)
    o_star[off] = 1.0 / o[off]
    return o, o_star
