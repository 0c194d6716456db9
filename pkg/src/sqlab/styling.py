"""Markdown emphasis rendered with Unicode mathematical letters, for plain-text clients."""

from __future__ import annotations

import re
import unicodedata
from functools import lru_cache

_DIGIT_NAMES = "ZERO ONE TWO THREE FOUR FIVE SIX SEVEN EIGHT NINE".split()

# Letters missing from the italic block are reserved code points; Unicode
# points to the older letterlike symbols instead.
_ITALIC_HOLES = {"h": "ℎ"}


@lru_cache(maxsize=None)
def _styled_char(style: str, ch: str) -> str:
    if style == "ITALIC" and ch in _ITALIC_HOLES:
        return _ITALIC_HOLES[ch]
    if "A" <= ch <= "Z" or "a" <= ch <= "z":
        case = "CAPITAL" if ch.isupper() else "SMALL"
        name = f"MATHEMATICAL {style} {case} {ch.upper()}"
    elif ch.isdigit() and ch.isascii() and style == "BOLD":
        name = f"MATHEMATICAL BOLD DIGIT {_DIGIT_NAMES[int(ch)]}"
    else:
        return ch
    try:
        return unicodedata.lookup(name)
    except KeyError:
        return ch


def _restyle(text: str, style: str) -> str:
    return "".join(_styled_char(style, ch) for ch in text)


_PROTECTED = re.compile(r"```.*?```|`[^`\n]*`", re.DOTALL)
_BOLD = re.compile(r"\*\*(?=\S)(.+?)(?<=\S)\*\*", re.DOTALL)
_ITALIC = re.compile(r"(?<![\w*])\*(?=[^\s*])(.+?)(?<=[^\s*])\*(?![\w*])", re.DOTALL)


def style_markdown(text: str) -> str:
    """Turn ``**bold**`` and ``*italic*`` into styled letters.

    Code spans and fenced blocks are left untouched so that queries and
    formulas quoted in messages can still be copied into a client.
    """
    out = []
    last = 0
    for m in _PROTECTED.finditer(text):
        out.append(_style_plain(text[last : m.start()]))
        out.append(m.group(0))
        last = m.end()
    out.append(_style_plain(text[last:]))
    return "".join(out)


def _style_plain(text: str) -> str:
    text = _BOLD.sub(lambda m: _restyle(m.group(1), "BOLD"), text)
    return _ITALIC.sub(lambda m: _restyle(m.group(1), "ITALIC"), text)
