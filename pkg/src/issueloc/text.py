"""Jira markup removal, tokenisation and token normalisation."""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from functools import lru_cache
from pathlib import PurePosixPath

from nltk.stem.porter import PorterStemmer


class MarkupMode(str, enum.Enum):
    KEEP_RAW = "keep_raw"
    STRIP_FORMATTING = "strip_formatting"
    STRIP_BLOCKS = "strip_blocks"
    BLOCKS_TO_MARKER = "blocks_to_marker"


@dataclass(frozen=True)
class PreprocessConfig:
    markup_mode: MarkupMode = MarkupMode.KEEP_RAW
    lowercase: bool = True
    stem: bool = True
    subtoken_split: bool = False
    marker_word: str = "CODEBLOCKMARKER"

    def __post_init__(self):
        object.__setattr__(self, "markup_mode", MarkupMode(self.markup_mode))
        if tokenize(self.marker_word) != [self.marker_word]:
            raise ValueError(f"marker word must be a single token: {self.marker_word!r}")


@dataclass(frozen=True)
class Document:
    path: str
    name_field: tuple[str, ...]
    content_field: tuple[str, ...]

    @property
    def tokens(self) -> tuple[str, ...]:
        return self.name_field + self.content_field


# --- Jira markup -------------------------------------------------------------

_BLOCK_RE = re.compile(r"\{(code|noformat|panel)(?::[^}\n]*)?\}(.*?)\{\1\}", re.S | re.I)
_STRAY_BLOCK_TAG_RE = re.compile(r"\{(?:code|noformat|panel)(?::[^}\n]*)?\}", re.I)
_IMAGE_RE = re.compile(r"!(?=[^\s!])[^!\n]*\.(?:png|jpe?g|gif|bmp|svg|webp)(?:\|[^!\n]*)?!", re.I)
_ATTACHMENT_RE = re.compile(r"\[\^[^\]\n]*\]")
_LINK_RE = re.compile(r"\[[^\[\]\n]*(?:\||~|#|https?://|mailto:|file:)[^\[\]\n]*\]")
_URL_RE = re.compile(r"\b(?:https?|ftp|file)://[^\s\]|]+|\bmailto:\S+", re.I)
_HEADING_RE = re.compile(r"^[ \t]*h[1-6]\.[ \t]*", re.M)
_BQ_RE = re.compile(r"^[ \t]*bq\.[ \t]*", re.M)
_RULE_RE = re.compile(r"^[ \t]*-{4,}[ \t]*$", re.M)
_BULLET_RE = re.compile(r"^[ \t]*[*#-]+[ \t]+", re.M)
_TAG_RE = re.compile(r"\{(?:color(?::[^}\n]*)?|quote|anchor:[^}\n]*)\}", re.I)
_TABLE_RE = re.compile(r"\|\|?")
_MONO_RE = re.compile(r"\{\{(.*?)\}\}")
_EMOTICON_RE = re.compile(
    r"(?<!\S)(?::\)|:\(|:P|:D|;\))(?!\S)|\((?:y|n|i|/|x|!|\+|-|\?|on|off|\*[rgby]?|flag|flagoff)\)",
)


def _effect_re(mark: str) -> re.Pattern:
    m = re.escape(mark)
    return re.compile(rf"(?<![\w{m}]){m}(?=\S)([^{m}\n]*?\S){m}(?![\w{m}])")


_EFFECTS = [_effect_re(c) for c in "*_-+^~"] + [re.compile(r"\?\?(?=\S)([^\n]*?\S)\?\?")]


def _pad(text: str, start: int, end: int, replacement: str) -> str:
    left = " " if start > 0 and not text[start - 1].isspace() else ""
    right = " " if end < len(text) and not text[end].isspace() else ""
    if not replacement:
        return " " if left and right else ""
    return left + replacement + right


def _replace_blocks(text: str, mode: MarkupMode, marker: str) -> str:
    out, pos = [], 0
    for m in _BLOCK_RE.finditer(text):
        out.append(text[pos:m.start()])
        if mode is MarkupMode.STRIP_FORMATTING:
            out.append(m.group(2))
        elif mode is MarkupMode.STRIP_BLOCKS:
            out.append(_pad(text, m.start(), m.end(), ""))
        else:
            out.append(_pad(text, m.start(), m.end(), marker))
        pos = m.end()
    out.append(text[pos:])
    return "".join(out)


def _strip_once(text: str, mode: MarkupMode, marker: str) -> str:
    text = _replace_blocks(text, mode, marker)
    text = _STRAY_BLOCK_TAG_RE.sub("", text)
    for pattern in (_IMAGE_RE, _ATTACHMENT_RE, _LINK_RE, _URL_RE):
        text = pattern.sub(lambda m: _pad(m.string, m.start(), m.end(), ""), text)
    text = _RULE_RE.sub("", text)
    text = _EMOTICON_RE.sub("", text)
    text = _HEADING_RE.sub("", text)
    text = _BQ_RE.sub("", text)
    text = _BULLET_RE.sub("", text)
    text = _TAG_RE.sub("", text)
    text = _MONO_RE.sub(r"\1", text)
    for pattern in _EFFECTS:
        text = pattern.sub(r"\1", text)
    text = _TABLE_RE.sub(" ", text)
    return text


def strip_jira_markup(text: str, mode: MarkupMode | str = MarkupMode.KEEP_RAW,
                      marker_word: str = "CODEBLOCKMARKER") -> str:
    """Remove Jira wiki notation, keeping the text of formatting constructs.

    Images, attachments, links, horizontal rules and emoticons are removed
    outright. ``{code}``, ``{noformat}`` and ``{panel}`` blocks keep their
    content, lose it, or become ``marker_word`` depending on ``mode``.
    """
    mode = MarkupMode(mode)
    if mode is MarkupMode.KEEP_RAW:
        return text
    # repeat until stable: removing one construct can expose another
    for _ in range(16):
        stripped = _strip_once(text, mode, marker_word)
        if stripped == text:
            break
        text = stripped
    return text


# --- tokens ------------------------------------------------------------------

_SPLIT_RE = re.compile(r"[\W_]+")


def tokenize(text: str) -> list[str]:
    return [t for t in _SPLIT_RE.split(text) if t]


def split_subtokens(token: str) -> list[str]:
    """Split camelCase, acronym runs and letter/digit boundaries.

    ``parseHTTPResponse`` -> ``parse``, ``HTTP``, ``Response``.
    """
    parts, start = [], 0
    n = len(token)
    for i in range(1, n):
        prev, cur = token[i - 1], token[i]
        boundary = (
            (prev.islower() and cur.isupper())
            or (prev.isdigit() != cur.isdigit())
            or (prev.isupper() and cur.isupper() and i + 1 < n and token[i + 1].islower())
        )
        if boundary:
            parts.append(token[start:i])
            start = i
    parts.append(token[start:])
    return [p for p in parts if p]


_STEMMER = PorterStemmer(mode=PorterStemmer.ORIGINAL_ALGORITHM)


@lru_cache(maxsize=1 << 16)
def stem(token: str) -> str:
    return _STEMMER.stem(token, to_lowercase=False)


def normalize(tokens, config: PreprocessConfig) -> list[str]:
    """Sub-token split, then lowercase, then Porter stemming, per config flags."""
    out = list(tokens)
    if config.subtoken_split:
        out = [s for t in out for s in split_subtokens(t)]
    if config.lowercase:
        out = [t.lower() for t in out]
    if config.stem:
        out = [stem(t) for t in out]
    return [t for t in out if t]


def preprocess_text(text: str, config: PreprocessConfig) -> list[str]:
    stripped = strip_jira_markup(text, config.markup_mode, config.marker_word)
    return normalize(tokenize(stripped), config)


def preprocess_issue(issue, config: PreprocessConfig) -> list[str]:
    """Tokens for an issue (anything with ``title`` and ``body``)."""
    return preprocess_text(f"{issue.title}\n{issue.body}", config)


def preprocess_file(path: str, data: bytes | str, config: PreprocessConfig) -> Document:
    text = data.decode("utf-8", errors="replace") if isinstance(data, bytes) else data
    name = PurePosixPath(path).name
    name_tokens = normalize(tokenize(name), config) or [name]
    return Document(path, tuple(name_tokens), tuple(normalize(tokenize(text), config)))
