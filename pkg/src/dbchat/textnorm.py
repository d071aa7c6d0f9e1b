"""Term tokenization and language detection shared by indexing and retrieval."""

import string

_PUNCT = string.punctuation + "、。，？！：；“”‘’"

_CJK_RANGES = (
    (0x4E00, 0x9FFF),    # CJK unified ideographs
    (0x3400, 0x4DBF),    # extension A
    (0x3040, 0x30FF),    # kana (counts toward "not en"; zh detection keys on ideographs)
)


def terms(text: str) -> list[str]:
    """Lowercased, punctuation-stripped whitespace tokens, empties dropped."""
    out = []
    for tok in text.lower().split():
        tok = tok.strip(_PUNCT)
        if tok:
            out.append(tok)
    return out


def char_ngrams(text: str, sizes: tuple[int, ...] = (2, 3)) -> list[str]:
    """Character n-grams of the whitespace-stripped text, for scripts without word boundaries."""
    compact = "".join(text.lower().split())
    grams = []
    for n in sizes:
        if len(compact) < n:
            continue
        for i in range(len(compact) - n + 1):
            grams.append(compact[i:i + n])
    if not grams and compact:
        grams.append(compact)
    return grams


def is_cjk(ch: str) -> bool:
    cp = ord(ch)
    return any(lo <= cp <= hi for lo, hi in _CJK_RANGES)


def detect_language(text: str) -> str:
    """Heuristic language tag: 'zh' if CJK-heavy, 'en' if Latin-heavy, else 'other'."""
    cjk = 0
    latin = 0
    for ch in text:
        if is_cjk(ch):
            cjk += 1
        elif ch.isalpha() and ch.isascii():
            latin += 1
    lettered = cjk + latin
    if lettered == 0:
        return "other"
    if cjk / lettered >= 0.2:
        return "zh"
    if latin / lettered >= 0.5:
        return "en"
    return "other"
