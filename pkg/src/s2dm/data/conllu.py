"""Reader/writer for the CoNLL-U subset we consume: ID, FORM, UPOS, HEAD."""
from dataclasses import dataclass, field

from ..errors import ParseError

ID, FORM, LEMMA, UPOS, XPOS, FEATS, HEAD, DEPREL, DEPS, MISC = range(10)


@dataclass
class ConllSentence:
    tokens: list
    upos: list
    heads: list
    meta: dict = field(default_factory=dict)


def _finish(rows, meta, path, first_line):
    roots = [i for i, (_, _, h) in enumerate(rows) if h == 0]
    if len(roots) != 1:
        raise ParseError(f"sentence has {len(roots)} roots, expected 1", first_line, path)
    n = len(rows)
    for form, _, h in rows:
        if h > n:
            raise ParseError(f"HEAD {h} of {form!r} exceeds sentence length {n}", first_line, path)
    return ConllSentence([r[0] for r in rows], [r[1] for r in rows], [r[2] for r in rows], meta)


def parse_conllu(lines, path=None):
    sentences = []
    rows, meta, start = [], {}, None
    for lineno, raw in enumerate(lines, 1):
        line = raw.rstrip("\r\n")
        if not line.strip():
            if rows:
                sentences.append(_finish(rows, meta, path, start))
            rows, meta, start = [], {}, None
            continue
        if line.startswith("#"):
            if "=" in line:
                key, _, value = line[1:].partition("=")
                meta[key.strip()] = value.strip()
            continue
        cols = line.split("\t")
        if len(cols) != 10:
            raise ParseError(f"expected 10 tab-separated columns, got {len(cols)}", lineno, path)
        if "-" in cols[ID] or "." in cols[ID]:
            continue  # multiword token range or empty node
        try:
            tid = int(cols[ID])
        except ValueError:
            raise ParseError(f"non-integer ID {cols[ID]!r}", lineno, path) from None
        if tid != len(rows) + 1:
            raise ParseError(f"ID {tid} out of sequence (expected {len(rows) + 1})", lineno, path)
        try:
            head = int(cols[HEAD])
        except ValueError:
            raise ParseError(f"non-integer HEAD {cols[HEAD]!r}", lineno, path) from None
        if head < 0:
            raise ParseError(f"negative HEAD {head}", lineno, path)
        if start is None:
            start = lineno
        rows.append((cols[FORM], cols[UPOS], head))
    if rows:
        sentences.append(_finish(rows, meta, path, start))
    return sentences


def load_conllu(path):
    with open(path, encoding="utf-8") as fh:
        return parse_conllu(fh, path=str(path))


def format_conllu(sentences):
    out = []
    for sent in sentences:
        for key, value in sent.meta.items():
            out.append(f"# {key} = {value}")
        for i, (form, tag, head) in enumerate(zip(sent.tokens, sent.upos, sent.heads), 1):
            out.append("\t".join([str(i), form, "_", tag, "_", "_", str(head), "_", "_", "_"]))
        out.append("")
    return "\n".join(out) + ("\n" if out else "")


def write_conllu(path, sentences):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_conllu(sentences))


def write_alignments(path, alignments):
    with open(path, "w", encoding="utf-8") as fh:
        for pairs in alignments:
            fh.write(" ".join(f"{i}-{j}" for i, j in pairs) + "\n")


def load_alignments(path):
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            pairs = []
            for item in line.split():
                try:
                    i, j = item.split("-")
                    pairs.append((int(i), int(j)))
                except ValueError:
                    raise ParseError(f"bad alignment pair {item!r}", lineno, str(path)) from None
            out.append(pairs)
    return out
