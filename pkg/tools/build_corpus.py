"""Regenerate src/qatlab/data/corpus.txt from documentation text shipped with CPython.

The result is English prose (reference-manual topics plus module and function
docstrings of the standard library), ~1.2 MB. Run once; the output is committed.
"""

import ast
import sys
import sysconfig
import textwrap
from pathlib import Path

import pydoc_data.topics

TARGET_BYTES = 1_200_000
OUT = Path(__file__).resolve().parents[1] / "src" / "qatlab" / "data" / "corpus.txt"


def docstrings(path: Path):
    try:
        tree = ast.parse(path.read_text(encoding="utf-8"))
    except (SyntaxError, UnicodeDecodeError):
        return
    for node in ast.walk(tree):
        if isinstance(node, (ast.Module, ast.ClassDef, ast.FunctionDef, ast.AsyncFunctionDef)):
            doc = ast.get_docstring(node)
            if doc and len(doc) > 200:
                yield textwrap.dedent(doc).strip()


def main():
    parts = [pydoc_data.topics.topics[k].strip() for k in sorted(pydoc_data.topics.topics)]
    size = sum(len(p.encode()) for p in parts)
    stdlib = Path(sysconfig.get_paths()["stdlib"])
    for path in sorted(stdlib.glob("*.py")):
        for doc in docstrings(path):
            parts.append(doc)
            size += len(doc.encode()) + 2
        if size >= TARGET_BYTES:
            break
    OUT.write_text("\n\n".join(parts) + "\n", encoding="utf-8")
    print(f"wrote {OUT} ({OUT.stat().st_size} bytes) with Python {sys.version.split()[0]}")


if __name__ == "__main__":
    main()
