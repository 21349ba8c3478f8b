"""
Reading and writing the differential-diagnosis answer format
=============================================================

Every pipeline step answers in one grammar: a header line per candidate
diagnosis followed by double-quoted evidence items. This script parses a
published-style answer block, renders it back and shows that quoting
survives awkward characters.
"""

from pathlib import Path

from dualinf.protocol import DdxEntry, DdxPrediction, parse_ddx_output, render_prediction

DATA = Path(__file__).resolve().parents[1] / "tests" / "data"

# A verbatim answer block for a chest-trauma note
block = (DATA / "table4_dual_inf.txt").read_text(encoding="utf-8")
parsed = parse_ddx_output(block)
for entry in parsed.entries:
    print(f"{entry.name}: {len(entry.evidence)} items")
    for item in entry.evidence:
        print("   -", item)

# Rendering gives the canonical form of the same content
print()
print(render_prediction(parsed))

# Quotes, backslashes and stars are escaped, so the round trip is exact
tricky = DdxPrediction([DdxEntry('Disease *X*', ['He said "it hurts"', "path C:\\temp", "two\nlines"])])
text = render_prediction(tricky)
print(text)
assert parse_ddx_output(text).pairs() == tricky.pairs()
print("round trip ok")
