#!/usr/bin/env python3
"""Minimal compliant editor: copies input.png to output.png.

Exits 4 if the protocol files (request.json, input.png, condition.png) are
missing, so tests notice a malformed work directory immediately.
"""
import pathlib
import shutil
import sys

work = pathlib.Path(sys.argv[1])
for name in ("request.json", "input.png", "condition.png"):
    if not (work / name).is_file():
        print(f"missing {name}", file=sys.stderr)
        sys.exit(4)
shutil.copyfile(work / "input.png", work / "output.png")
