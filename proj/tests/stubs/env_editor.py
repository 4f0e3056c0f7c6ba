#!/usr/bin/env python3
"""Editor stub with failure modes selected via VIEWPROP_STUB_MODE.

Modes: copy (default), fail (exit 3 with diagnostics), missing (success but
no output.png), wrongsize (1x1 output), sleep (stalls to trip timeouts).
"""
import os
import pathlib
import shutil
import struct
import sys
import time
import zlib


def png_1x1(path):
    def chunk(kind, payload):
        data = kind + payload
        return struct.pack(">I", len(payload)) + data + struct.pack(">I", zlib.crc32(data))

    ihdr = struct.pack(">IIBBBBB", 1, 1, 8, 2, 0, 0, 0)
    idat = zlib.compress(b"\x00\x80\x80\x80")
    path.write_bytes(b"\x89PNG\r\n\x1a\n" + chunk(b"IHDR", ihdr) +
                     chunk(b"IDAT", idat) + chunk(b"IEND", b""))


work = pathlib.Path(sys.argv[1])
mode = os.environ.get("VIEWPROP_STUB_MODE", "copy")

if mode == "fail":
    print("stub editor: simulated failure, check GPU allocation")
    sys.exit(3)
elif mode == "missing":
    sys.exit(0)
elif mode == "wrongsize":
    png_1x1(work / "output.png")
elif mode == "sleep":
    time.sleep(5)
    shutil.copyfile(work / "input.png", work / "output.png")
else:
    shutil.copyfile(work / "input.png", work / "output.png")
