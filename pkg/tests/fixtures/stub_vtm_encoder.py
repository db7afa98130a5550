#!/usr/bin/env python3
"""Stand-in for the VTM encoder binary used by the bridge tests.

Reads the same command line the bridge passes to the real encoder, writes a
dummy bitstream, copies the input sequence as the reconstruction and prints
the stored 12.3 log. STUB_VTM_EXIT forces a failing exit code.
"""
import os
import shutil
import sys
from pathlib import Path

args = sys.argv[1:]
opts = dict(zip(args[::2], args[1::2]))
if os.environ.get("STUB_VTM_EXIT"):
    print("ERROR: stub asked to fail")
    sys.exit(int(os.environ["STUB_VTM_EXIT"]))
cfg = Path(opts["-c"]).read_text()
assert "QP" in cfg and "IntraQPOffset" in cfg
Path(opts["-b"]).write_bytes(b"\x00\x00\x01stub")
shutil.copyfile(opts["-i"], opts["-o"])
Path("argv.txt").write_text("\n".join(args) + "\n")
sys.stdout.write((Path(__file__).parent / "vtm12.3_encoder.log").read_text())
