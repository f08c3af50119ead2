#!/usr/bin/env python3
"""Stand-in Verilog simulator.

Interprets just enough of the testbench to make fixtures meaningful:

- `$display("...")` string literals are echoed in source order;
- `// STUB_SIM_EXPECT: <regex>` asserts that the DESIGN source matches the
  regex; a miss prints an `ASSERTION FAILED at time N: ...` line, so the
  verdict genuinely depends on the design under test;
- `// STUB_SIM: HANG` busy-waits forever (timeout-path fixture);
- `// STUB_SIM: EXIT <code>` forces the final exit code.

Always writes dump.vcd to the workdir so the coverage stage has its input.
"""

import argparse
import json
import re
import sys
import time

DISPLAY_RE = re.compile(r"\$display\s*\(\s*\"((?:[^\"\\]|\\.)*)\"")
EXPECT_RE = re.compile(r"//\s*STUB_SIM_EXPECT:\s*(.+)$", re.MULTILINE)
DIRECTIVE_RE = re.compile(r"//\s*STUB_SIM:\s*(\w+)(?:\s+(\S+))?")


def read(path):
    try:
        with open(path, encoding="utf-8", errors="replace") as handle:
            return handle.read()
    except OSError:
        return ""


def main(argv=None):
    parser = argparse.ArgumentParser(description="stub Verilog simulator")
    parser.add_argument("--workdir", default=".")
    parser.add_argument("compiled")
    args = parser.parse_args(argv)

    try:
        with open(args.compiled, encoding="utf-8") as handle:
            obj = json.load(handle)
    except (OSError, ValueError):
        sys.stderr.write("stub_sim: cannot read compiled object %s\n" % args.compiled)
        return 1

    sources = obj.get("sources", [])
    design = read(sources[0]) if sources else ""
    testbench = read(sources[1]) if len(sources) > 1 else ""
    script = testbench or design

    exit_code = 0
    for kind, arg in DIRECTIVE_RE.findall(script):
        if kind == "HANG":
            while True:
                time.sleep(1)
        if kind == "EXIT" and arg is not None and arg.isdigit():
            exit_code = int(arg)

    failures = []
    sim_time = 10
    for raw_pattern in EXPECT_RE.findall(script):
        pattern = raw_pattern.strip()
        try:
            ok = re.search(pattern, design, re.MULTILINE) is not None
        except re.error:
            ok = False
        if not ok:
            print("ASSERTION FAILED at time %d: design output mismatch (expected behavior missing)" % sim_time)
        sim_time += 10
        failures.append(not ok)

    for literal in DISPLAY_RE.findall(script):
        if any(failures) and "PASS" in literal.upper():
            continue
        print(literal)

    with open("%s/dump.vcd" % args.workdir, "w", encoding="utf-8") as handle:
        handle.write("$date stub $end\n$version stub simulator $end\n$enddefinitions $end\n")

    return exit_code


if __name__ == "__main__":
    sys.exit(main())
