#!/usr/bin/env python3
"""Stand-in Verilog compiler: a small structural lint with Icarus-style output.

Checks are deliberately shallow (this is a test double, not a compiler) but
honest: they react to the actual source text, so deleting a semicolon from a
fixture really does produce an error naming that file and line.

On success writes a JSON "object file" recording the source list and top
module, which the stub simulator consumes.
"""

import argparse
import json
import re
import sys

KEYWORDS = {
    "module", "endmodule", "macromodule", "input", "output", "inout", "wire", "reg",
    "logic", "assign", "always", "always_ff", "always_comb", "always_latch", "initial",
    "begin", "end", "if", "else", "case", "casez", "casex", "endcase", "for", "while",
    "repeat", "forever", "posedge", "negedge", "integer", "real", "time", "genvar",
    "generate", "endgenerate", "parameter", "localparam", "function", "endfunction",
    "task", "endtask", "default", "or", "and", "not", "xor", "nand", "nor", "xnor",
    "buf", "signed", "unsigned", "wait", "disable", "fork", "join", "specify",
    "endspecify", "supply0", "supply1", "tri", "vectored", "scalared", "event", "edge",
}

GATE_PRIMITIVES = {"and", "or", "not", "xor", "nand", "nor", "xnor", "buf", "bufif0", "bufif1"}

STATEMENT_KEYWORDS = {"assign", "wire", "reg", "integer", "parameter", "localparam", "genvar"}
STATEMENT_BREAKERS = STATEMENT_KEYWORDS | {
    "always", "always_ff", "always_comb", "initial", "module", "endmodule", "begin",
    "end", "if", "case", "endcase", "for", "function", "task",
}

INSTANCE_RE = re.compile(r"^\s*([A-Za-z_]\w*)\s+([A-Za-z_]\w*)\s*\(")
MODULE_RE = re.compile(r"\b(?:macro)?module\s+([A-Za-z_][\w$]*)")


def blank_comments(text):
    """Replace comments with spaces, preserving line structure."""
    def pad(match):
        return re.sub(r"[^\n]", " ", match.group(0))

    text = re.sub(r"/\*.*?\*/", pad, text, flags=re.DOTALL)
    text = re.sub(r"//[^\n]*", pad, text)
    text = re.sub(r'"(?:[^"\\\n]|\\.)*"', pad, text)
    return text


def tokenize(text):
    """(line_number, token) pairs; tokens are words or single punctuation."""
    tokens = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        for m in re.finditer(r"[A-Za-z_$][\w$]*|[;(){}\[\]]", line):
            tokens.append((lineno, m.group(0)))
    return tokens


def lint_file(path, declared_modules):
    errors = []
    try:
        with open(path, encoding="utf-8", errors="replace") as handle:
            raw = handle.read()
    except OSError as exc:
        return [(1, "error: cannot read source: %s" % exc)]
    text = blank_comments(raw)
    tokens = tokenize(text)
    words = [t for t in tokens if t[1][0].isalpha() or t[1][0] in "_$"]

    if not any(tok == "module" or tok == "macromodule" for _ln, tok in words):
        return [(1, "syntax error")]

    # module/endmodule pairing
    depth = 0
    open_lines = []
    for lineno, tok in words:
        if tok in ("module", "macromodule"):
            depth += 1
            open_lines.append(lineno)
        elif tok == "endmodule":
            depth -= 1
            if open_lines:
                open_lines.pop()
            if depth < 0:
                errors.append((lineno, "syntax error"))
                depth = 0
    if depth > 0:
        errors.append((open_lines[-1] if open_lines else 1, "syntax error"))

    # begin/end pairing
    balance = 0
    last_begin = 1
    for lineno, tok in words:
        if tok == "begin":
            balance += 1
            last_begin = lineno
        elif tok == "end":
            balance = max(0, balance - 1)
    if balance > 0:
        errors.append((last_begin, "error: malformed statement"))

    # parenthesis balance
    paren = 0
    last_open = 1
    for lineno, tok in tokens:
        if tok == "(":
            paren += 1
            last_open = lineno
        elif tok == ")":
            paren = max(0, paren - 1)
    if paren > 0:
        errors.append((last_open, "syntax error"))

    # simple statements must reach a semicolon before the next structural keyword
    i = 0
    while i < len(tokens):
        lineno, tok = tokens[i]
        if tok in STATEMENT_KEYWORDS:
            j = i + 1
            terminated = None
            while j < len(tokens):
                _ln, nxt = tokens[j]
                if nxt == ";":
                    terminated = True
                    break
                if nxt in STATEMENT_BREAKERS:
                    terminated = False
                    break
                j += 1
            if terminated is False or (terminated is None and j >= len(tokens)):
                errors.append((lineno, "syntax error"))
            i = j
        else:
            i += 1

    # unknown module instantiations (elaboration-stage check)
    for lineno, line in enumerate(text.splitlines(), start=1):
        m = INSTANCE_RE.match(line)
        if not m:
            continue
        mtype, inst = m.group(1), m.group(2)
        if mtype in KEYWORDS or mtype in GATE_PRIMITIVES or inst in KEYWORDS:
            continue
        if mtype.startswith("$"):
            continue
        if mtype not in declared_modules:
            errors.append((lineno, "error: Unknown module type: %s" % mtype))

    return sorted(set(errors))


def main(argv=None):
    parser = argparse.ArgumentParser(description="stub Verilog compiler")
    parser.add_argument("--out", required=True)
    parser.add_argument("sources", nargs="+")
    args = parser.parse_args(argv)

    declared = set()
    texts = {}
    for src in args.sources:
        try:
            with open(src, encoding="utf-8", errors="replace") as handle:
                texts[src] = handle.read()
        except OSError:
            texts[src] = ""
        declared.update(MODULE_RE.findall(blank_comments(texts[src])))

    any_errors = False
    for src in args.sources:
        for lineno, message in lint_file(src, declared):
            sys.stderr.write("%s:%d: %s\n" % (src, lineno, message))
            any_errors = True

    if any_errors:
        return 1

    top = ""
    first = texts.get(args.sources[0], "")
    m = MODULE_RE.search(blank_comments(first))
    if m:
        top = m.group(1)
    with open(args.out, "w", encoding="utf-8") as handle:
        json.dump({"sources": list(args.sources), "top": top}, handle)
        handle.write("\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
