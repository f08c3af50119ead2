"""Turn an agent chat reply into an RtlBundle.

The agent is instructed to answer with fenced code blocks, but replies vary;
extraction is deliberately forgiving about fences and strict about the one
decision that matters: which block is the testbench. Detection precedence:

1. a block whose module instantiates a module declared in another block,
2. a block whose module name starts with "tb_" or ends with "_tb",
3. otherwise the reply is ambiguous and the caller re-prompts.
"""

from __future__ import annotations

import re
from typing import Optional, Sequence

from veriloop.errors import AmbiguousBundle, NoCodeFound
from veriloop.gateway import ChatMessage, Role
from veriloop.model import RtlBundle

__all__ = ["extract_rtl_bundle", "merge_revision", "module_names", "first_module_name"]

FENCE_RE = re.compile(r"```[ \t]*(?:[A-Za-z0-9_+-]*)[ \t]*\n(.*?)```", re.DOTALL)
MODULE_DECL_RE = re.compile(r"^\s*(?:macro)?module\s+([A-Za-z_][A-Za-z0-9_$]*)", re.MULTILINE)
BARE_MODULE_RE = re.compile(r"^\s*(?:macro)?module\s+[A-Za-z_].*?^\s*endmodule\b", re.MULTILINE | re.DOTALL)

TESTBENCH_NAME_MARKERS = ("tb_", "_tb")

LINE_COMMENT_RE = re.compile(r"//[^\n]*")
BLOCK_COMMENT_RE = re.compile(r"/\*.*?\*/", re.DOTALL)


def _strip_comments(source: str) -> str:
    return LINE_COMMENT_RE.sub("", BLOCK_COMMENT_RE.sub("", source))


def module_names(source: str) -> list[str]:
    """Names of all modules declared in *source*, in order, comments ignored."""
    return MODULE_DECL_RE.findall(_strip_comments(source))


def first_module_name(source: str) -> Optional[str]:
    names = module_names(source)
    return names[0] if names else None


def _instantiates(block: str, name: str) -> bool:
    """True when *block* contains an instance of module *name* (not its declaration)."""
    body = _strip_comments(block)
    pattern = re.compile(
        r"(?<![\w$.])" + re.escape(name) + r"\s*(?:#\s*\(.*?\)\s*)?[A-Za-z_][\w$]*\s*\(",
        re.DOTALL,
    )
    return bool(pattern.search(body))


def _is_testbench_named(block_modules: Sequence[str]) -> bool:
    return any(
        n.startswith(TESTBENCH_NAME_MARKERS[0]) or n.endswith(TESTBENCH_NAME_MARKERS[1])
        for n in block_modules
    )


def _code_blocks(text: str) -> list[str]:
    blocks = [b.strip("\n") for b in FENCE_RE.findall(text)]
    blocks = [b for b in blocks if b.strip()]
    if blocks:
        return blocks
    bare = BARE_MODULE_RE.findall(text)
    return [b.strip("\n") for b in bare]


def extract_rtl_bundle(response: ChatMessage) -> RtlBundle:
    """Split an assistant reply into design source, testbench source, and top module.

    Raises NoCodeFound when nothing extractable exists and AmbiguousBundle
    when several blocks compete for the testbench slot (or none can be
    identified among multiple module-bearing blocks).
    """
    if response.role is not Role.ASSISTANT:
        raise ValueError("extract_rtl_bundle: response must be an assistant message")

    blocks = _code_blocks(response.content)
    if not blocks:
        raise NoCodeFound("reply contains no fenced code block and no module span")

    with_modules = [(b, module_names(b)) for b in blocks]
    module_blocks = [(b, names) for b, names in with_modules if names]
    if not module_blocks:
        raise NoCodeFound("extracted code declares no module")

    if len(module_blocks) == 1:
        design = module_blocks[0][0]
        return RtlBundle(
            design_source=design,
            testbench_source="",
            top_module=module_blocks[0][1][0],
        )

    def instantiates_other(i: int) -> bool:
        block = module_blocks[i][0]
        others = [n for j, (_b, ns) in enumerate(module_blocks) if j != i for n in ns]
        return any(_instantiates(block, name) for name in others)

    def instantiated_elsewhere(i: int) -> bool:
        names = module_blocks[i][1]
        return any(
            _instantiates(other, name)
            for j, (other, _ns) in enumerate(module_blocks)
            if j != i
            for name in names
        )

    # A testbench drives other modules and nothing drives it.
    tb_candidates = [
        i
        for i in range(len(module_blocks))
        if instantiates_other(i) and not instantiated_elsewhere(i)
    ]
    if len(tb_candidates) > 1:
        named = [i for i in tb_candidates if _is_testbench_named(module_blocks[i][1])]
        if len(named) == 1:
            tb_candidates = named
    if not tb_candidates:
        tb_candidates = [
            i for i, (_b, names) in enumerate(module_blocks) if _is_testbench_named(names)
        ]
    if len(tb_candidates) != 1:
        raise AmbiguousBundle(
            f"cannot pick a testbench among {len(module_blocks)} blocks "
            f"({len(tb_candidates)} candidates)"
        )

    tb_index = tb_candidates[0]
    testbench = module_blocks[tb_index][0]
    design_parts = [b for i, (b, _n) in enumerate(module_blocks) if i != tb_index]
    design = "\n\n".join(design_parts)
    top = first_module_name(design)
    if top is None:
        raise NoCodeFound("design blocks declare no module")
    return RtlBundle(design_source=design, testbench_source=testbench, top_module=top)


def _looks_like_testbench(block: str, design_top: str) -> bool:
    names = module_names(block)
    return _is_testbench_named(names) or _instantiates(block, design_top)


def merge_revision(
    previous: RtlBundle,
    response: ChatMessage,
    *,
    keep_testbench: bool = False,
) -> RtlBundle:
    """Fold a repair/revision reply into the bundle it revises.

    Agents asked for "the full corrected file(s)" often return only the file
    they changed. A lone block that drives the previous top module (or is
    tb-named) replaces just the testbench; a lone design block carries the
    previous testbench forward. keep_testbench pins the previous testbench
    regardless of what the reply contains (design-only revision policy).
    """
    extracted = extract_rtl_bundle(response)
    if not extracted.testbench_source:
        if _looks_like_testbench(extracted.design_source, previous.top_module):
            return RtlBundle(
                design_source=previous.design_source,
                testbench_source=extracted.design_source,
                top_module=previous.top_module,
            )
        return RtlBundle(
            design_source=extracted.design_source,
            testbench_source=previous.testbench_source,
            top_module=extracted.top_module,
        )
    if keep_testbench and previous.testbench_source:
        return RtlBundle(
            design_source=extracted.design_source,
            testbench_source=previous.testbench_source,
            top_module=extracted.top_module,
        )
    return extracted
