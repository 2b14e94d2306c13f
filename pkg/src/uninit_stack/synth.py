"""Random IL programs for scale runs and property tests."""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import List


@dataclass
class SynthConfig:
    functions: int = 40
    body: int = 30            # statements per function body, before the epilogue
    frame: int = 64           # bytes of locals
    branch_prob: float = 0.15
    call_prob: float = 0.1
    seed: int = 0


def generate_program(cfg: SynthConfig) -> str:
    """A loop-free program; function ``f<i>`` may call ``f<j>`` for ``j > i`` with
    a pointer into its frame, so points-to facts cross contexts."""
    rng = random.Random(cfg.seed)
    slots = list(range(0, cfg.frame, 4))
    regs = ["eax", "ebx", "ecx", "edx", "esi", "edi"]
    out: List[str] = []
    for i in reversed(range(cfg.functions)):
        lines = [f"func f{i} {{", "entry:", f"  esp = sub esp, {cfg.frame}"]
        ptr = None
        label = 0
        open_labels: List[str] = []
        for k in range(cfg.body):
            r = rng.random()
            reg = rng.choice(regs)
            if r < cfg.branch_prob and k < cfg.body - 2:
                label += 1
                name = f"L{label}"
                lines.append(f"  br eq {reg}, {rng.randrange(4)}, {name}")
                open_labels.append(name)
                ptr = None
                continue
            if open_labels and rng.random() < 0.3:
                lines.append(f"{open_labels.pop(0)}:")
                ptr = None
            if r < cfg.branch_prob + cfg.call_prob and i + 1 < cfg.functions:
                callee = rng.randrange(i + 1, cfg.functions)
                lines.append(f"  ebp = lea [esp+{rng.choice(slots)}]")
                lines.append("  push ebp")
                lines.append(f"  call f{callee}")
                lines.append("  esp = add esp, 4")
                ptr = None
                continue
            choice = rng.randrange(6)
            if choice == 0:
                lines.append(f"  store [esp+{rng.choice(slots)}], {rng.randrange(100)}")
            elif choice == 1:
                lines.append(f"  {reg} = load [esp+{rng.choice(slots)}]")
            elif choice == 2:
                lines.append(f"  {reg} = lea [esp+{rng.choice(slots)}]")
                ptr = reg
            elif choice == 3 and ptr and ptr != reg:
                lines.append(f"  store [{ptr}+{rng.choice((0, 4, 8))}], {reg}")
            elif choice == 4 and ptr and ptr != reg:
                lines.append(f"  {reg} = load [{ptr}+{rng.choice((0, 4, 8))}]")
            else:
                # on the pointer register this derives a new pointer
                lines.append(f"  {reg} = add {reg}, {rng.randrange(1, 9)}")
        for name in open_labels:
            lines.append(f"{name}:")
            lines.append("  nop")
        lines.append(f"  esp = add esp, {cfg.frame}")
        lines.append("  ret")
        lines.append("}")
        out.append("\n".join(lines))
    return "\n\n".join(reversed(out)) + "\n"
