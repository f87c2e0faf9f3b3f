"""Prompt construction and response parsing for the driving teacher.

The system message frames the teacher as a human driver and pins down the
answer format; the user message carries one scenario with values rendered at
two decimals. Parsing only trusts the mandated final line, taking the last
occurrence so intermediate reasoning cannot spoof it.
"""
from __future__ import annotations

import re
from dataclasses import dataclass

SYSTEM_MESSAGE = """\
You are an experienced human driver in a car-following situation on a single \
highway lane.

Background: You drive a passenger car behind a leading vehicle. You know your \
own speed, the bumper-to-bumper gap to the leader, and your relative speed \
(your speed minus the leader's; positive means you are closing in).

Objective: Decide the longitudinal acceleration you would apply right now, \
trading off safety, driving comfort and travel efficiency the way an \
attentive human driver does.

Guidelines:
- Never risk a collision; keep a gap you could still brake within.
- Stay within the physically plausible range of -5 to 5 m/s^2.
- Prefer smooth, mild actions when the situation is calm.
- If the gap shrinks quickly, brake early and firmly rather than late.

Instructions: Reason step by step about the current speed, the gap, and \
whether it is opening or closing before you commit to a value.

Response format: End your reply with exactly one line of the form
Final acceleration: <value> m/s^2
where <value> is a decimal number with at most two decimal places.\
"""

USER_TEMPLATE = """\
Current driving state:
- your speed: {v:.2f} m/s
- gap to the leader: {s:.2f} m
- relative speed (yours minus the leader's): {dv:.2f} m/s

Think step by step, then answer in the required format.\
"""

# the mandated final line; unit suffix tolerated but not required
_FINAL_RE = re.compile(
    r"final\s+acceleration\s*[:=]?\s*([-+]?\d+(?:\.\d+)?)", re.IGNORECASE
)


@dataclass(frozen=True)
class PromptBundle:
    system: str
    user: str


def build_prompt(state) -> PromptBundle:
    """Render the two chat messages for one (v, s, dv) state."""
    if hasattr(state, "v"):
        v, s, dv = state.v, state.s, state.dv
    else:
        v, s, dv = (float(x) for x in state)
    return PromptBundle(
        system=SYSTEM_MESSAGE,
        user=USER_TEMPLATE.format(v=v, s=s, dv=dv),
    )


def parse_acceleration(text: str) -> float | None:
    """Extract the acceleration from a teacher reply.

    Returns the value of the last line matching the mandated format, or None
    when no such line exists. Parsing failure is data, not an exception: the
    caller records it as an invalid vote.
    """
    if not text:
        return None
    matches = _FINAL_RE.findall(text)
    if not matches:
        return None
    return float(matches[-1])
