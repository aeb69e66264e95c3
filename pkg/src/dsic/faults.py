"""Fault-injection hooks used by the verification suite.

The verify command must prove that it notices broken kernels, so a handful of
code paths consult :data:`ACTIVE` and misbehave on purpose when asked to.
Nothing in normal operation ever populates it.
"""

from contextlib import contextmanager

KNOWN = ("bilinear", "softmax", "detach")

ACTIVE: set = set()


@contextmanager
def inject(*names):
    unknown = [n for n in names if n not in KNOWN]
    if unknown:
        raise ValueError(f"unknown fault(s): {unknown}; expected one of {KNOWN}")
    added = [n for n in names if n not in ACTIVE]
    ACTIVE.update(added)
    try:
        yield
    finally:
        ACTIVE.difference_update(added)
