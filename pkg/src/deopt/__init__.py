"""Fuzzing harness that finds cross-rule optimization bugs in Datalog engines.

Test cases grow one rule at a time.  After each appended rule the full
program is evaluated by the engine under test, while a test oracle is
assembled from single-rule reference programs that the engine also runs.
Single-rule programs give cross-rule optimizations nothing to do, so any
mismatch between the two results points at the optimizer.

An embedded bottom-up engine with injectable optimization bugs ships with
the package, making the whole pipeline testable without external software.
"""

__version__ = "0.1.0"
