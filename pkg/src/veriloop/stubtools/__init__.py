"""Fake EDA tool scripts for the built-in "stub" profile.

Each script is a standalone stdlib-only program invoked as a subprocess, so
the stub profile exercises exactly the same process/timeout/log plumbing as
a real toolchain. The scripts follow the log formats the "stub" parse rules
expect (Icarus-style compile diagnostics, plain coverage rows).
"""
