"""Shared pytest plumbing: always-visible acceptance criterion lines."""

from __future__ import annotations

_criterion_lines: list[str] = []


def record_criterion_line(line: str) -> None:
    _criterion_lines.append(line)


def pytest_terminal_summary(terminalreporter) -> None:
    if _criterion_lines:
        terminalreporter.section("acceptance criteria")
        for line in _criterion_lines:
            terminalreporter.line(line)
