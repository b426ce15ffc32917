"""Shared fixtures: the saddle slab, the Anosov mapping torus and perturbations."""

from __future__ import annotations

import math

import numpy as np
import pytest

from contactlab.contact_pair import ContactPair, balance, pair_scalars
from contactlab.geometry import Box, Form, Grid, MappingTorus

PI = {"pi": math.pi}
SLAB = Box(((-1.0, 1.0),) * 3)

# lines printed by the acceptance module, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def saddle_pair(chart=SLAB) -> ContactPair:
    am = Form.from_strings(1, ["-y", "0", "-1"], chart)
    ap = Form.from_strings(1, ["-y", "0", "1"], chart)
    return ContactPair(am, ap)


def anosov_pair(d: float = 0.0, e: float = 0.0, chart=None) -> ContactPair:
    """``e^{rt} du -+ e^{-rt} ds`` with t-periodic factors ``1 + d sin 2pi t`` on the
    ``du`` part of ``alpha_+`` and ``1 + e cos 2pi t`` on the ``ds`` part of ``alpha_-``."""
    chart = chart or MappingTorus()
    fu = f"(1+({d})*sin(2*pi*t))"
    fs = f"(1+({e})*cos(2*pi*t))"
    ap = Form.from_strings(1, [f"{fu}*exp(r*t)*du{i}+exp(-r*t)*ds{i}" for i in (1, 2)] + ["0"],
                           chart, PI)
    am = Form.from_strings(1, [f"exp(r*t)*du{i}-{fs}*exp(-r*t)*ds{i}" for i in (1, 2)] + ["0"],
                           chart, PI)
    return ContactPair(am, ap)


def box_pair(a: float, b: float, c: float, chart=SLAB) -> ContactPair:
    """Small smooth perturbation of the saddle slab; contact for ``|a|, |b|, |c| <= 0.1``."""
    am = Form.from_strings(1, [f"-y+({a})*sin(z)", f"({b})*cos(x)", "-1"], chart)
    ap = Form.from_strings(1, [f"-y+({c})*sin(y+z)", "0", f"1+({a})*cos(x)*sin(y)"], chart)
    return ContactPair(am, ap)


@pytest.fixture(scope="session")
def slab_grid() -> Grid:
    return Grid(SLAB, 13)


@pytest.fixture(scope="session")
def saddle(slab_grid):
    bp = balance(saddle_pair(), slab_grid)
    return bp, pair_scalars(bp)


@pytest.fixture(scope="session")
def torus():
    return MappingTorus()


@pytest.fixture(scope="session")
def torus_grid(torus) -> Grid:
    return Grid(torus, 6)


@pytest.fixture(scope="session")
def anosov(torus, torus_grid):
    bp = balance(anosov_pair(chart=torus), torus_grid)
    return bp, pair_scalars(bp)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
