from __future__ import annotations

import functools

import pytest

from grwflow.flow import CheckConfig, FlowConfig, InitialData, run_u

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record_acceptance(n: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[n] = (bool(ok), detail)
    print(f"\nACCEPTANCE {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        tr.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


def bump_ball(points=100, t_end=1.0, **checks) -> FlowConfig:
    """Reference profile, radial ball n=2, flat leaf, mean-convex cosine bump."""
    return FlowConfig(profile="reference", n=2, K_M=0.0, domain="ball", R=1.0, points=points,
                      t_end=t_end, initial=InitialData("bump", 1.0, 0.1),
                      checks=CheckConfig(**checks))


def flat_bump(points=100, t_end=0.05, **checks) -> FlowConfig:
    return FlowConfig(profile="minkowski_product", n=1, domain="interval", a=0.0, b=1.0,
                      points=points, t_end=t_end, initial=InitialData("bump", 0.0, 0.1),
                      checks=CheckConfig(**checks))


def steady_const(points=200, t_end=1.0) -> FlowConfig:
    return FlowConfig(profile="steady_state", n=2, domain="interval", a=0.0, b=1.0, points=points,
                      t_end=t_end, initial=InitialData("constant", 1.0))


@functools.lru_cache(maxsize=None)
def cached_run(cfg: FlowConfig, keep_windows: bool = False):
    return run_u(cfg, keep_windows=keep_windows)


@pytest.fixture(scope="session")
def ref_ball_T1():
    return cached_run(bump_ball(100, 1.0))


@pytest.fixture(scope="session")
def residual_runs():
    """Short reference-ball runs at three resolutions with every step's window kept."""
    return {N: cached_run(bump_ball(N, 0.05, residual_every=1), True) for N in (50, 100, 200)}


@pytest.fixture(scope="session")
def flat_runs():
    return {N: cached_run(flat_bump(N, 0.05, residual_every=1), True) for N in (50, 100, 200)}
