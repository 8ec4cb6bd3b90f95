"""Shared fixtures: small datasets and networks trained once per session."""

import numpy as np
import pytest

from ikdnav import data, nn
from ikdnav.sim import IDEAL_TERRAIN, SimConfig, TerrainField, TerrainParams, TerrainPatch, zero_lag

# the two halves of the arena carry different terrains; the identifying cue is roughness
SLICK = TerrainParams(0.6, 0.4, 0.0)
FIRM = TerrainParams(1.0, 0.1, 0.0)
ARENA = (-8.0, -8.0, 8.0, 8.0)


def explore(field_, cfg, duration, seed=0, **kw):
    kw.setdefault("v_range", (0.5, 3.0))
    kw.setdefault("arena", ARENA)
    return data.collect(field_, cfg, data.ExplorationPolicy(rng_seed=seed, **kw), duration)


@pytest.fixture(scope="session")
def identity_dataset():
    """Ideal terrain with zero lag: realized motion equals the command."""
    return explore(TerrainField.uniform(IDEAL_TERRAIN), zero_lag(SimConfig()), 150.0)


@pytest.fixture(scope="session")
def identity_model(identity_dataset):
    return nn.train(identity_dataset, nn.NetworkSpec(), cfg=nn.TrainConfig(epochs=30)).params


@pytest.fixture(scope="session")
def slip_model():
    field_ = TerrainField.uniform(TerrainParams(1.0, 0.5, 0.0))
    ds = explore(field_, SimConfig(), 150.0, seed=1)
    return nn.train(ds, nn.NetworkSpec.ablated(), cfg=nn.TrainConfig(epochs=40)).params


@pytest.fixture(scope="session")
def two_terrain():
    """Left half slick, right half firm; no speed-dependent understeer so grip alone sets slip."""
    cfg = zero_lag(SimConfig(understeer_gain=0.0))
    field_ = TerrainField((TerrainPatch(((-50, -50), (0, -50), (0, 50), (-50, 50)), SLICK, "slick"),), FIRM)
    ds = explore(field_, cfg, 300.0, seed=2)
    full = nn.train(ds, nn.NetworkSpec(), cfg=nn.TrainConfig(epochs=30))
    ablated = nn.train(ds, nn.NetworkSpec.ablated(), cfg=nn.TrainConfig(epochs=30))
    return cfg, ds, full, ablated


def window_on(terrain: TerrainParams, cfg, v=1.5, c=0.3, seed=9) -> np.ndarray:
    """Flattened window recorded while driving steadily on a uniform terrain."""
    from ikdnav.sim import ControlInput, Simulator, VehicleState

    sim = Simulator(TerrainField.uniform(terrain), cfg,
                    VehicleState(actuator_speed=v, actuator_curvature=c, linear_speed=v), seed=seed)
    sim.advance(ControlInput(v, c), duration=1.0)
    return data.flatten_window(sim.imu_window())


_VERDICTS: list = []


@pytest.fixture(scope="session")
def verdict():
    """Record one PASS/FAIL line per acceptance criterion; printed in the terminal summary."""

    def record(criterion: int, title: str, passed: bool, detail: str) -> bool:
        _VERDICTS.append((criterion, f"{'PASS' if passed else 'FAIL'} C{criterion} {title}: {detail}"))
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_VERDICTS):
            terminalreporter.write_line(line)
