"""Toy environments with delayed / terminal-only rewards, plus exact solvers."""
from ..errors import ConfigError
from .aimline import AimLine
from .base import Environment, MdpSpec, RenderFrame, StepResult
from .gaterun import GateRun
from .solvers import Solution, best_return_by_enumeration, solve

ENV_REGISTRY = {
    "aimline": AimLine,
    "gaterun": GateRun,
}


def make_env(env_id: str, **kwargs) -> Environment:
    try:
        cls = ENV_REGISTRY[env_id]
    except KeyError:
        raise ConfigError(f"unknown environment id {env_id!r}; "
                          f"known: {sorted(ENV_REGISTRY)}") from None
    return cls(**kwargs)


__all__ = [
    "AimLine", "GateRun", "Environment", "MdpSpec", "RenderFrame",
    "StepResult", "Solution", "solve", "best_return_by_enumeration",
    "make_env", "ENV_REGISTRY",
]
