"""Python front end for the native library.

Configs are plain dicts with the same keys the CLI's JSON config accepts;
anything omitted keeps its default.
"""

import json

from . import _core
from ._core import ConfigError, DivergenceError, FormatError, Model, budget_plan, solve_dimension

__all__ = [
    "ConfigError",
    "DivergenceError",
    "FormatError",
    "Model",
    "adapt",
    "adapt_with_mask",
    "apply_delta",
    "budget_plan",
    "build",
    "default_config",
    "evaluate",
    "gradcheck",
    "pretrain",
    "report",
    "solve_dimension",
]


def _js(config):
    return json.dumps(config or {})


def default_config():
    return json.loads(_core.default_config_json())


def build(config=None, seed=0):
    return _core.Model.build(_js(config), seed)


def pretrain(config=None):
    return _core.pretrain(_js(config))


def adapt(base, config=None, kind="sfa"):
    """Adapts `base` to the configured target task. `kind` names a run kind such as "frozen"."""
    return _core.adapt(base, _js(config), kind)


def adapt_with_mask(base, mask, config=None):
    return _core.adapt_with_mask(base, mask, _js(config))


def apply_delta(base, delta):
    return _core.apply_delta(base, delta)


def evaluate(model, config=None):
    return _core.evaluate(model, _js(config))


def report(run):
    return json.loads(run.report_json)


def gradcheck(draws=3, seed=0):
    return dict(_core.gradcheck(draws, seed))
