"""Declarative run configuration: schema, defaults, and YAML round trip.

Unknown keys are rejected so configs stay honest records of what ran.
Agent and optimizer defaults are the full-scale settings used throughout;
only the training budget and output directory are mandatory.
"""

from __future__ import annotations

from typing import Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .cmaes import CmaConfig
from .envs import ENV_NAMES, EnvModification, make_env
from .errors import ConfigurationError
from .genome import AgentConfig
from .harness import EnvSource, RolloutPlan, TrainRun


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class AgentSection(_Section):
    input_size: int = 96
    window: int = 7
    stride: int = 4
    embed_dim: int = 4
    top_k: int = 10
    hidden_size: int = 16


class EnvSection(_Section):
    name: str | None = "lane_racer"
    size: int | None = None
    max_steps: int | None = None
    modification: str | None = None
    bridge: str | None = None


class OptimizerSection(_Section):
    population: int = 256
    sigma0: float = 0.1
    parents: int | None = None


class RolloutSection(_Section):
    episodes: int = 16
    max_steps: int | None = None


class TrainingSection(_Section):
    generations: int
    eval_every: int = 10
    eval_episodes: int = 100
    seed: int = Field(default=0, ge=0)
    target_score: float | None = None


class OutputSection(_Section):
    dir: str


class RunConfig(_Section):
    schema_version: Literal[1] = 1
    agent: AgentSection = Field(default_factory=AgentSection)
    env: EnvSection = Field(default_factory=EnvSection)
    optimizer: OptimizerSection = Field(default_factory=OptimizerSection)
    rollout: RolloutSection = Field(default_factory=RolloutSection)
    training: TrainingSection
    output: OutputSection


def parse_config(text: str) -> RunConfig:
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"config is not valid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigurationError("config must be a mapping at the top level")
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as exc:
        first = exc.errors()[0]
        key = ".".join(str(p) for p in first["loc"])
        raise ConfigurationError(f"config key {key!r}: {first['msg']}") from exc


def load_config(path: str) -> RunConfig:
    with open(path, encoding="utf-8") as f:
        return parse_config(f.read())


def dump_config(config: RunConfig) -> str:
    return yaml.safe_dump(config.model_dump(), sort_keys=False)


def env_source_from_section(section: EnvSection, bridge_override: str | None = None) -> EnvSource:
    bridge = bridge_override or section.bridge
    if bridge is not None:
        return EnvSource(bridge=bridge)
    if section.name is None:
        raise ConfigurationError("env section needs a name or a bridge endpoint")
    if section.name not in ENV_NAMES:
        raise ConfigurationError(
            f"config key 'env.name': unknown env {section.name!r}"
        )
    mod = EnvModification(section.modification) if section.modification else None
    if mod is not None:
        # fail here, not inside a worker, if the pairing is invalid
        make_env(section.name, size=section.size, modification=mod)
    return EnvSource(
        name=section.name, size=section.size, max_steps=section.max_steps, modification=mod
    )


def resolve_action_spec(source: EnvSource):
    """The action space the environment declares (opens a probe instance)."""
    env = source.make()
    try:
        return env.spec.action
    finally:
        env.close()


def agent_config_from_sections(agent: AgentSection, source: EnvSource) -> AgentConfig:
    return AgentConfig(
        action=resolve_action_spec(source),
        input_size=agent.input_size,
        window=agent.window,
        stride=agent.stride,
        embed_dim=agent.embed_dim,
        top_k=agent.top_k,
        hidden_size=agent.hidden_size,
    )


def train_run_from_config(
    config: RunConfig,
    seed_override: int | None = None,
    out_override: str | None = None,
    bridge_override: str | None = None,
) -> TrainRun:
    source = env_source_from_section(config.env, bridge_override)
    agent_config = agent_config_from_sections(config.agent, source)
    optimizer = CmaConfig(
        population=config.optimizer.population,
        sigma0=config.optimizer.sigma0,
        parents=config.optimizer.parents,
        seed=config.training.seed if seed_override is None else seed_override,
    )
    plan = RolloutPlan(
        env=source,
        rollouts=config.rollout.episodes,
        max_steps=config.rollout.max_steps,
    )
    return TrainRun(
        config=agent_config,
        optimizer=optimizer,
        plan=plan,
        generations=config.training.generations,
        out_dir=config.output.dir if out_override is None else out_override,
        eval_every=config.training.eval_every,
        eval_episodes=config.training.eval_episodes,
        seed=config.training.seed if seed_override is None else seed_override,
        target_score=config.training.target_score,
    )
