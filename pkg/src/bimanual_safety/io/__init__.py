"""Configuration, trajectory logs and reports."""
from .config import ConfigError, RunConfig, dump_config, load_config, to_episode_config

__all__ = ["ConfigError", "RunConfig", "dump_config", "load_config", "to_episode_config"]
