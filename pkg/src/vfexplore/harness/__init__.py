from .config import ConfigError, RunConfig, build, load
