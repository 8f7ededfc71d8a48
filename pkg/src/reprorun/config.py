"""Run configuration with built-in defaults mirroring the study setup.

Defaults: one hour per file and five hours per package, a three-version
R interpreter matrix, both cleaning modes, and the US CRAN mirror.
Precedence is CLI flag > config file > these defaults. The config file
is plain INI: a ``[run]`` section plus one ``[interpreter.<label>]``
section per interpreter.
"""

from __future__ import annotations

import configparser
import shlex
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .cleaner import DEFAULT_CRAN_MIRROR
from .executor import MODE_CLEANED, MODE_RAW, Budget, InterpreterSpec

DEFAULT_API_BASE = "https://dataverse.harvard.edu"
DEFAULT_QUERY = 'fileContentType:"type/x-r-syntax"'

# Matrix labels and release dates of the study; point the commands at the
# actual installations (or containers) of each version in your config file.
DEFAULT_INTERPRETERS = [
    InterpreterSpec("R3.2", ("Rscript", "{script}"), release_date="2015-06"),
    InterpreterSpec("R3.6", ("Rscript", "{script}"), release_date="2019-04"),
    InterpreterSpec("R4.0", ("Rscript", "{script}"), release_date="2020-06"),
]


def stub_interpreters(
    labels: tuple[str, ...] = ("R3.2", "R3.6", "R4.0"),
    preinstalled: str = "",
    repo: str = "",
) -> list[InterpreterSpec]:
    """Interpreter matrix backed by the scripted stub (demo and test mode)."""
    command = (sys.executable, "-m", "reprorun.stubr", "{script}")
    return [
        InterpreterSpec(
            label,
            command,
            env={"STUBR_PREINSTALLED": preinstalled, "STUBR_REPO": repo},
        )
        for label in labels
    ]


@dataclass
class RunConfig:
    api_base: str = DEFAULT_API_BASE
    query: str = DEFAULT_QUERY
    interpreters: list[InterpreterSpec] = field(default_factory=lambda: list(DEFAULT_INTERPRETERS))
    budget: Budget = field(default_factory=Budget)
    modes: list[str] = field(default_factory=lambda: [MODE_RAW, MODE_CLEANED])
    jobs: int = 1
    store_path: str = "runs/store.jsonl"
    scratch_root: str = "scratch"
    network_allowed: bool = True
    cran_mirror: str = DEFAULT_CRAN_MIRROR

    def __post_init__(self):
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")
        if not self.modes:
            raise ValueError("at least one cleaning mode is required")

    def snapshot(self) -> dict:
        """JSON-ready view stored alongside the run's outcomes."""
        return {
            "api_base": self.api_base,
            "query": self.query,
            "interpreters": [
                {
                    "label": spec.label,
                    "launch_command": list(spec.launch_command),
                    "release_date": spec.release_date,
                }
                for spec in self.interpreters
            ],
            "per_file_seconds": self.budget.per_file,
            "per_package_seconds": self.budget.per_package,
            "modes": self.modes,
            "jobs": self.jobs,
            "network_allowed": self.network_allowed,
            "cran_mirror": self.cran_mirror,
        }


class ConfigError(Exception):
    pass


def load_config(path: Path | str) -> RunConfig:
    """Parse an INI config file into a RunConfig."""
    parser = configparser.ConfigParser()
    parser.optionxform = str  # preserve case for env overlay keys
    read = parser.read(str(path))
    if not read:
        raise ConfigError(f"cannot read config file {path}")

    config = RunConfig()
    if parser.has_section("run"):
        run = parser["run"]
        config.api_base = run.get("api_base", config.api_base)
        config.query = run.get("query", config.query)
        config.jobs = run.getint("jobs", config.jobs)
        per_file = run.getfloat("per_file_seconds", config.budget.per_file)
        per_package = run.getfloat("per_package_seconds", config.budget.per_package)
        try:
            config.budget = Budget(per_file, per_package)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if run.get("modes"):
            config.modes = [m.strip() for m in run["modes"].split(",") if m.strip()]
        config.network_allowed = run.getboolean("network_allowed", config.network_allowed)
        config.cran_mirror = run.get("cran_mirror", config.cran_mirror)
        config.store_path = run.get("store", config.store_path)
        config.scratch_root = run.get("scratch_root", config.scratch_root)

    interpreters = []
    for section in parser.sections():
        if not section.startswith("interpreter."):
            continue
        label = section.removeprefix("interpreter.")
        options = parser[section]
        if "command" not in options:
            raise ConfigError(f"interpreter {label!r} has no command")
        env = {
            key.removeprefix("env."): value
            for key, value in options.items()
            if key.startswith("env.")
        }
        interpreters.append(
            InterpreterSpec(
                label=label,
                launch_command=tuple(shlex.split(options["command"])),
                release_date=options.get("release_date"),
                env=env,
            )
        )
    if interpreters:
        config.interpreters = interpreters

    for mode in config.modes:
        if mode not in (MODE_RAW, MODE_CLEANED):
            raise ConfigError(f"unknown cleaning mode {mode!r}")
    return config
