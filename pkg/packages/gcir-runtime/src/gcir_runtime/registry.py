from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, List, Type

import yaml
from pydantic import BaseModel


@dataclass
class CommandSpec:
    name: str
    doc: str
    params_model: Type[BaseModel]
    result_model: Type[BaseModel]
    func: Callable[..., Any]


class CommandRegistry:
    _instance: "CommandRegistry" | None = None

    def __init__(self) -> None:
        self._commands: Dict[str, CommandSpec] = {}
        self.toolset_name: str | None = None
        self.toolset_version: str | None = None
        self.default_threads: int = 1

    @classmethod
    def instance(cls) -> "CommandRegistry":
        if cls._instance is None:
            cls._instance = CommandRegistry()
        return cls._instance

    def load_metadata(self, path: Path) -> Dict[str, Any]:
        """Read toolset.yaml: name, version, default threads and env defaults.

        Env entries only fill variables the caller has not set.
        """
        meta = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        self.toolset_name = str(meta.get("name", "unknown"))
        self.toolset_version = str(meta.get("version", "0.0.0"))
        self.default_threads = max(1, int(meta.get("threads", 1)))
        for key, value in (meta.get("env") or {}).items():
            os.environ.setdefault(str(key), str(value))
        return meta

    def register(self, spec: CommandSpec) -> None:
        if spec.name in self._commands:
            raise ValueError(f"Command '{spec.name}' already registered")
        self._commands[spec.name] = spec

    def describe(self) -> List[Dict[str, Any]]:
        return [
            {
                "name": spec.name,
                "doc": spec.doc,
                "params_schema": spec.params_model.model_json_schema(),
                "result_schema": spec.result_model.model_json_schema(),
            }
            for spec in self._commands.values()
        ]

    def get_command(self, name: str) -> CommandSpec:
        if name not in self._commands:
            raise KeyError(name)
        return self._commands[name]

    def list_names(self) -> List[str]:
        return list(self._commands.keys())
