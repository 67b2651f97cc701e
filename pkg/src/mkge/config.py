"""TOML configuration and provider construction."""
from __future__ import annotations

import copy
import json
import os
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import providers as prov
from .metrics import MetricKey
from .qa import DEFAULT_F1_DEADBAND, Templates, offline_chat

DEFAULTS: Dict[str, Any] = {
    "providers": {
        "mode": "offline",
        "chat": {"endpoint": "https://api.openai.com/v1/chat/completions", "model": "gpt-4",
                 "question_model": "gpt-4o", "judge_model": "gpt-4"},
        "search": {"endpoint": "https://api.tavily.com/search", "results_field": "results",
                   "title_field": "title", "url_field": "url", "content_field": "content"},
        "embed": {"endpoint": "", "model": "all-MiniLM-L6-v2"},
    },
    "metrics": {"orientation": {}},
    "judge": {"f1_deadband": DEFAULT_F1_DEADBAND},
    "embed": {"dimension": prov.DEFAULT_DIMENSION},
    "louvain": {"seed": 0},
    "pipeline": {"workers": 1},
    "paths": {"templates": "", "corpus": "", "chat_script": "", "logs": ""},
}


class ConfigError(ValueError):
    pass


def _merge(base: Dict[str, Any], override: Mapping[str, Any], where: str = "") -> Dict[str, Any]:
    out = copy.deepcopy(base)
    for key, value in override.items():
        dotted = f"{where}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {dotted!r}")
        if dotted == "metrics.orientation":
            if not isinstance(value, Mapping):
                raise ConfigError("metrics.orientation must be a table")
            for mk, direction in value.items():
                try:
                    MetricKey(mk)
                except ValueError:
                    raise ConfigError(f"unknown metric {mk!r} in metrics.orientation") from None
                if direction not in ("below", "above"):
                    raise ConfigError(f"orientation for {mk} must be 'below' or 'above'")
            out[key] = dict(value)
        elif isinstance(base[key], dict):
            if not isinstance(value, Mapping):
                raise ConfigError(f"{dotted!r} must be a table")
            out[key] = _merge(base[key], value, dotted + ".")
        else:
            expected = type(base[key])
            if expected is float and isinstance(value, int) and not isinstance(value, bool):
                value = float(value)
            if not isinstance(value, expected) or isinstance(value, bool) != (expected is bool):
                raise ConfigError(f"{dotted!r} must be {expected.__name__}")
            out[key] = value
    return out


@dataclass
class Config:
    data: Dict[str, Any]
    base_dir: Path

    @property
    def mode(self) -> str:
        return self.data["providers"]["mode"]

    def path(self, key: str) -> Optional[Path]:
        raw = self.data["paths"][key]
        if not raw:
            return None
        p = Path(raw)
        return p if p.is_absolute() else self.base_dir / p

    def __getitem__(self, key: str) -> Any:
        return self.data[key]


def parse_config(text: str, base_dir: Path = Path(".")) -> Config:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML: {exc}") from None
    data = _merge(DEFAULTS, raw)
    if data["providers"]["mode"] not in ("offline", "live"):
        raise ConfigError("providers.mode must be 'offline' or 'live'")
    if data["embed"]["dimension"] < 1:
        raise ConfigError("embed.dimension must be >= 1")
    if data["judge"]["f1_deadband"] < 0:
        raise ConfigError("judge.f1_deadband must be >= 0")
    if data["pipeline"]["workers"] < 1:
        raise ConfigError("pipeline.workers must be >= 1")
    return Config(data, base_dir)


def load_config(path=None) -> Config:
    if path is None:
        return parse_config("")
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, path.parent)


def fixture_path(name: str) -> Path:
    return Path(str(resources.files("mkge").joinpath("fixtures", name)))


def _require_env(name: str, env: Mapping[str, str]) -> str:
    value = env.get(name, "")
    if not value:
        raise ConfigError(f"live mode requires the {name} environment variable")
    return value


def build_providers(config: Config, env: Optional[Mapping[str, str]] = None) -> Tuple[Any, Any, Any]:
    """Return ``(chat, search, embedder)`` for the configured mode."""
    env = os.environ if env is None else env
    pc = config["providers"]
    if config.mode == "offline":
        script = {}
        script_path = config.path("chat_script")
        if script_path is not None:
            try:
                script = json.loads(script_path.read_text(encoding="utf-8"))
            except (OSError, ValueError) as exc:
                raise ConfigError(f"cannot load chat script {script_path}: {exc}") from None
        corpus = config.path("corpus") or fixture_path("corpus.jsonl")
        try:
            search = prov.FixtureSearch.from_jsonl(corpus)
        except (OSError, ValueError, KeyError) as exc:
            raise ConfigError(f"cannot load search corpus {corpus}: {exc}") from None
        return offline_chat(script), search, prov.HashingEmbedder(config["embed"]["dimension"])

    search_key = _require_env(prov.SEARCH_KEY_ENV, env)
    chat_key = _require_env(prov.CHAT_KEY_ENV, env)
    embed_key = _require_env(prov.EMBED_KEY_ENV, env)
    if not pc["embed"]["endpoint"]:
        raise ConfigError("live mode requires providers.embed.endpoint")
    chat = prov.LiveChat(pc["chat"]["endpoint"], chat_key, {
        "answer": pc["chat"]["model"],
        "question": pc["chat"]["question_model"] or pc["chat"]["model"],
        "judge": pc["chat"]["judge_model"] or pc["chat"]["model"],
    })
    s = pc["search"]
    search = prov.LiveSearch(s["endpoint"], search_key, {
        "results": s["results_field"], "title": s["title_field"], "url": s["url_field"],
        "content": s["content_field"]})
    embedder = prov.LiveEmbedder(pc["embed"]["endpoint"], embed_key, pc["embed"]["model"])
    return chat, search, embedder


def templates_for(config: Config) -> Templates:
    return Templates(config.path("templates"))
