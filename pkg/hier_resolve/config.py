"""Application configuration: one YAML document plus command-line overrides."""

import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Union

import yaml

from hier_resolve.atomizer import AtomizerRules, load_rules
from hier_resolve.conflict_scan import Detector, DetectorBackend, DetectorSpec, RuleBasedDetector, ScanScope
from hier_resolve.context_model import HierarchyConfig, TieBreak
from hier_resolve.errors import ConfigError
from hier_resolve.nli_client import EndpointConfig, NLIClient, load_mock_fixture, mock_transport

log = logging.getLogger(__name__)

BUILTIN_RULES = "builtin"
MOCK_ENDPOINT = EndpointConfig(base_url="http://mock.invalid/v1", model_name="mock-detector")


@dataclass(frozen=True)
class AppConfig:
    """
    Parameters:
        detector: backend, parallelism and scan scope.
        endpoint: chat-completions endpoint for the external backend.
        hierarchy: depth, tie-break rule and atom cap.
        atomizer_rules: "builtin" or a path to a YAML rule table.
        mock: path to a recorded-responses fixture replayed instead of the network.
    """

    detector: DetectorSpec = DetectorSpec()
    endpoint: Optional[EndpointConfig] = None
    hierarchy: HierarchyConfig = HierarchyConfig()
    atomizer_rules: str = BUILTIN_RULES
    mock: Optional[str] = None

    def __post_init__(self):
        if self.detector.backend == DetectorBackend.EXTERNAL and self.endpoint is None and self.mock is None:
            raise ConfigError("The external detector needs an endpoint section")


def _section(payload: dict, name: str) -> dict:
    section = payload.get(name) or {}
    if not isinstance(section, dict):
        raise ConfigError(f"Config section {name!r} must be a mapping")
    return section


def config_from_dict(payload: dict, environ=None) -> AppConfig:
    try:
        detector = _section(payload, "detector")
        hierarchy = _section(payload, "hierarchy")
        endpoint = _section(payload, "endpoint")
        return AppConfig(
            detector=DetectorSpec(
                backend=DetectorBackend(detector.get("backend", DetectorBackend.RULE_BASED.value)),
                parallelism=int(detector.get("parallelism", 1)),
                scan_scope=ScanScope(detector.get("scan_scope", ScanScope.ALL_PAIRS.value)),
            ),
            endpoint=EndpointConfig.from_dict(endpoint, environ) if endpoint else None,
            hierarchy=HierarchyConfig(
                depth=int(hierarchy.get("depth", 2)),
                tie_break=TieBreak(hierarchy.get("tie_break", TieBreak.LOWEST_INDEX_FIRST.value)),
                max_instructions=int(hierarchy.get("max_instructions", 512)),
            ),
            atomizer_rules=str(payload.get("atomizer_rules") or BUILTIN_RULES),
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(f"Invalid configuration: {e}")


def load_config(path: Optional[Union[str, Path]] = None, environ=None) -> AppConfig:
    """Read a config document; None gives the defaults (rule-based detector, K=2)."""
    if path is None:
        return AppConfig()
    try:
        payload = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    except (OSError, yaml.YAMLError) as e:
        raise ConfigError(f"Cannot read config {path}: {e}")
    if not isinstance(payload, dict):
        raise ConfigError(f"Config {path} must be a mapping")
    config = config_from_dict(payload, environ)
    log.debug(f"Loaded config from {path}: {config}")
    return config


def with_overrides(
    config: AppConfig,
    detector: Optional[str] = None,
    mock: Optional[str] = None,
    parallelism: Optional[int] = None,
) -> AppConfig:
    """Apply --detector / --mock / --parallelism on top of the file values."""
    spec = config.detector
    try:
        if detector is not None:
            spec = replace(spec, backend=DetectorBackend(detector))
        if parallelism is not None:
            spec = replace(spec, parallelism=parallelism)
    except ValueError as e:
        raise ConfigError(str(e))
    return replace(config, detector=spec, mock=mock if mock is not None else config.mock)


def load_atomizer_rules(config: AppConfig) -> AtomizerRules:
    if config.atomizer_rules == BUILTIN_RULES:
        return load_rules()
    return load_rules(config.atomizer_rules)


def build_detector(config: AppConfig) -> Detector:
    """
    Rule-based detector, or the chat-completions client. With a mock fixture
    the client talks to an in-process transport and never opens a socket.
    """
    if config.detector.backend == DetectorBackend.RULE_BASED:
        return RuleBasedDetector()
    if config.mock:
        log.info(f"Replaying detector responses from {config.mock}")
        return NLIClient(config.endpoint or MOCK_ENDPOINT, transport=mock_transport(load_mock_fixture(config.mock)))
    return NLIClient(config.endpoint)
