"""Exception hierarchy shared by every analysis module

Each error carries a machine-readable ``kind`` (its class name) and the
process exit code the CLI reports for it: 2 for usage/configuration
problems, 3 for runtime numeric failures.
"""
from typing import Any, Dict

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


class RelevanceError(Exception):
    """Base class for all analysis errors"""

    exit_code = EXIT_RUNTIME

    @property
    def kind(self) -> str:
        return type(self).__name__

    def to_dict(self) -> Dict[str, Any]:
        return {"error": {"kind": self.kind, "message": str(self)}}


# ===== Configuration errors (exit 2) =====
class ConfigError(RelevanceError):
    exit_code = EXIT_CONFIG


class ManifestParseError(ConfigError, ValueError):
    pass


class WeightShapeMismatch(ConfigError, ValueError):
    pass


class MissingWeightBlob(ConfigError, FileNotFoundError):
    pass


class CyclicGraph(ConfigError, ValueError):
    pass


class TensorFormatError(ConfigError, ValueError):
    pass


class InvalidSpec(ConfigError, ValueError):
    pass


class InvalidWindowSize(ConfigError, ValueError):
    pass


class InvalidSigma(ConfigError, ValueError):
    pass


class UnsupportedRuleForLayer(ConfigError, ValueError):
    pass


class RuleParseError(ConfigError, ValueError):
    pass


# ===== Runtime errors (exit 3) =====
class ShapeMismatch(RelevanceError, ValueError):
    pass


class NonFiniteValue(RelevanceError, ValueError):
    pass


class InvalidFrameCount(RelevanceError, ValueError):
    pass


class IndexOutOfRange(RelevanceError, IndexError):
    pass


class NegativeRelevance(RelevanceError, ValueError):
    pass


class RateMismatch(RelevanceError, ValueError):
    pass


class DegenerateInput(RelevanceError, ValueError):
    pass


class InvalidK(RelevanceError, ValueError):
    pass


class EmptyInput(RelevanceError, ValueError):
    pass


class WindowOutOfRange(RelevanceError, ValueError):
    pass


class InvalidInput(RelevanceError, ValueError):
    pass


class IOFailure(RelevanceError, OSError):
    pass
