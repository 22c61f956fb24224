"""sxextract package.

Extracts (symptom, status) mentions from clinician/patient conversations
with span-attribute tagging and sequence-to-sequence models, and scores
them against multi-annotator references.

Exports package metadata used by tooling and for introspection.
"""

from sxextract.core import PACKAGE_INFO, ExperimentConfig, default_config, get_config, load_config

__version__ = "0.1.0"
__author__ = "sxextract Development Team"
__license__ = "MIT"
__description__ = "Symptom and status extraction from clinical conversations"

__all__ = [
    "default_config",
    "PACKAGE_INFO",
    "ExperimentConfig",
    "get_config",
    "load_config",
    "__version__",
    "__author__",
    "__license__",
    "__description__",
]
