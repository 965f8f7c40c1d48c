"""Bridge real masked language models to the core pipeline's interfaces:
prior score files on disk and the HTTP scoring protocol."""

from .exporter import ExporterConfig, LoadedModel, export_prior_scores, load_model
from .server import ScoringService, serve_scoring

__version__ = "0.1.0"
