"""Feature exporter: 2D CNN backbone activations over VOLRAW volumes,
serialized as FEATVOL files the segmentation engine can load."""

from .export import ExportConfig, export
from .formats import FormatError, read_volume, write_featvol
from .models import ModelError, resolve_model

__version__ = "0.1.0"
