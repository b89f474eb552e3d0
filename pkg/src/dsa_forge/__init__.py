"""Functional simulator and 3x3-only compiler for a ring-of-engines CNN accelerator."""

from ._kernels import BACKEND as KERNEL_BACKEND
from .dsfp import FormatParams
from .graph import ModelGraph, load_model, save_model, validate

__version__ = "0.1.0"

__all__ = ["FormatParams", "KERNEL_BACKEND", "ModelGraph", "load_model", "save_model", "validate"]
