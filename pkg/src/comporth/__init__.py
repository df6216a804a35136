"""CompOrth: a benchmark for compositional generalisation in
beta-VAE reconstructions of rendered letter strings."""
from .corpus import FactorAssignment, FactorGrid, Word, enumerate_assignments, enumerate_words
from .errors import (
    CompOrthError, ConfigError, MetricError, NotTrainedError, NumericalError,
    RenderBoundsError, ShapeError, SplitError,
)
from .renderer import CANVAS, DEFAULT_GLYPHS, ImageStore, generate_dataset, render
from .splits import FAMILIES, SplitSpec, make_splits

__version__ = "0.1.0"
