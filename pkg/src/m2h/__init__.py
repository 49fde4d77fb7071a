"""Multi-task dense prediction with windowed cross-task attention, built on a small numpy autodiff."""

__version__ = "0.1.0"
