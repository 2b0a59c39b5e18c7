"""Uncertainty-guided part-whole alignment on the Lorentz model of
hyperbolic space: geometry, losses, a tape-based gradient engine, a
synthetic part-whole corpus, a deterministic trainer, and an evaluation
suite, behind a single CLI."""

__version__ = "0.1.0"
