"""
crossmag: cross-magnification distillation of image encoders.

Subpackages:
    pyramid     synthetic slides, 20x/5x patch pyramids, paired augmentation
    models      toy vision transformers, freezing, weight files
    distill     projection heads, losses, schedule and the training loop
    mil         bags, ABMIL, frozen and end-to-end training
    evaluation  metrics, bootstrap, paired tests, linear probe, exports
    benchmark   speed tables and throughput timing
"""

try:
    from ._version import version as __version__
except ImportError:  # not installed from a source checkout
    __version__ = "0.1.0"
