"""YOLO-Former: desk-scale attention detector built on a numpy autodiff engine."""

__version__ = "1.0.0"
