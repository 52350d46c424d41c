"""3D spatial relations over oriented boxes, QA dataset synthesis and scoring."""

__version__ = "0.1.0"
