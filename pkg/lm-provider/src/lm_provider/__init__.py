"""HTTP text provider backed by small word-level language models.

Implements the generate wire protocol consumed by the dmn traffic
simulator: POST /v1/generate with kind "subject" or "body".
"""

__version__ = "0.1.0"
