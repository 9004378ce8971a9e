"""Heat kernels for mixed-type Kimura operators on 2-D domains with corners."""

__version__ = "0.1.0"
