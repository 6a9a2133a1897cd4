"""fpulab: a numerical laboratory for FPU lattice solitary waves and
KdV N-solitons, with Bäcklund-transformation machinery and weighted-norm
stability diagnostics."""

__version__ = "0.1.0"
