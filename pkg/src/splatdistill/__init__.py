"""Gaussian splatting distillation and refinement toolkit."""
