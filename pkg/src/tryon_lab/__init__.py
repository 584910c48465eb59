"""Desk-scale parser-free virtual try-on lab.

A teacher network learns cloth transfer from parser-masked person images;
a student is distilled from it to consume raw person images directly.
Everything runs on a procedural synthetic dataset whose segmentation, pose
and ground-truth warps are exact by construction.
"""

__version__ = "0.1.0"
