"""Hyperspectral polarimetric BRDF toolkit.

Stokes/Mueller algebra, an analytic polarimetric BRDF oracle, a virtual
dual-rotating-retarder ellipsometer, Mueller reconstruction, tabulation in
half/difference angles, Lu-Chipman and PCA analysis, a direct-lighting
renderer and an implicit neural representation.
"""

__version__ = "0.1.0"
