"""Synthetic face datasets from a statistical 3D morphable model.

Modules: ``model`` (PCA face model, MFM1 files), ``scene`` (pose, camera,
SH lighting), ``render`` (rasterizer, compositing, landmarks), ``datagen``
(dataset specs, generation, manifests, augmentation), ``evaluation``
(verification and landmark metrics, bias reports) and ``cli``.
"""

__version__ = "0.1.0"
