"""Deep kernelized autoencoders: code inner products aligned to a prior kernel.

The modules build on one another: ``linalg`` (eigendecomposition, SPD
solves, PCA), ``gmm`` and ``pck`` (the probabilistic cluster kernel prior),
``kernel`` (alignment and reference kernels), ``autoencoder`` (the tied
weight network and its training), ``kpca`` (kernel PCA, Nystrom, pre-images)
and ``evaluation`` (classifiers, noise, k-means, walks). ``experiments``
composes them and ``cli`` exposes the ``dkae`` command.
"""

__version__ = "0.1.0"
