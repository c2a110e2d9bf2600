"""qxfer: transfer knowledge between diffusion-MRI acquisitions.

Densely sampled q-space signals are refit with an analytic basis and
re-evaluated on another acquisition's sampling scheme, producing the
training inputs for patch-based microstructure estimators; the package
also ships the matching phantom generator, estimator, baselines and
evaluation statistics, all reachable through the ``qxfer`` command.
"""

__version__ = "0.1.0"
