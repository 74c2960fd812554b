"""Two-layer ReLU networks and their random-feature counterparts under gradient descent.

Modules:

* :mod:`lazylab.datagen`: sphere inputs and target families
* :mod:`lazylab.kernels`: limiting kernels, kernel matrices, smallest eigenvalues
* :mod:`lazylab.models`: network forward pass, risks and gradients
* :mod:`lazylab.dynamics`: explicit-Euler gradient flows and trajectory logs
* :mod:`lazylab.theory`: executable bounds and checks against trajectories
* :mod:`lazylab.experiments`: presets and artifact emission (also behind the ``lazylab`` command)

All randomness is drawn from numpy's PCG64 generator seeded through
``SeedSequence``; integer tuples name independent substreams.
"""
from .datagen import (BarronDensity, Dataset, OneNeuron, RandomLabels, make_dataset,
                      make_labels, sample_sphere)
from .dynamics import (RunConfig, TrainingDiverged, TrajectoryLog, coupled_run, train_nn,
                       train_regularized, train_rf)
from .kernels import (KernelPair, SpectralSummary, kernel_a, kernel_b, kernel_matrices,
                      min_eigenvalue)
from .models import InitConfig, NetParams, empirical_risk, forward, gradient, init_params, path_norm
from .theory import GramPair, TheoryLedger, gram_matrices

__version__ = "0.1.0"

__all__ = [
    "BarronDensity", "Dataset", "OneNeuron", "RandomLabels", "make_dataset", "make_labels",
    "sample_sphere", "RunConfig", "TrainingDiverged", "TrajectoryLog", "coupled_run", "train_nn",
    "train_regularized", "train_rf", "KernelPair", "SpectralSummary", "kernel_a", "kernel_b",
    "kernel_matrices", "min_eigenvalue", "InitConfig", "NetParams", "empirical_risk", "forward",
    "gradient", "init_params", "path_norm", "GramPair", "TheoryLedger", "gram_matrices",
]
