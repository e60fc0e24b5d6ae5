"""Physics-informed networks in modal space for time-dependent SPDEs."""
import os

# the legacy CPU runtime runs these small float64 graphs noticeably faster
os.environ.setdefault("XLA_FLAGS", "--xla_cpu_use_thunk_runtime=false")
if "MODALPINN_THREADS" in os.environ:
    _n = os.environ["MODALPINN_THREADS"]
    os.environ.setdefault("OMP_NUM_THREADS", _n)
    os.environ["XLA_FLAGS"] += f" --xla_cpu_multi_thread_eigen={'false' if _n == '1' else 'true'}"

import jax  # noqa: E402

jax.config.update("jax_enable_x64", True)

from .errors import (ConfigurationError, CrossingError, DataError, DegenerateModeError,  # noqa: E402
                     DegenerateReferenceError, DivergenceError, DomainError, ModalPinnError,
                     ShapeError, StateError)
from .modal import (KernelSpec, KlBasis, ModalSolution, covariance_Y, grf_sample,  # noqa: E402
                    initial_components_from_field, kl_decompose, load_modal, mean_field,
                    reconstruct, reconstruct_jet, save_modal, variance_field)
from .problems import (advection_problem, burgers_problem, diffusion_reaction_problem,  # noqa: E402
                       exact_modal_solution, sensor_ic_variant)
from .training import TrainConfig, infer_parameters, train, train_subdomains  # noqa: E402

__version__ = "0.1.0"
