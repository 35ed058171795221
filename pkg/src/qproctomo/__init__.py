"""Bayesian quantum process tomography from photon-counting data.

Reconstructs trace-preserving channels from prepared/measured state count
grids with preconditioned Crank-Nicolson MCMC over a free Kraus-operator
parametrization, and computes channel diagnostics: unitarity, channel
capacity, process fidelity, and mixing probability against canonical noise
models.
"""

__version__ = "0.1.0"

from .errors import (BadSpec, DimensionMismatch, EmptyData, InvalidCounts,
                     NearSingular, NotUnitary, TomographyError,
                     UnsupportedDimension, WindowEmpty)
from .metrics import (CapacityOptConfig, CapacityResult, ModelFitResult,
                      bloch_vector, channel_capacity, coherent_information,
                      entropy_exchange, inunitarity_curve,
                      max_fidelity_over_local_unitaries,
                      mixing_probability_from_counts, process_fidelity,
                      relative_process_fidelity, unitarity)
from .models import (bit_flip, compose, dephasing, depolarizing,
                     pad_operators, parse_model_spec, unitary_channel)
from .operators import (KrausSet, LiouvilleMatrix, apply_channel,
                        hermitian_inverse_sqrt, kraus_from_params, purity,
                        to_choi, to_liouville, von_neumann_entropy)
from .qst import (StateParams, StatePosterior, qst_likelihood, run_qst,
                  state_from_params)
from .sampler import (ChainConfig, ChannelParams, ConvergenceResult,
                      PosteriorSamples, convergence_doubling, pcn_step,
                      posterior_summary, run_chain, sample_prior)
from .tomography import (FluxParam, MappingMatrix, NoiseDataset, ScanDataset,
                         StateSet, TomographyDataset, default_state_set,
                         expected_counts, log_likelihood, mapping_matrix,
                         outcome_probabilities, simulate_counts,
                         simulate_noise_counts)

__all__ = [name for name in dir() if not name.startswith("_")]
