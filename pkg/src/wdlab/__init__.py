"""Numerical laboratory for decoupled Wiener functionals.

The package measures how a path functional reacts when parts of the
driving Brownian motion are rotated toward an independent copy: coupled
Monte Carlo distance estimators, Besov-type seminorms built from the
rotation-distance curve, Malliavin and Wiener-chaos cross checks, exact
BMO / reverse Hölder machinery on scenario trees, and a backward solver
whose stability under decoupling the estimators then verify.
"""

from .core_paths import (BrownianPair, GridMismatchError, ProfileError,
                         RngStream, RotationProfile, TimeGrid, cumulative,
                         delta_distance, require_same_grid, rotate,
                         sample_increments, sample_pair)
from .functionals import (BVIndicator, ConstantFunctional,
                          CounterexampleSeries, DiffusionTerminal,
                          LinearTerminal, NoMalliavinError, PolyIncrements,
                          ScaledFunctional, ShiftedFunctional,
                          SquareTerminal, SumFunctional, WienerFunctional,
                          decoupled_evaluate, evaluate, malliavin_path,
                          series_layout)
from .estimators import (Estimate, EstimationError, McConfig, McConfigError,
                         SandwichReport, cond_exp_residual, orlicz_exp_norm,
                         p_norm, p_norm_diff, p_norm_diff_profiles,
                         p_norm_rotation_gap, sandwich_check)
from .chaos import (BdgReport, ChaosExpansion, D12Report,
                    UnsupportedFunctionalError, bdg_chaos_check,
                    conditional_residual_exact, d12_norm, expand_library)
from .besov import (AdmissibilityReport, AnisotropicSup, BvEmbeddingReport,
                    DyadicSupFamily, IsotropicKernel,
                    NonIntegrableKernelError, PhiReport, ProfileFunctional,
                    SeminormError, StepFunctionalProcess, WeightedSup,
                    admissibility_check, anisotropic_seminorm, besov_norm,
                    bv_embedding_report, d_distance, dyadic_intervals,
                    estimate_seminorm, isotropic_seminorm, mehler_weight,
                    process_seminorm, sup_interval_seminorm, tabulate)
from .malliavin import (GrowthReport, MalliavinReport, counterexample_growth,
                        gaussian_p_norm, malliavin_seminorms, s2_norm)
from .bmo import (DomainError, FeffermanReport, KazamakiBound, StepProcess,
                  TreeError, WeakerBmoReport, bmo_s2eta_norm, bmo_slice_norm,
                  deterministic_rh_constant, fefferman_check, interp_slice_bound,
                  kazamaki_phi, kazamaki_psi, p0_threshold, phi_inverse,
                  rh_bound, sliceable_upper, weaker_bmo_construction)
from .bsde import (BsdePreset, BsdeSolution, GeneratorSpec,
                   GradientDiagnostics, MarkovModel, SolverConfig,
                   SolverError, StabilityReport, VariationReport, PRESETS,
                   get_preset, gradient_diagnostics, preset_names,
                   solve_markovian, stability_check, variation_check)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
