"""finpop: finite-population mean estimation from non-random samples.

Tree-ensemble (BART/SBART) prediction estimators with optional estimated
inclusion propensity as a covariate, classical weighting baselines
(post-stratification, raking, regression-and-post-stratification), a
simulation lab, and posterior predictive diagnostics.
"""

__version__ = "0.1.0"

from .errors import (ConvergenceError, DegenerateCutsError, DomainError,
                     EmptyCellError, EstimationError, FinpopError,
                     LinkageError, ParseError, SchemaError)
from .frames import (CovariateSchema, InclusionVector, PopulationFrame,
                     SampleFrame, dump_population, dump_sample,
                     inclusion_vector, load_population, load_sample,
                     make_linked_sample, transform_outcome)
from .weighting import (Discretizer, Weights, discretize, post_stratify,
                        rake, rp_estimate, weighted_mean)
from .samplers import (FitResult, PropensityScores, SamplerConfig,
                       append_propensity, derive_seed, fit_bart,
                       fit_probit_bart, fit_sbart)
from .estimators import (EstimateSummary, PosteriorDraws, SubpopulationFilter,
                         estimate, posterior_draws, summarize)
from .simlab import (SCENARIOS, GeneratedPopulation, ReplicateMetrics,
                     ScenarioSpec, compute_metrics, draw_sample,
                     generate_population, run_study)
from .diagnostics import PpcResult, ppc, pvalue
