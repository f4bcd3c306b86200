"""Conditional logit models of relational event formation.

Fit multinomial choice models to directed event streams with negative
sampling of the choice sets, de-mix disjoint latent classes, and generate
synthetic streams with known parameters.
"""

from .clogit import (ChoiceData, ChoiceRecord, FitResult, IdentifiabilityError,
                     choice_probabilities, fit, gradient, hessian, log_likelihood)
from .demix import (DemixedFit, Mode, ModePartition, PartitionError, assign_mode,
                    build_demixed_data, demixed_log_likelihood, fit_demixed)
from .event_graph import (Event, EventLogError, GraphState, apply_event, fof_count,
                          fofs_of, friends_of, read_events_csv, replay, write_events_csv)
from .features import (FeatureSpec, FeatureTerm, build_spec_degree_onehot,
                       build_spec_synthetic, build_spec_venmo, extract, extract_many,
                       resolve_spec)
from .harness import ExperimentPlan, run_plan, runtime_profile, summarize
from .reduce import read_reduced_csv, reduce_events, write_reduced_csv
from .sampling import (Full, Importance, Stratified, Stratum, Uniform, sample_importance,
                       sample_stratified, sample_uniform)
from .synth import GeneratorConfig, generate, generate_single_mode, generate_two_mode, seed_graph

__version__ = "0.1.0"
