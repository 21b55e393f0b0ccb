"""Topic-level Bayesian surprise and serendipity for reading histories."""

from .gaussian import GaussianBelief, clip_eigenvalues, floor_and_symmetrize, kl_divergence
from .history import Corpus, UserHistory, center_rating, load_corpus
from .models import ModelConfig, StepOutcome, UserRun, init_state, run_history, run_user, run_users, update
from .neighbors import SnapshotIndex, build_index, find_serendipity, preference_distance, query_top_n
from .evaluation import (
    ConfusionCounts,
    Metrics,
    eval_serendipity,
    eval_surprise_detection,
    metrics_from_counts,
    random_baseline_expected,
    tune_leave_one_out,
)
from .synth import SynthConfig, generate_population

__version__ = "0.1.0"
