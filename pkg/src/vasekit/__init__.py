"""vasekit: verifiable caption rewards, group advantages, curation replay and evaluation
for Greek-vase vision-language pipelines."""

__version__ = "0.1.0"

from .dataset import DatasetManifest, QAPair, QuestionType, VaseEntry, load_manifest, save_manifest, split_dataset, validate_manifest
from .dimensions import Dimension, DimensionSlots, Lexicon, SlotExtractor, extract_slots, target_slots_from_qa
from .filtering import (
    BestViewSelector,
    FragmentFilter,
    QualityGate,
    ScoreRecord,
    fragment_filter,
    pipeline_stats,
    quality_gate,
    run_pipeline,
    select_best_view,
)
from .metrics import EvalReport, evaluate_run, recall_at_k, rouge_l
from .reward import (
    CaptionRewardScorer,
    GroupAdvantageNormalizer,
    RewardConfig,
    compute_penalty,
    compute_reward,
    dimensional_reward,
    group_advantages,
)
from .similarity import HashedBowProvider, HashedBowVectorizer, cosine, embed_hashed_bow, sequence_match_ratio

__all__ = [name for name in dir() if not name.startswith("_")]
