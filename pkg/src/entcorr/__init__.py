"""Phonetic named-entity correction for Mandarin ASR transcripts.

The pipeline: romanize text (phonetics), rank repository entities against
suspicious spans (repository), find those spans with a dictionary tagger or
train a recognizer for them (ner), ask a language model which candidate the
speaker meant (backend, correction), build preference data for teaching the
model when to think (selftrain), and score the result (metrics).
"""

__version__ = "0.1.0"

from .alignment import AlignmentOp, OpKind, align, alignment_cost
from .backend import (
    Backend,
    BackendReply,
    BackendRequest,
    HttpBackend,
    HttpBackendConfig,
    Mode,
    SamplingParams,
    ScriptedBackend,
    ScriptedRule,
)
from .config import PipelineConfig, default_config, load_config
from .correction import (
    KEEP_ORIGINAL,
    CorrectionRequest,
    CorrectionResult,
    ModelResponse,
    PromptTemplates,
    ResponseGrammar,
    apply_correction,
    apply_corrections,
    correct_span,
    parse_response,
    render_prompt,
    run_stats,
)
from .dataio import DatasetRecord, load_dataset
from .errors import (
    BackendError,
    BackendFailureError,
    BackendTimeoutError,
    ConfigError,
    DatasetError,
    EntcorrError,
    MalformedResponseError,
    NonFiniteInputError,
    ProtocolError,
    UnknownCharacterError,
)
from .metrics import (
    MetricReport,
    RegionCounts,
    cer,
    measure,
    merge_reports,
    ne_recall,
    ner_prf,
    region_cer,
)
from .ner import (
    EntitySpan,
    RlmExample,
    TaggedUtterance,
    align_tags_to_hypothesis,
    build_rlm_example,
    dictionary_tagger,
    extract_spans,
    repair_bio,
    tags_from_spans,
)
from .phonetics import (
    Granularity,
    PhoneticSequence,
    PinyinDictionary,
    PinyinSyllable,
    edit_distance,
    romanize,
    similarity,
    token_edit_distance,
)
from .repository import (
    Entity,
    EntityRepository,
    EntityType,
    RankedCandidates,
    RepositoryConfig,
    build_repository,
    candidate_probability,
    load_entity_file,
    retrieve_top_k,
)
from .selftrain import (
    DifficultyClass,
    PreferencePair,
    ProblemRecord,
    build_preference_pairs,
    check_answer,
    classify_problems,
    dpo_loss,
    dpo_loss_gradient,
    reward_margin,
)

__all__ = [name for name in dir() if not name.startswith("_")]
