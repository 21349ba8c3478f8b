"""Interpretable differential diagnosis with bidirectional chat-model inference.

Forward inference proposes diagnoses with evidence, backward inference recalls
the findings each diagnosis should produce, an examination step prunes and
supplements the evidence, and diagnoses with too little support are fed back
for another attempt. Baselines and the full scoring suite live alongside.
"""

from .backend import (
    ChatExchange,
    ChatRequest,
    HashingEmbedder,
    OpenAICompatBackend,
    ResponseCache,
    ScriptedBackend,
    ScriptedEmbedder,
    Transcript,
    make_scripted_backend,
)
from .baselines import BaselineConfig, Method, consistency_vote, run_baseline
from .corpus import (
    DifferentialEntry,
    NoteRecord,
    RareDiseaseList,
    compute_stats,
    filter_rare,
    load_corpus,
    load_rare_list,
)
from .engine import PipelineConfig, Variant, build_feedback, examine, run_pipeline
from .protocol import DdxEntry, DdxPrediction, PromptKind, Status, parse_ddx_output, render_prediction, render_prompt

__version__ = "0.1.0"
