from .backends import (
    ClassificationRequest,
    HttpBackend,
    LabelKnowledge,
    MockBackend,
    MockKnowledge,
    VlmBackendConfig,
    VlmOutcome,
    classify_many,
    make_backend,
    mock_classify,
)
from .parse import ParseResult, parse_label
from .prompts import DEFAULT_VISION_ONLY, DEFAULT_VISUO_TACTILE, PromptTemplate, build_prompt

__all__ = [
    "ClassificationRequest",
    "HttpBackend",
    "LabelKnowledge",
    "MockBackend",
    "MockKnowledge",
    "VlmBackendConfig",
    "VlmOutcome",
    "classify_many",
    "make_backend",
    "mock_classify",
    "ParseResult",
    "parse_label",
    "PromptTemplate",
    "build_prompt",
    "DEFAULT_VISION_ONLY",
    "DEFAULT_VISUO_TACTILE",
]
