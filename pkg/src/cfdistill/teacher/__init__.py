"""Teacher querying: prompts, parsing, voting, labeling, transports."""
from .client import (
    ChatCompletionClient,
    EndpointConfig,
    EndpointTeacher,
    MissingApiKeyError,
    TeacherRequestError,
    TokenBucket,
)
from .labeling import (
    LabeledScenario,
    TeacherResponse,
    judge_response,
    label_scenarios,
    load_labels,
    save_labels,
)
from .oracle import HALLUCINATION_VALUES, SyntheticOracle
from .prompts import PromptBundle, build_prompt, parse_acceleration
from .voting import BIN_WIDTH, NoValidVotesError, majority_vote, vote_bin

__all__ = [
    "BIN_WIDTH",
    "ChatCompletionClient",
    "EndpointConfig",
    "EndpointTeacher",
    "HALLUCINATION_VALUES",
    "LabeledScenario",
    "MissingApiKeyError",
    "NoValidVotesError",
    "PromptBundle",
    "SyntheticOracle",
    "TeacherRequestError",
    "TeacherResponse",
    "TokenBucket",
    "build_prompt",
    "judge_response",
    "label_scenarios",
    "load_labels",
    "majority_vote",
    "parse_acceleration",
    "save_labels",
    "vote_bin",
]
