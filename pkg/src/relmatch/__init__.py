"""Two-stage zero-shot relation matching: dual-tower recall with
virtual-entity pooling, then cross-encoder classification of the recalled
candidates.  Built on a small numpy reverse-mode autodiff core."""

__version__ = "0.1.0"

from .config import RunConfig, desk_profile, paper_profile
from .encoder import EncoderConfig, EncodingCounter
from .recall import ContrastiveConfig, DescriptionIndex
from .rerank import PipelineModel, RerankConfig
from .synth import SyntheticCorpusSpec
from .textpipe import Instance, RelationDescription, Vocabulary

__all__ = [
    "RunConfig", "desk_profile", "paper_profile",
    "EncoderConfig", "EncodingCounter",
    "ContrastiveConfig", "DescriptionIndex",
    "PipelineModel", "RerankConfig",
    "SyntheticCorpusSpec",
    "Instance", "RelationDescription", "Vocabulary",
]
