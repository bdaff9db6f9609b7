"""seedforge: synthesize instruction-tuning datasets for a target language
from nothing but provider access, then evaluate models on the result.

Submodules map to pipeline stages: topics, contexts, instructions, dedup,
ablations, and the eval harness (tokenizers, metrics, stats, evalreport),
all fronted by gateway providers and driven by config/pipeline/cli.
"""

__version__ = "0.1.0"
