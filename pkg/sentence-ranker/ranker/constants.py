"""
Shared constants for the sentence ranker.

This module provides a single source of truth for values that are used
across multiple modules (reserved token ids, numeric tolerances, exit codes).
"""

# Reserved vocabulary ids
PAD_ID = 0
UNK_ID = 1
PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"

# Synthetic corpora keep paragraphs within this sentence-count range
MIN_SENTENCES = 2
MAX_SENTENCES = 16

LAYER_NORM_EPS = 1e-5
EMBEDDING_INIT_STD = 0.02
FEED_FORWARD_RATIO = 4
DECODER_LAYERS = 5
FULL_SCALE_DECODER_HIDDEN = 200

DEFAULT_MARGIN = 1.0
DEFAULT_GRAD_CLIP_NORM = 5.0
DEFAULT_FD_STEP = 1e-5
GRADCHECK_THRESHOLD = 1e-4
# derivatives smaller than this in magnitude are below finite-difference resolution
GRADCHECK_ABS_FLOOR = 1e-6

CHECKPOINT_FORMAT = "ranker-checkpoint"
CHECKPOINT_VERSION = 1
LAST_CHECKPOINT_SUFFIX = ".last"

# Process exit codes
EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_CONFIG_ERROR = 2
EXIT_IO_ERROR = 3
EXIT_VALIDATION_FAILURE = 4
EXIT_INPUT_ERROR = 5
