"""
Constants for the Blockout library.
Binary format identifiers, layer tags, variant names and run-directory file names.
"""

# Checkpoint format
CHECKPOINT_MAGIC = b"BLKO"
CHECKPOINT_VERSION = 1

LAYER_TAG_DENSE = 1
LAYER_TAG_RELU = 2
LAYER_TAG_BLOCKOUT = 3
LAYER_TAG_SOFTMAX_LOSS = 4
LAYER_TAG_STANDARDIZE = 5

# Dataset format
DATASET_MAGIC = b"BODS"
DATASET_VERSION = 1

# Cluster logits are clamped to this range after every update
LOGIT_CLAMP = 8.0

# Training variants
VARIANT_SOFT_LEARNED = "soft-learned"
VARIANT_HARD_FIXED = "hard-fixed"
VARIANT_HARD_LEARNED = "hard-learned"
VARIANT_DENSE = "dense"
VARIANTS = (VARIANT_SOFT_LEARNED, VARIANT_HARD_FIXED, VARIANT_HARD_LEARNED)

# Variants run by the comparison experiment; dense is the unregularized baseline
COMPARE_VARIANTS = (VARIANT_DENSE, *VARIANTS)

# Layer kinds in a run configuration
LAYER_KIND_DENSE = "dense"
LAYER_KIND_BLOCKOUT = "blockout"

# Run directory artifacts
RESOLVED_CONFIG_FILE = "resolved_config.json"
TRAINING_LOG_FILE = "training_log.json"
RUN_MANIFEST_FILE = "run_manifest.json"
CHECKPOINT_SUFFIX = ".blko"

# Analyses
ANALYSIS_HIST = "hist"
ANALYSIS_PCA = "pca"
ANALYSIS_CLUSTERS = "clusters"
ANALYSIS_CURVE = "curve"
ANALYSIS_COMPARE = "compare"
ANALYSES = (ANALYSIS_HIST, ANALYSIS_PCA, ANALYSIS_CLUSTERS, ANALYSIS_CURVE)
ALL_LAYERS = "all"

# Probabilities outside this band count as diverged
DIVERGENCE_BAND = (0.25, 0.75)
