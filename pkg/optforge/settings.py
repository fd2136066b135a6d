# Copyright the optforge contributors
# SPDX-License-Identifier: MIT OR Apache-2.0

"""
A central location for optforge defaults that are not part of any single
experiment config: logging destinations, the environment-variable prefix for
config overrides and numeric guards shared by several modules.
"""

# Users have the option to enable/disable logging to a file via
# 'ENABLE_FILE_LOGGING', or optforge.log.enable_file_logging() and
# optforge.log.disable_file_logging().
ENABLE_FILE_LOGGING = False

# If file logging is enabled via 'ENABLE_FILE_LOGGING', log messages will
# be saved to 'LOG_FILENAME'
LOG_FILENAME = "optforge.log"

# Environment variables starting with this prefix override config file values,
# e.g. OPTFORGE_DDO_ALPHA=0.1 overrides 'ddo.alpha'.
ENV_PREFIX = "OPTFORGE_"

# Latent-sequence enumeration in the brute-force posterior oracle is refused
# above this many option sequences.
MAX_BRUTE_FORCE_SEQUENCES = 10**6

# Tolerance for probability distributions summing to one.
DISTRIBUTION_TOLERANCE = 1e-12

# Default cap on the flat steps of a single option execution.
DEFAULT_OPTION_MAX_STEPS = 20

# Laplace smoothing added to empirical action counts before normalizing.
ACTION_COUNT_SMOOTHING = 1e-3

# The hashing algorithm used for artifact digests in stage manifests.
DEFAULT_HASH_ALGORITHM = "sha256"

# Full-batch DDO training halves a step that would lower the objective, at
# most this many times, and skips the step if every halving still lowers it.
MAX_STEP_HALVINGS = 20
