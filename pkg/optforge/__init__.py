# Copyright the optforge contributors
# SPDX-License-Identifier: MIT OR Apache-2.0

"""Option discovery from flat expert trajectories in gridworld MDPs."""

__version__ = "0.1.0"

# Version of the on-disk artifact documents (params, Q-tables, reports).
# Loading a document with a different version raises VersionMismatchError.
ARTIFACT_FORMAT_VERSION = 1
