"""Re-execution harness for R replication packages.

Pipeline stages: ingest packages from a Dataverse-compatible repository (or
local directories), compute static code-quality metrics, apply conservative
automatic code cleaning, execute every R file under a matrix of interpreter
versions with wall-clock budgets, and fold the per-version outcomes into
combined verdicts and grouped reports.
"""

__version__ = "0.1.0"
