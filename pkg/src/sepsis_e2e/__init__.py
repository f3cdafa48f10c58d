"""End-to-end sepsis risk prediction from hourly ICU time series.

Subpackages and modules:
    ingest     -- PSV parsing, dataset catalog, patient-level splits
    pipeline   -- forward fill, completeness-gated segmentation, normalization
    nn         -- dense-network engine (compiled kernels + Python fallback)
    model      -- architecture assembly, training, grid search, inference
    evalstats  -- confusion metrics, Friedman / Wilcoxon comparison suite
    cli        -- command-line orchestration
"""

__version__ = "0.1.0"
