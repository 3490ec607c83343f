"""Transaction/text matching with cross- and intra-modal attention, plus a sparse-mask explainer."""

__version__ = "0.1.0"
