"""xferbench: sequential fine-tuning vs hierarchical feature-pipeline MTL on
figurative-language NLI with textual explanations."""

__version__ = "0.1.0"
