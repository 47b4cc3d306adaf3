"""Gender inference for romanized (pinyin) Chinese given names."""

__version__ = "0.1.0"
