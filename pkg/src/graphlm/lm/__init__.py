"""Desk-scale language model: vocabulary, transformer, LoRA, decoding."""

from .generate import generate, parse_label, substring_matches
from .lora import (LoraAdapter, adapter_param_dict, attach_lora,
                   loraplus_lr_scale, merge_lora, trainable_fraction)
from .model import LmConfig, embed_with_injection, init_lm_params, lm_backward, lm_forward
from .vocab import Vocabulary, build_vocab, detokenize, dummy_token, pretokenize, tokenize

__all__ = [
    "LmConfig", "LoraAdapter", "Vocabulary",
    "adapter_param_dict", "attach_lora", "build_vocab", "detokenize",
    "dummy_token", "embed_with_injection", "generate", "init_lm_params",
    "lm_backward", "lm_forward", "loraplus_lr_scale", "merge_lora",
    "parse_label", "pretokenize", "substring_matches", "tokenize",
    "trainable_fraction",
]
