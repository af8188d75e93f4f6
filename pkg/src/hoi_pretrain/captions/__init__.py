from .bank import NegativeBank, build_negative_bank, negatives_for
from .parser import HOITriplet, ShallowCaptionParser, normalize_prompt, parse_caption, template_prompt
from .text import HashingTextEncoder, TextEncoder, TextEncodingError, embed_texts

__all__ = [
    "HOITriplet",
    "HashingTextEncoder",
    "NegativeBank",
    "ShallowCaptionParser",
    "TextEncoder",
    "TextEncodingError",
    "build_negative_bank",
    "embed_texts",
    "negatives_for",
    "normalize_prompt",
    "parse_caption",
    "template_prompt",
]
