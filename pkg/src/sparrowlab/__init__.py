"""Covert-channel lab for LTE/5G contention resolution.

Models the Msg3/Msg4 echo exploited by a covert transmitter/receiver pair,
the obfuscation schemes that blunt it (K-errors, K-erasures, ELISHA) and the
collision/disruption trade-off they impose.
"""

from sparrowlab.bitcore import BitString, Mask, erase_bits, hamming_distance, random_weight_mask, xor_bits
from sparrowlab.schemes import (
    Decision,
    DigestBackend,
    ObfuscatedBroadcast,
    SchemeConfig,
    Variant,
    decide,
    digest,
    obfuscate,
)

__version__ = "0.1.0"

__all__ = [
    "BitString",
    "Mask",
    "xor_bits",
    "erase_bits",
    "hamming_distance",
    "random_weight_mask",
    "Variant",
    "DigestBackend",
    "SchemeConfig",
    "ObfuscatedBroadcast",
    "Decision",
    "digest",
    "obfuscate",
    "decide",
    "__version__",
]
