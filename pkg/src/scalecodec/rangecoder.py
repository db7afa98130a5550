"""Adaptive binary range coder shared by the base and enhancement layers.

A carry-propagating 32-bit coder with 12-bit probabilities (the classic
cache/cache-size scheme). Every adaptive context is a single integer holding
P(bit = 0) in units of 1/4096; after each coded bin it moves 1/16 of the way
towards the observed value. Bypass bins halve the range.

The first byte such a coder emits is always zero, so it is dropped on write
and implied on read. With that, the decoder consumes exactly the bytes the
encoder produced: ``Decoder.finish()`` checks this.
"""

from __future__ import annotations

PROB_BITS = 12
PROB_ONE = 1 << PROB_BITS
PROB_INIT = PROB_ONE // 2
ADAPT_SHIFT = 4
TOP = 1 << 24
MASK32 = 0xFFFFFFFF

# exp-Golomb prefixes longer than this can only come from a corrupt stream
MAX_EG_PREFIX = 24


class CorruptStreamError(ValueError):
    """Decoder ran off the end of the payload or hit an impossible code."""


def eg0_bins(value: int) -> int:
    """Number of bins in the order-0 exp-Golomb code of ``value`` >= 0."""
    return 2 * ((value + 1).bit_length() - 1) + 1


def se_to_ue(value: int) -> int:
    return 2 * value - 1 if value > 0 else -2 * value


def ue_to_se(code: int) -> int:
    return (code + 1) >> 1 if code & 1 else -(code >> 1)


def se_bins(value: int) -> int:
    return eg0_bins(se_to_ue(value))


class Encoder:
    def __init__(self, n_contexts: int):
        self.probs = [PROB_INIT] * n_contexts
        self.low = 0
        self.range = MASK32
        self.cache = 0
        self.cache_size = 1
        self.out = bytearray()
        self._first = True
        self.n_bins = 0

    def _shift_low(self):
        low = self.low
        if low < 0xFF000000 or low > MASK32:
            carry = low >> 32
            temp = self.cache
            while True:
                if self._first:
                    self._first = False
                else:
                    self.out.append((temp + carry) & 0xFF)
                temp = 0xFF
                self.cache_size -= 1
                if not self.cache_size:
                    break
            self.cache = (low >> 24) & 0xFF
        self.cache_size += 1
        self.low = (low & 0x00FFFFFF) << 8

    def encode_bit(self, ctx: int, bit: int) -> None:
        probs = self.probs
        p = probs[ctx]
        bound = (self.range >> PROB_BITS) * p
        if bit:
            self.low += bound
            self.range -= bound
            probs[ctx] = p - (p >> ADAPT_SHIFT)
        else:
            self.range = bound
            probs[ctx] = p + ((PROB_ONE - p) >> ADAPT_SHIFT)
        self.n_bins += 1
        while self.range < TOP:
            self.range <<= 8
            self._shift_low()

    def encode_bypass(self, value: int, n_bits: int) -> None:
        """Write the ``n_bits`` low bits of ``value``, MSB first, at p = 1/2."""
        for i in range(n_bits - 1, -1, -1):
            self.range >>= 1
            if (value >> i) & 1:
                self.low += self.range
            self.n_bins += 1
            while self.range < TOP:
                self.range <<= 8
                self._shift_low()

    def encode_eg0(self, value: int, ctx_base: int, n_ctx: int) -> None:
        """Order-0 exp-Golomb: ``n`` one-bins and a zero-bin (context coded by
        bin index, capped at ``n_ctx - 1``), then ``n`` bypass suffix bits."""
        v1 = value + 1
        n = v1.bit_length() - 1
        last = n_ctx - 1
        for i in range(n):
            self.encode_bit(ctx_base + (i if i < last else last), 1)
        self.encode_bit(ctx_base + (n if n < last else last), 0)
        if n:
            self.encode_bypass(v1 - (1 << n), n)

    def encode_se(self, value: int, ctx_base: int, n_ctx: int) -> None:
        self.encode_eg0(se_to_ue(value), ctx_base, n_ctx)

    def finish(self) -> bytes:
        for _ in range(5):
            self._shift_low()
        return bytes(self.out)


class Decoder:
    def __init__(self, data: bytes, n_contexts: int):
        self.probs = [PROB_INIT] * n_contexts
        self.data = data
        self.pos = 0
        self.range = MASK32
        self.code = 0
        for _ in range(4):
            self.code = (self.code << 8) | self._next_byte()

    def _next_byte(self) -> int:
        if self.pos >= len(self.data):
            raise CorruptStreamError("read past end of payload")
        b = self.data[self.pos]
        self.pos += 1
        return b

    def decode_bit(self, ctx: int) -> int:
        probs = self.probs
        p = probs[ctx]
        bound = (self.range >> PROB_BITS) * p
        if self.code < bound:
            self.range = bound
            probs[ctx] = p + ((PROB_ONE - p) >> ADAPT_SHIFT)
            bit = 0
        else:
            self.code -= bound
            self.range -= bound
            probs[ctx] = p - (p >> ADAPT_SHIFT)
            bit = 1
        while self.range < TOP:
            self.range <<= 8
            self.code = ((self.code << 8) | self._next_byte()) & MASK32
        return bit

    def decode_bypass(self, n_bits: int) -> int:
        value = 0
        for _ in range(n_bits):
            self.range >>= 1
            if self.code >= self.range:
                self.code -= self.range
                value = (value << 1) | 1
            else:
                value <<= 1
            while self.range < TOP:
                self.range <<= 8
                self.code = ((self.code << 8) | self._next_byte()) & MASK32
        return value

    def decode_eg0(self, ctx_base: int, n_ctx: int) -> int:
        last = n_ctx - 1
        n = 0
        while self.decode_bit(ctx_base + (n if n < last else last)):
            n += 1
            if n > MAX_EG_PREFIX:
                raise CorruptStreamError("exp-Golomb prefix too long")
        if not n:
            return 0
        return (1 << n) + self.decode_bypass(n) - 1

    def decode_se(self, ctx_base: int, n_ctx: int) -> int:
        return ue_to_se(self.decode_eg0(ctx_base, n_ctx))

    def finish(self) -> None:
        if self.pos != len(self.data):
            raise CorruptStreamError(
                f"decoder stopped at byte {self.pos} of {len(self.data)}"
            )
