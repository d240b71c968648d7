#!/usr/bin/env python3
"""Independent XTEA oracle, written straight from the Needham-Wheeler pseudocode.

Used to freeze the expected values asserted by the Rust XTEA tests. Words are
packed big-endian: an 8-byte block is two u32 (v0, v1), a 16-byte key is four
u32 (k0..k3).

Usage:
    python3 xtea_oracle.py                 # print the frozen reference vectors
    python3 xtea_oracle.py KEYHEX BLOCKHEX # encrypt one block (32 rounds)
"""

import sys

DELTA = 0x9E3779B9
MASK = 0xFFFFFFFF


def encipher(key_words, v0, v1, rounds=32):
    s = 0
    for _ in range(rounds):
        v0 = (v0 + ((((v1 << 4) ^ (v1 >> 5)) + v1) ^ (s + key_words[s & 3]))) & MASK
        s = (s + DELTA) & MASK
        v1 = (v1 + ((((v0 << 4) ^ (v0 >> 5)) + v0) ^ (s + key_words[(s >> 11) & 3]))) & MASK
    return v0, v1


def decipher(key_words, v0, v1, rounds=32):
    s = (DELTA * rounds) & MASK
    for _ in range(rounds):
        v1 = (v1 - ((((v0 << 4) ^ (v0 >> 5)) + v0) ^ (s + key_words[(s >> 11) & 3]))) & MASK
        s = (s - DELTA) & MASK
        v0 = (v0 - ((((v1 << 4) ^ (v1 >> 5)) + v1) ^ (s + key_words[s & 3]))) & MASK
    return v0, v1


def encrypt_block(key: bytes, block: bytes, rounds=32) -> bytes:
    assert len(key) == 16 and len(block) == 8
    kw = [int.from_bytes(key[i : i + 4], "big") for i in range(0, 16, 4)]
    v0 = int.from_bytes(block[0:4], "big")
    v1 = int.from_bytes(block[4:8], "big")
    v0, v1 = encipher(kw, v0, v1, rounds)
    return v0.to_bytes(4, "big") + v1.to_bytes(4, "big")


def decrypt_block(key: bytes, block: bytes, rounds=32) -> bytes:
    assert len(key) == 16 and len(block) == 8
    kw = [int.from_bytes(key[i : i + 4], "big") for i in range(0, 16, 4)]
    v0 = int.from_bytes(block[0:4], "big")
    v1 = int.from_bytes(block[4:8], "big")
    v0, v1 = decipher(kw, v0, v1, rounds)
    return v0.to_bytes(4, "big") + v1.to_bytes(4, "big")


def main():
    if len(sys.argv) == 3:
        key = bytes.fromhex(sys.argv[1])
        block = bytes.fromhex(sys.argv[2])
        print(encrypt_block(key, block).hex())
        return

    vectors = [
        (bytes(16), bytes(8)),
        (bytes.fromhex("000102030405060708090a0b0c0d0e0f"), b"ABCDEFGH"),
        (bytes.fromhex("2b7e151628aed2a6abf7158809cf4f3c"), bytes.fromhex("0123456789abcdef")),
    ]
    for key, block in vectors:
        ct = encrypt_block(key, block)
        back = decrypt_block(key, ct)
        assert back == block, "decipher must invert encipher"
        print(f"key={key.hex()} pt={block.hex()} ct={ct.hex()}")


if __name__ == "__main__":
    main()
