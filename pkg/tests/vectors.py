"""Published AES-256-GCM known-answer vectors."""

from __future__ import annotations

H = bytes.fromhex
K15 = H("feffe9928665731c6d6a8f9467308308feffe9928665731c6d6a8f9467308308")
P15 = H("d9313225f88406e5a55909c5aff5269a86a7a9531534f7da2e4c303d8a318a72"
        "1c3c0c95956809532fcf0e2449a6b525b16aedf5aa0de657ba637b391aafd255")
C15 = H("522dc1f099567d07f47f37a32a84427d643a8cdcbfe5c0c97598a2bd2555d1aa"
        "8cb08e48590dbb3da7b08b1056828838c5f61e6393ba7a0abcc9f662898015ad")
A16 = H("feedfacedeadbeeffeedfacedeadbeefabaddad2")

# published AES-256-GCM known answers: (key, iv, plaintext, aad, ciphertext, tag)
VECTORS = {
    "gcm-tc13": (bytes(32), bytes(12), b"", b"", b"", H("530f8afbc74536b9a963b4f1c4cb738b")),
    "gcm-tc14": (bytes(32), bytes(12), bytes(16), b"", H("cea7403d4d606b6e074ec5d3baf39d18"),
                 H("d0d1c8a799996bf0265b98b5d48ab919")),
    "gcm-tc15": (K15, H("cafebabefacedbaddecaf888"), P15, b"", C15,
                 H("b094dac5d93471bdec1a502270e3cc6c")),
    "gcm-tc16": (K15, H("cafebabefacedbaddecaf888"), P15[:60], A16, C15[:60],
                 H("76fc6ece0f4e1768cddf8853bb2d551b")),
    "gcm-tc17": (K15, H("cafebabefacedbad"), P15[:60], A16,
                 H("c3762df1ca787d32ae47c13bf19844cbaf1ae14d0b976afac52ff7d79bba9de0"
                   "feb582d33934a4f0954cc2363bc73f7862ac430e64abe499f47c9b1f"),
                 H("3a337dbf46a792c45e454913fe2ea8f2")),
    "cavp-256-96-0": (H("b52c505a37d78eda5dd34f20c22540ea1b58963cf8e5bf8ffa85f9f2492505b4"),
                      H("516c33929df5a3284ff463d7"), b"", b"", b"",
                      H("bdc1ac884d332457a1d2664f168c76f0")),
}
