# Copyright 2026 The netquant Authors
# SPDX-License-Identifier: Apache-2.0
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     https://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Regenerates the dataset fixtures and prints the golden checksums.

The checksums come from this independent decoder (numpy), not from the
library: CRC-32 of the first image decoded as little-endian float32
values of byte / 255.
"""

import random
import struct
import zlib

import numpy as np


def checksum(pixels: bytes) -> int:
    img = np.frombuffer(pixels, dtype=np.uint8).astype(np.float32) / np.float32(255.0)
    return zlib.crc32(img.astype("<f4").tobytes())


def main() -> None:
    r = random.Random(20261014)
    labels = [3, 7, 0]
    recs = b"".join(bytes([l]) + bytes(r.randrange(256) for _ in range(3072)) for l in labels)
    with open("cifar_3.bin", "wb") as f:
        f.write(recs)
    print(f"cifar_3.bin first image crc32 {checksum(recs[1:3073]):#010x}")

    ims = bytes(r.randrange(256) for _ in range(24))
    with open("idx-images", "wb") as f:
        f.write(struct.pack(">IIII", 0x803, 2, 3, 4) + ims)
    with open("idx-labels", "wb") as f:
        f.write(struct.pack(">II", 0x801, 2) + bytes([9, 4]))
    print(f"idx-images first image crc32 {checksum(ims[:12]):#010x}")


if __name__ == "__main__":
    main()
