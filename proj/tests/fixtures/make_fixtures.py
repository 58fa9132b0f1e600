"""Regenerates the NPY/NPZ fixtures with numpy as the reference writer.

Run from this directory: python3 make_fixtures.py
"""
import io
import zipfile

import numpy as np

rng = np.random.default_rng(20240601)


def save_raw(name, arr):
    with open(name + ".raw", "wb") as f:
        f.write(np.ascontiguousarray(arr).tobytes())


# Arrays of every supported dtype, stored and deflated.
arrays = {
    "u8": rng.integers(0, 256, size=(3, 4), dtype=np.uint8),
    "i64": rng.integers(-(2**40), 2**40, size=(5,), dtype=np.int64),
    "f32": rng.standard_normal((2, 3)).astype(np.float32),
    "scalar": np.uint8(7),
}
np.savez("dtypes_stored.npz", **arrays)
np.savez_compressed("dtypes_deflated.npz", **arrays)
for k, v in arrays.items():
    save_raw("payload_" + k, np.asarray(v))

np.save("scalar_u8.npy", np.uint8(7))
np.save("matrix_u8.npy", arrays["u8"])

# MedMNIST-style archives: 10 samples per split, 3 classes.
def medmnist_like(path, rgb, label_dtype):
    parts = {}
    for split in ("train", "val", "test"):
        shape = (10, 28, 28, 3) if rgb else (10, 28, 28)
        images = rng.integers(0, 256, size=shape, dtype=np.uint8)
        images.reshape(10, -1)[:, 0] = 255
        labels = (np.arange(10) % 3).astype(label_dtype).reshape(10, 1)
        parts[split + "_images"] = images
        parts[split + "_labels"] = labels
    np.savez_compressed(path, **parts)


medmnist_like("medmnist_gray.npz", False, np.uint8)
medmnist_like("medmnist_rgb.npz", True, np.int64)

# Malformed inputs.
good = open("matrix_u8.npy", "rb").read()
with open("bad_magic.npy", "wb") as f:
    f.write(b"\x93NUMPX" + good[6:])
with open("truncated.npy", "wb") as f:
    f.write(good[:-5])
np.save("fortran.npy", np.asfortranarray(rng.integers(0, 9, size=(3, 4), dtype=np.uint8)))
np.save("float64.npy", np.zeros(3, dtype=np.float64))

# CRC error: flip one payload byte of a stored member.
buf = io.BytesIO()
with zipfile.ZipFile(buf, "w", zipfile.ZIP_STORED) as z:
    z.writestr("good.npy", good)
    z.writestr("bad.npy", good)
data = bytearray(buf.getvalue())
second = data.find(b"\x93NUMPY", data.find(b"\x93NUMPY") + 1)
data[len(data) - 200 if second < 0 else second + len(good) - 1] ^= 0xFF
with open("crc_error.npz", "wb") as f:
    f.write(bytes(data))

# Truncated archive and a file that is not a zip at all.
stored = open("dtypes_stored.npz", "rb").read()
with open("truncated.npz", "wb") as f:
    f.write(stored[: len(stored) // 2])
with open("not_a_zip.npz", "wb") as f:
    f.write(b"this is not a zip archive at all" * 4)

# Empty archive.
np.savez("empty.npz")

# Archive whose second member is not valid NPY.
buf = io.BytesIO()
with zipfile.ZipFile(buf, "w", zipfile.ZIP_DEFLATED) as z:
    z.writestr("first.npy", good)
    z.writestr("second.npy", b"\x93NUMPX broken member")
with open("corrupt_member.npz", "wb") as f:
    f.write(buf.getvalue())

# Unsupported compression method (bzip2).
buf = io.BytesIO()
with zipfile.ZipFile(buf, "w", zipfile.ZIP_BZIP2) as z:
    z.writestr("x.npy", good)
with open("bzip2.npz", "wb") as f:
    f.write(buf.getvalue())

# Missing split member.
np.savez("missing_member.npz", train_images=np.zeros((2, 28, 28), np.uint8),
         train_labels=np.zeros((2, 1), np.uint8))
