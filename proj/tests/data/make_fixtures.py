"""Regenerates the converter fixtures.  Values follow
data[r, c, b] = 100 r + 10 c + b + 0.5 and labels[r, c] = (5 r + c) % 4."""
import h5py
import numpy as np
import scipy.io

H, W, B = 4, 5, 3
r, c, b = np.meshgrid(np.arange(H), np.arange(W), np.arange(B), indexing="ij")
data = (100 * r + 10 * c + b + 0.5).astype(np.float32)
labels = ((5 * np.arange(H)[:, None] + np.arange(W)[None, :]) % 4).astype(np.uint8)

scipy.io.savemat("cube_v5.mat", {"cube": data, "gt": labels, "note": "text"}, do_compression=False)
scipy.io.savemat("cube_v5z.mat", {"cube": data.astype(np.float64), "gt": labels.astype(np.int16)}, do_compression=True)
scipy.io.savemat("two_cubes.mat", {"a": data, "b": data, "gt": labels})

# MATLAB v7.3 layout: HDF5 datasets hold the column-major buffer, so dims appear reversed
with h5py.File("cube_v73.mat", "w", userblock_size=512) as f:
    d = f.create_dataset("cube", data=np.ascontiguousarray(data.transpose(2, 1, 0)))
    d.attrs["MATLAB_class"] = np.bytes_("single")
    g = f.create_dataset("gt", data=np.ascontiguousarray(labels.T.astype(np.float64)))
    g.attrs["MATLAB_class"] = np.bytes_("double")
    s = f.create_dataset("name", data=np.frombuffer(b"abc", dtype=np.uint8).astype(np.uint16))
    s.attrs["MATLAB_class"] = np.bytes_("char")
with open("cube_v73.mat", "r+b") as f:
    f.write(b"MATLAB 7.3 MAT-file".ljust(116, b" "))

np.save("cube_c.npy", data)
np.save("cube_f.npy", np.asfortranarray(data.astype(np.float64)))
np.save("labels.npy", labels.astype(np.int16))
np.save("cube_bands_first.npy", np.ascontiguousarray(data.transpose(2, 0, 1)))
np.save("labels_frac.npy", labels.astype(np.float64) + 0.5)
