#!/usr/bin/env python3
"""Regenerates the NIfTI reference fixtures with nibabel.

Writes the .nii/.nii.gz files next to this script plus fixtures.json holding
the values nibabel reports for each file (header fields, affine, scaled data).
The C++ tests compare the native reader against those values.
"""
import json
import pathlib

import nibabel as nib
import numpy as np
from nibabel.volumeutils import array_to_file

HERE = pathlib.Path(__file__).resolve().parent


def affine_for(spacing, yaw_deg=0.0, flip_z=False):
    t = np.deg2rad(yaw_deg)
    rot = np.array([[np.cos(t), -np.sin(t), 0.0],
                    [np.sin(t), np.cos(t), 0.0],
                    [0.0, 0.0, -1.0 if flip_z else 1.0]])
    aff = np.eye(4)
    aff[:3, :3] = rot @ np.diag(spacing)
    aff[:3, 3] = [-10.5, 20.25, -3.0]
    return aff


def save(name, data, dtype, spacing, endian="<", slope=1.0, inter=0.0,
         qform_only=False, yaw_deg=0.0, flip_z=False):
    hdr = nib.Nifti1Header(endianness=endian)
    hdr.set_data_dtype(np.dtype(dtype))
    hdr.set_data_shape(data.shape)
    hdr.set_zooms(spacing)
    if qform_only:
        hdr.set_qform(affine_for(spacing, yaw_deg, flip_z), code=1)
        hdr.set_sform(None, code=0)
    else:
        hdr.set_sform(affine_for(spacing), code=1)
        hdr.set_qform(None, code=0)
    hdr["scl_slope"] = slope
    hdr["scl_inter"] = inter
    hdr["vox_offset"] = 352
    path = HERE / name
    opener = nib.openers.Opener(str(path), "wb")
    with opener as f:
        hdr.write_to(f)
        if f.tell() == 348:
            f.write(b"\0\0\0\0")
        array_to_file(data.astype(np.dtype(dtype).newbyteorder(endian)), f,
                      offset=352, order="F")

    with nib.openers.Opener(str(path), "rb") as f:
        h = nib.Nifti1Header.from_fileobj(f)
    back = nib.load(str(path))
    scaled = np.asanyarray(back.dataobj).astype(np.float64)
    return {
        "file": name,
        "endian": h.endianness,
        "datatype": int(h["datatype"]),
        "dims": [int(d) for d in h["dim"][1:4]],
        "spacing": [float(z) for z in h.get_zooms()[:3]],
        "scl_slope": float(h["scl_slope"]),
        "scl_inter": float(h["scl_inter"]),
        "vox_offset": float(h["vox_offset"]),
        "qform_code": int(h["qform_code"]),
        "sform_code": int(h["sform_code"]),
        "affine": back.affine.tolist(),
        "data": scaled.flatten(order="F").tolist(),
    }


def main():
    dims = (3, 4, 5)
    n = int(np.prod(dims))
    ramp = np.arange(n, dtype=np.float64).reshape(dims, order="F")
    records = [
        save("ramp_f32_le.nii", ramp * 0.5 - 7.25, "float32", (1.5, 2.0, 2.5),
             slope=0.0, inter=0.0),
        save("ramp_f32_be.nii", ramp * 0.5 - 7.25, "float32", (1.5, 2.0, 2.5),
             endian=">"),
        save("ramp_f64_le.nii", ramp / 3.0, "float64", (0.8, 0.8, 4.0)),
        save("ct_i16_slope.nii.gz", ramp * 7 + 900, "int16", (0.5, 0.5, 5.0),
             slope=1.0, inter=-1024.0),
        save("mask_u8_be.nii", (ramp.astype(int) % 3 == 0), "uint8",
             (1.0, 1.0, 1.0), endian=">"),
        save("labels_i32_qform.nii", ramp - 30, "int32", (2.0, 1.0, 3.0),
             qform_only=True),
        save("rot_i16_qform.nii", ramp * 3 - 50, "int16", (1.0, 1.25, 2.0),
             qform_only=True, yaw_deg=30.0, flip_z=True),
    ]
    (HERE / "fixtures.json").write_text(json.dumps(records, indent=1))


if __name__ == "__main__":
    main()
