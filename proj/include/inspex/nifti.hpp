#pragma once

#include <string>

#include "inspex/volume.hpp"

namespace inspex {

class DisplacementField;

/// Read a single-file NIfTI-1 image (3-D, int16 or float32, optionally
/// gzip-compressed; compression is detected from the file's magic bytes).
/// Voxels are converted to HU via scl_slope/scl_inter; geometry comes from
/// the sform when set, else the qform, else pixdim with identity axes.
Volume load_nifti(const std::string& path);

/// Write a single-file float32 NIfTI-1 image. A ".gz" suffix selects gzip
/// output. load_nifti(save_nifti(v)) is voxel-exact.
void save_nifti(const Volume& v, const std::string& path);

/// 3-component displacement fields ride in NIfTI-1 vector files
/// (dim[0]=5, dim[5]=3, intent code 1007). Vectors are in voxel units.
DisplacementField load_field_nifti(const std::string& path);
void save_field_nifti(const DisplacementField& f, const std::string& path);

BinaryMask load_mask_nifti(const std::string& path);
void save_mask_nifti(const BinaryMask& m, const std::string& path);

} // namespace inspex
