#include "inspex/nifti.hpp"

#include <zlib.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <vector>

#include "inspex/errors.hpp"
#include "inspex/field.hpp"

namespace inspex {

namespace {

#pragma pack(push, 1)
struct NiftiHeader {
    int32_t sizeof_hdr;
    char data_type[10];
    char db_name[18];
    int32_t extents;
    int16_t session_error;
    char regular;
    char dim_info;
    int16_t dim[8];
    float intent_p1;
    float intent_p2;
    float intent_p3;
    int16_t intent_code;
    int16_t datatype;
    int16_t bitpix;
    int16_t slice_start;
    float pixdim[8];
    float vox_offset;
    float scl_slope;
    float scl_inter;
    int16_t slice_end;
    char slice_code;
    char xyzt_units;
    float cal_max;
    float cal_min;
    float slice_duration;
    float toffset;
    int32_t glmax;
    int32_t glmin;
    char descrip[80];
    char aux_file[24];
    int16_t qform_code;
    int16_t sform_code;
    float quatern_b;
    float quatern_c;
    float quatern_d;
    float qoffset_x;
    float qoffset_y;
    float qoffset_z;
    float srow_x[4];
    float srow_y[4];
    float srow_z[4];
    char intent_name[16];
    char magic[4];
};
#pragma pack(pop)

static_assert(sizeof(NiftiHeader) == 348, "NIfTI-1 header must be 348 bytes");

constexpr int16_t kDtInt16 = 4;
constexpr int16_t kDtFloat32 = 16;
constexpr int16_t kIntentVector = 1007;

std::vector<char> read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(path + ": cannot open for reading");
    in.seekg(0, std::ios::end);
    const std::streamoff size = in.tellg();
    in.seekg(0, std::ios::beg);
    std::vector<char> bytes(static_cast<size_t>(size));
    if (size > 0) in.read(bytes.data(), size);
    if (!in) throw IoError(path + ": read failed");
    return bytes;
}

bool is_gzip(const std::vector<char>& bytes) {
    return bytes.size() >= 2 && static_cast<unsigned char>(bytes[0]) == 0x1f &&
           static_cast<unsigned char>(bytes[1]) == 0x8b;
}

std::vector<char> gunzip(const std::vector<char>& in, const std::string& path) {
    z_stream strm{};
    if (inflateInit2(&strm, 15 + 32) != Z_OK) throw IoError(path + ": zlib init failed");
    std::vector<char> out;
    out.reserve(in.size() * 4);
    std::vector<char> buf(1 << 16);
    strm.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(in.data()));
    strm.avail_in = static_cast<uInt>(in.size());
    int rc = Z_OK;
    while (rc != Z_STREAM_END) {
        strm.next_out = reinterpret_cast<Bytef*>(buf.data());
        strm.avail_out = static_cast<uInt>(buf.size());
        rc = inflate(&strm, Z_NO_FLUSH);
        if (rc != Z_OK && rc != Z_STREAM_END) {
            inflateEnd(&strm);
            throw DataError(path + ": corrupt gzip stream");
        }
        out.insert(out.end(), buf.data(), buf.data() + (buf.size() - strm.avail_out));
    }
    inflateEnd(&strm);
    return out;
}

std::vector<char> gzip_compress(const std::vector<char>& in, const std::string& path) {
    z_stream strm{};
    if (deflateInit2(&strm, Z_DEFAULT_COMPRESSION, Z_DEFLATED, 15 + 16, 8, Z_DEFAULT_STRATEGY) != Z_OK) {
        throw IoError(path + ": zlib init failed");
    }
    std::vector<char> out;
    std::vector<char> buf(1 << 16);
    strm.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(in.data()));
    strm.avail_in = static_cast<uInt>(in.size());
    int rc = Z_OK;
    do {
        strm.next_out = reinterpret_cast<Bytef*>(buf.data());
        strm.avail_out = static_cast<uInt>(buf.size());
        rc = deflate(&strm, Z_FINISH);
        out.insert(out.end(), buf.data(), buf.data() + (buf.size() - strm.avail_out));
    } while (rc != Z_STREAM_END);
    deflateEnd(&strm);
    return out;
}

struct ParsedNifti {
    NiftiHeader hdr;
    std::vector<char> payload; // raw voxel bytes starting at vox_offset
};

ParsedNifti parse_nifti_bytes(std::vector<char> bytes, const std::string& path) {
    if (is_gzip(bytes)) bytes = gunzip(bytes, path);
    if (bytes.size() < sizeof(NiftiHeader)) {
        throw DataError(path + ": file too short for a NIfTI-1 header");
    }
    ParsedNifti parsed;
    std::memcpy(&parsed.hdr, bytes.data(), sizeof(NiftiHeader));
    const NiftiHeader& h = parsed.hdr;
    if (std::memcmp(h.magic, "n+1", 4) != 0) {
        if (std::memcmp(h.magic, "ni1", 4) == 0) {
            throw DataError(path + ": two-file NIfTI (.hdr/.img) is not supported");
        }
        throw DataError(path + ": bad magic bytes, not a single-file NIfTI-1 image");
    }
    if (h.sizeof_hdr != 348) {
        throw DataError(path + ": unexpected sizeof_hdr " + std::to_string(h.sizeof_hdr) +
                        " (byte-swapped files are not supported)");
    }
    const size_t offset = static_cast<size_t>(h.vox_offset);
    if (offset < 348 || offset > bytes.size()) {
        throw DataError(path + ": invalid vox_offset");
    }
    parsed.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(offset), bytes.end());
    return parsed;
}

void fill_geometry(const NiftiHeader& h, Volume& v) {
    for (int a = 0; a < 3; ++a) {
        v.spacing[static_cast<size_t>(a)] = h.pixdim[a + 1] > 0 ? h.pixdim[a + 1] : 1.0;
    }
    if (h.sform_code > 0) {
        const float* rows[3] = {h.srow_x, h.srow_y, h.srow_z};
        for (int c = 0; c < 3; ++c) {
            double norm = 0.0;
            for (int r = 0; r < 3; ++r) norm += static_cast<double>(rows[r][c]) * rows[r][c];
            norm = std::sqrt(norm);
            if (norm > 0) {
                v.spacing[static_cast<size_t>(c)] = norm;
                for (int r = 0; r < 3; ++r) {
                    v.direction[static_cast<size_t>(3 * r + c)] = rows[r][c] / norm;
                }
            }
        }
        v.origin = {rows[0][3], rows[1][3], rows[2][3]};
    } else if (h.qform_code > 0) {
        const double b = h.quatern_b, c = h.quatern_c, d = h.quatern_d;
        const double a = std::sqrt(std::max(0.0, 1.0 - b * b - c * c - d * d));
        const double qfac = h.pixdim[0] < 0 ? -1.0 : 1.0;
        const double rot[9] = {
            a * a + b * b - c * c - d * d, 2 * b * c - 2 * a * d,         2 * b * d + 2 * a * c,
            2 * b * c + 2 * a * d,         a * a + c * c - b * b - d * d, 2 * c * d - 2 * a * b,
            2 * b * d - 2 * a * c,         2 * c * d + 2 * a * b,         a * a + d * d - b * b - c * c};
        for (int r = 0; r < 3; ++r) {
            for (int col = 0; col < 3; ++col) {
                v.direction[static_cast<size_t>(3 * r + col)] =
                    rot[3 * r + col] * (col == 2 ? qfac : 1.0);
            }
        }
        v.origin = {h.qoffset_x, h.qoffset_y, h.qoffset_z};
    }
}

void decode_scalars(const NiftiHeader& h, const std::vector<char>& payload, int64_t count,
                    std::vector<float>& out, const std::string& path) {
    const double slope = h.scl_slope == 0.0f ? 1.0 : static_cast<double>(h.scl_slope);
    const double inter = h.scl_slope == 0.0f ? 0.0 : static_cast<double>(h.scl_inter);
    out.resize(static_cast<size_t>(count));
    if (h.datatype == kDtFloat32) {
        if (payload.size() < static_cast<size_t>(count) * 4) {
            throw DataError(path + ": truncated voxel data");
        }
        const float* src = reinterpret_cast<const float*>(payload.data());
        for (int64_t i = 0; i < count; ++i) {
            out[static_cast<size_t>(i)] = static_cast<float>(slope * src[i] + inter);
        }
    } else if (h.datatype == kDtInt16) {
        if (payload.size() < static_cast<size_t>(count) * 2) {
            throw DataError(path + ": truncated voxel data");
        }
        const int16_t* src = reinterpret_cast<const int16_t*>(payload.data());
        for (int64_t i = 0; i < count; ++i) {
            out[static_cast<size_t>(i)] = static_cast<float>(slope * src[i] + inter);
        }
    } else {
        throw DataError(path + ": unsupported datatype code " + std::to_string(h.datatype) +
                        " (int16 and float32 only)");
    }
    for (float x : out) {
        if (!std::isfinite(x)) throw DataError(path + ": non-finite voxel values");
    }
}

NiftiHeader make_header(const GridShape& shape, const std::array<double, 3>& spacing,
                        const std::array<double, 3>& origin, const std::array<double, 9>& direction,
                        const char* descrip) {
    NiftiHeader h{};
    h.sizeof_hdr = 348;
    h.regular = 'r';
    h.dim[0] = 3;
    h.dim[1] = static_cast<int16_t>(shape.nx);
    h.dim[2] = static_cast<int16_t>(shape.ny);
    h.dim[3] = static_cast<int16_t>(shape.nz);
    for (int i = 4; i < 8; ++i) h.dim[i] = 1;
    h.datatype = kDtFloat32;
    h.bitpix = 32;
    h.pixdim[0] = 1.0f;
    for (int a = 0; a < 3; ++a) h.pixdim[a + 1] = static_cast<float>(spacing[static_cast<size_t>(a)]);
    h.vox_offset = 352.0f;
    h.scl_slope = 1.0f;
    h.scl_inter = 0.0f;
    h.xyzt_units = 2; // millimetres
    std::strncpy(h.descrip, descrip, sizeof(h.descrip) - 1);
    h.sform_code = 1;
    h.qform_code = 0;
    const float* rows[3];
    float srow[3][4];
    rows[0] = srow[0];
    (void)rows;
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) {
            srow[r][c] = static_cast<float>(direction[static_cast<size_t>(3 * r + c)] *
                                            spacing[static_cast<size_t>(c)]);
        }
        srow[r][3] = static_cast<float>(origin[static_cast<size_t>(r)]);
    }
    std::memcpy(h.srow_x, srow[0], sizeof(srow[0]));
    std::memcpy(h.srow_y, srow[1], sizeof(srow[1]));
    std::memcpy(h.srow_z, srow[2], sizeof(srow[2]));
    std::memcpy(h.magic, "n+1", 4);
    return h;
}

void write_nifti_bytes(const NiftiHeader& h, const char* voxels, size_t voxel_bytes,
                       const std::string& path) {
    std::vector<char> bytes(352 + voxel_bytes, 0);
    std::memcpy(bytes.data(), &h, sizeof(h));
    std::memcpy(bytes.data() + 352, voxels, voxel_bytes);
    const bool gz = path.size() > 3 && path.compare(path.size() - 3, 3, ".gz") == 0;
    if (gz) bytes = gzip_compress(bytes, path);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(path + ": cannot open for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError(path + ": write failed");
}

} // namespace

Volume load_nifti(const std::string& path) {
    const ParsedNifti parsed = parse_nifti_bytes(read_file_bytes(path), path);
    const NiftiHeader& h = parsed.hdr;
    bool three_d = h.dim[0] == 3;
    if (h.dim[0] > 3) {
        three_d = true;
        for (int d = 4; d <= h.dim[0] && d < 8; ++d) {
            if (h.dim[d] > 1) three_d = false;
        }
    }
    if (!three_d || h.dim[0] < 3) {
        throw DataError(path + ": only 3-D images are supported (dim[0]=" +
                        std::to_string(h.dim[0]) + ")");
    }
    const GridShape shape{h.dim[1], h.dim[2], h.dim[3]};
    if (shape.nx <= 0 || shape.ny <= 0 || shape.nz <= 0) {
        throw DataError(path + ": non-positive image dimensions");
    }
    std::vector<float> voxels;
    decode_scalars(h, parsed.payload, shape.numel(), voxels, path);
    Volume v(shape, std::move(voxels));
    fill_geometry(h, v);
    return v;
}

void save_nifti(const Volume& v, const std::string& path) {
    if (v.numel() == 0) throw UsageError("save_nifti: empty volume");
    const NiftiHeader h = make_header(v.shape(), v.spacing, v.origin, v.direction, "inspex volume");
    write_nifti_bytes(h, reinterpret_cast<const char*>(v.data().data()), v.data().size() * 4, path);
}

DisplacementField load_field_nifti(const std::string& path) {
    const ParsedNifti parsed = parse_nifti_bytes(read_file_bytes(path), path);
    const NiftiHeader& h = parsed.hdr;
    if (h.dim[0] != 5 || h.dim[4] != 1 || h.dim[5] != 3) {
        throw DataError(path + ": expected a 3-component vector image (dim[0]=5, dim[5]=3)");
    }
    if (h.datatype != kDtFloat32) {
        throw DataError(path + ": vector images must be float32");
    }
    const GridShape shape{h.dim[1], h.dim[2], h.dim[3]};
    const int64_t n = shape.numel();
    if (parsed.payload.size() < static_cast<size_t>(3 * n) * 4) {
        throw DataError(path + ": truncated vector data");
    }
    DisplacementField f(shape);
    for (int a = 0; a < 3; ++a) {
        f.spacing[static_cast<size_t>(a)] = h.pixdim[a + 1] > 0 ? h.pixdim[a + 1] : 1.0;
    }
    const float* src = reinterpret_cast<const float*>(parsed.payload.data());
    // NIfTI stores component-major; memory layout here is interleaved.
    for (int c = 0; c < 3; ++c) {
        for (int64_t idx = 0; idx < n; ++idx) {
            f.data()[static_cast<size_t>(3 * idx + c)] = src[c * n + idx];
        }
    }
    for (float x : f.data()) {
        if (!std::isfinite(x)) throw DataError(path + ": non-finite displacement values");
    }
    return f;
}

void save_field_nifti(const DisplacementField& f, const std::string& path) {
    if (f.numel() == 0) throw UsageError("save_field_nifti: empty field");
    NiftiHeader h = make_header(f.shape(), f.spacing, {0, 0, 0}, {1, 0, 0, 0, 1, 0, 0, 0, 1},
                                "displacement field, voxel units");
    h.dim[0] = 5;
    h.dim[4] = 1;
    h.dim[5] = 3;
    h.intent_code = kIntentVector;
    const int64_t n = f.numel();
    std::vector<float> planar(static_cast<size_t>(3 * n));
    for (int c = 0; c < 3; ++c) {
        for (int64_t idx = 0; idx < n; ++idx) {
            planar[static_cast<size_t>(c * n + idx)] = f.data()[static_cast<size_t>(3 * idx + c)];
        }
    }
    write_nifti_bytes(h, reinterpret_cast<const char*>(planar.data()), planar.size() * 4, path);
}

BinaryMask load_mask_nifti(const std::string& path) {
    const Volume v = load_nifti(path);
    BinaryMask m(v.shape());
    for (size_t i = 0; i < m.data().size(); ++i) m.data()[i] = v.data()[i] > 0.5f ? 1 : 0;
    return m;
}

void save_mask_nifti(const BinaryMask& m, const std::string& path) {
    Volume v(m.shape());
    for (size_t i = 0; i < v.data().size(); ++i) v.data()[i] = m.data()[i] ? 1.0f : 0.0f;
    save_nifti(v, path);
}

} // namespace inspex
