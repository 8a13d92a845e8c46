#include <unistd.h>

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <vector>

#include "doctest.h"
#include "inspex/errors.hpp"
#include "inspex/field.hpp"
#include "inspex/nifti.hpp"
#include "inspex/rng.hpp"
#include "inspex/volume.hpp"

using namespace inspex;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("inspex_nifti_test_" + std::to_string(::getpid()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

// Hand-assembled minimal NIfTI-1 file, independent of the writer under test.
void write_raw_nifti(const std::string& path, int16_t dim0, const int16_t dims[7], int16_t datatype,
                     float slope, float inter, const void* payload, size_t payload_bytes,
                     const char magic[4] = "n+1") {
    std::vector<char> bytes(352 + payload_bytes, 0);
    auto put16 = [&](size_t off, int16_t v) { std::memcpy(bytes.data() + off, &v, 2); };
    auto put32 = [&](size_t off, int32_t v) { std::memcpy(bytes.data() + off, &v, 4); };
    auto putf = [&](size_t off, float v) { std::memcpy(bytes.data() + off, &v, 4); };
    put32(0, 348);
    put16(40, dim0);
    for (int i = 0; i < 7; ++i) put16(static_cast<size_t>(42 + 2 * i), dims[i]);
    put16(70, datatype);
    put16(72, datatype == 4 ? int16_t{16} : int16_t{32});
    for (int i = 0; i < 8; ++i) putf(static_cast<size_t>(76 + 4 * i), 1.0f);
    putf(108, 352.0f); // vox_offset
    putf(112, slope);
    putf(116, inter);
    std::memcpy(bytes.data() + 344, magic, 4);
    std::memcpy(bytes.data() + 352, payload, payload_bytes);
    std::ofstream out(path, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Volume make_volume(uint64_t seed) {
    Volume v({7, 6, 5});
    Rng rng(seed);
    for (float& x : v.data()) x = static_cast<float>(rng.uniform(-1024, 3072));
    v.spacing = {0.625, 0.625, 0.625};
    v.origin = {-120.5, 33.25, -8.0};
    return v;
}

} // namespace

TEST_SUITE_BEGIN("nifti");

TEST_CASE("save then load is voxel-exact with exact spacing") {
    TempDir dir;
    const Volume v = make_volume(99);
    const std::string path = dir.file("vol.nii");
    save_nifti(v, path);
    const Volume back = load_nifti(path);
    CHECK(back.shape() == v.shape());
    CHECK(back.data() == v.data());
    CHECK(back.spacing[0] == 0.625);
    CHECK(back.spacing[1] == 0.625);
    CHECK(back.spacing[2] == 0.625);
    CHECK(back.origin[0] == doctest::Approx(v.origin[0]));
}

TEST_CASE("gzip round trip detected by magic bytes") {
    TempDir dir;
    const Volume v = make_volume(123);
    const std::string path = dir.file("vol.nii.gz");
    save_nifti(v, path);
    std::ifstream in(path, std::ios::binary);
    unsigned char head[2];
    in.read(reinterpret_cast<char*>(head), 2);
    CHECK(head[0] == 0x1f);
    CHECK(head[1] == 0x8b);
    const Volume back = load_nifti(path);
    CHECK(back.data() == v.data());
}

TEST_CASE("direction matrix survives a round trip") {
    TempDir dir;
    Volume v = make_volume(5);
    v.direction = {0, -1, 0, 1, 0, 0, 0, 0, 1}; // axial rotation by 90 degrees
    const std::string path = dir.file("rot.nii");
    save_nifti(v, path);
    const Volume back = load_nifti(path);
    for (int i = 0; i < 9; ++i) CHECK(back.direction[i] == doctest::Approx(v.direction[i]));
}

TEST_CASE("int16 data honours scale slope and intercept") {
    TempDir dir;
    const std::string path = dir.file("i16.nii");
    int16_t raw[8] = {24, 0, 1024, 4096, 100, 200, 300, 400};
    const int16_t dims[7] = {2, 2, 2, 1, 1, 1, 1};
    write_raw_nifti(path, 3, dims, 4, 1.0f, -1024.0f, raw, sizeof(raw));
    const Volume v = load_nifti(path);
    CHECK(v.at(0, 0, 0) == -1000.0f); // 1*24 - 1024
    CHECK(v.at(1, 0, 0) == -1024.0f);
    CHECK(v.at(0, 1, 0) == 0.0f);
    CHECK(v.at(1, 1, 0) == 3072.0f);
}

TEST_CASE("slope zero means unscaled") {
    TempDir dir;
    const std::string path = dir.file("noslope.nii");
    float raw[8] = {1, 2, 3, 4, 5, 6, 7, 8};
    const int16_t dims[7] = {2, 2, 2, 1, 1, 1, 1};
    write_raw_nifti(path, 3, dims, 16, 0.0f, 5000.0f, raw, sizeof(raw));
    const Volume v = load_nifti(path);
    CHECK(v.at(0, 0, 0) == 1.0f);
}

TEST_CASE("4-D input is rejected as unsupported") {
    TempDir dir;
    const std::string path = dir.file("4d.nii");
    std::vector<float> raw(16, 0.0f);
    const int16_t dims[7] = {2, 2, 2, 2, 1, 1, 1};
    write_raw_nifti(path, 4, dims, 16, 1.0f, 0.0f, raw.data(), raw.size() * 4);
    CHECK_THROWS_AS(load_nifti(path), DataError);
}

TEST_CASE("malformed magic bytes raise a format error") {
    TempDir dir;
    const std::string path = dir.file("bad.nii");
    float raw[8] = {};
    const int16_t dims[7] = {2, 2, 2, 1, 1, 1, 1};
    write_raw_nifti(path, 3, dims, 16, 1.0f, 0.0f, raw, sizeof(raw), "xxx");
    CHECK_THROWS_AS(load_nifti(path), DataError);
}

TEST_CASE("unsupported datatype is rejected") {
    TempDir dir;
    const std::string path = dir.file("f64.nii");
    double raw[8] = {};
    const int16_t dims[7] = {2, 2, 2, 1, 1, 1, 1};
    write_raw_nifti(path, 3, dims, 64, 1.0f, 0.0f, raw, sizeof(raw));
    CHECK_THROWS_AS(load_nifti(path), DataError);
}

TEST_CASE("non-finite voxels are a data error") {
    TempDir dir;
    const std::string path = dir.file("nan.nii");
    float raw[8] = {};
    raw[3] = std::numeric_limits<float>::quiet_NaN();
    const int16_t dims[7] = {2, 2, 2, 1, 1, 1, 1};
    write_raw_nifti(path, 3, dims, 16, 1.0f, 0.0f, raw, sizeof(raw));
    CHECK_THROWS_AS(load_nifti(path), DataError);
}

TEST_CASE("missing file carries the path in the error") {
    try {
        load_nifti("/nonexistent/vol.nii");
        FAIL("expected IoError");
    } catch (const IoError& e) {
        CHECK(std::string(e.what()).find("/nonexistent/vol.nii") != std::string::npos);
    }
}

TEST_CASE("displacement field round trip") {
    TempDir dir;
    DisplacementField f({5, 4, 3});
    Rng rng(7);
    for (float& x : f.data()) x = static_cast<float>(rng.uniform(-3, 3));
    f.spacing = {1.0, 1.0, 2.5};
    const std::string path = dir.file("field.nii");
    save_field_nifti(f, path);
    const DisplacementField back = load_field_nifti(path);
    CHECK(back.shape() == f.shape());
    CHECK(back.data() == f.data());
    CHECK(back.spacing[2] == 2.5);
}

TEST_CASE("plain volume is rejected by the field loader") {
    TempDir dir;
    const Volume v = make_volume(1);
    const std::string path = dir.file("scalar.nii");
    save_nifti(v, path);
    CHECK_THROWS_AS(load_field_nifti(path), DataError);
}

TEST_CASE("mask round trip stays binary") {
    TempDir dir;
    BinaryMask m({6, 5, 4});
    Rng rng(3);
    for (auto& b : m.data()) b = rng.uniform() < 0.4 ? 1 : 0;
    const std::string path = dir.file("mask.nii");
    save_mask_nifti(m, path);
    const BinaryMask back = load_mask_nifti(path);
    CHECK(back.data() == m.data());
}

TEST_SUITE_END();
