#ifndef ISLES_NIFTI_HPP
#define ISLES_NIFTI_HPP

// NIfTI-1 single-file (.nii / .nii.gz) reader and writer.
//
// Header layout (byte offsets into the 348-byte header):
//     0 sizeof_hdr   40 dim[8]      70 datatype    72 bitpix
//    76 pixdim[8]   108 vox_offset 112 scl_slope  116 scl_inter
//   123 xyzt_units  148 descrip    252 qform_code 254 sform_code
//   256 quatern_b/c/d, qoffset_x/y/z   280 srow_x/y/z[4]   344 magic

#include <array>
#include <algorithm>
#include <bit>
#include <cfloat>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <zlib.h>

#include "isles/error.hpp"
#include "isles/volume.hpp"

namespace isles::nifti {

enum class Datatype : std::int16_t {
    UInt8 = 2,
    Int16 = 4,
    Int32 = 8,
    Float32 = 16,
    Float64 = 64,
};

inline constexpr std::array<Datatype, 5> supported_datatypes{
    Datatype::UInt8, Datatype::Int16, Datatype::Int32, Datatype::Float32, Datatype::Float64};

inline constexpr std::size_t bytes_per_voxel(Datatype t) noexcept {
    switch (t) {
    case Datatype::UInt8: return 1;
    case Datatype::Int16: return 2;
    case Datatype::Int32: return 4;
    case Datatype::Float32: return 4;
    case Datatype::Float64: return 8;
    }
    return 0;
}

inline constexpr std::string_view datatype_name(Datatype t) noexcept {
    switch (t) {
    case Datatype::UInt8: return "uint8";
    case Datatype::Int16: return "int16";
    case Datatype::Int32: return "int32";
    case Datatype::Float32: return "float32";
    case Datatype::Float64: return "float64";
    }
    return "unknown";
}

inline Datatype datatype_from_code(int code) {
    for (auto t : supported_datatypes)
        if (static_cast<int>(t) == code) return t;
    fail(ErrorKind::UnsupportedDatatype, "datatype code " + std::to_string(code));
}

inline Datatype datatype_from_name(std::string_view name) {
    for (auto t : supported_datatypes)
        if (datatype_name(t) == name) return t;
    fail(ErrorKind::UnsupportedDatatype, "datatype '" + std::string(name) + "'");
}

inline constexpr std::size_t header_size = 348;
inline constexpr std::int32_t nifti2_header_size = 540;

struct NiftiHeader {
    std::int32_t header_size = 348;
    std::array<std::int16_t, 8> dim{};
    Datatype datatype = Datatype::Float32;
    std::int16_t bitpix = 32;
    std::array<float, 8> pixdim{};
    float vox_offset = 352.0f;
    float scl_slope = 1.0f;
    float scl_inter = 0.0f;
    std::uint8_t xyzt_units = 2;
    std::string descrip;
    std::int16_t qform_code = 0;
    std::int16_t sform_code = 0;
    std::array<float, 3> quatern{};   // b, c, d
    std::array<float, 3> qoffset{};
    std::array<std::array<float, 4>, 3> srow{};
    std::array<char, 4> magic{'n', '+', '1', '\0'};
    /// True when the file's byte order differs from the host's.
    bool byte_swapped = false;

    Dims dims() const {
        Dims d{1, 1, 1};
        for (int i = 0; i < 3 && i < dim[0]; ++i) d[i] = static_cast<std::size_t>(dim[i + 1]);
        return d;
    }

    Spacing spacing() const {
        Spacing s{1.0, 1.0, 1.0};
        for (int i = 0; i < 3 && i < dim[0]; ++i) s[i] = std::fabs(static_cast<double>(pixdim[i + 1]));
        return s;
    }

    std::size_t voxel_count() const {
        auto d = dims();
        return d[0] * d[1] * d[2];
    }

    bool has_scaling() const { return scl_slope != 0.0f && std::isfinite(scl_slope); }

    /// sform when sform_code > 0, else qform when qform_code > 0, else the
    /// spacing diagonal.
    Affine affine() const {
        if (sform_code > 0) {
            Affine a{};
            for (int r = 0; r < 3; ++r)
                for (int c = 0; c < 4; ++c) a[r][c] = srow[r][c];
            a[3][3] = 1.0;
            return a;
        }
        if (qform_code > 0) return qform_affine();
        return spacing_affine(spacing());
    }

    Affine qform_affine() const {
        double b = quatern[0], c = quatern[1], d = quatern[2];
        double a = 1.0 - (b * b + c * c + d * d);
        if (a < 1.e-7) {
            a = 1.0 / std::sqrt(b * b + c * c + d * d);
            b *= a;
            c *= a;
            d *= a;
            a = 0.0;
        } else {
            a = std::sqrt(a);
        }
        auto s = spacing();
        double zscale = pixdim[0] < 0.0f ? -s[2] : s[2];
        const double rot[3][3] = {
            {a * a + b * b - c * c - d * d, 2.0 * (b * c - a * d), 2.0 * (b * d + a * c)},
            {2.0 * (b * c + a * d), a * a + c * c - b * b - d * d, 2.0 * (c * d - a * b)},
            {2.0 * (b * d - a * c), 2.0 * (c * d + a * b), a * a + d * d - c * c - b * b},
        };
        const double scale[3] = {s[0], s[1], zscale};
        Affine m{};
        for (int r = 0; r < 3; ++r) {
            for (int col = 0; col < 3; ++col) m[r][col] = rot[r][col] * scale[col];
            m[r][3] = qoffset[r];
        }
        m[3][3] = 1.0;
        return m;
    }
};

namespace detail {

template <class T>
T byteswap_value(T v) noexcept {
    auto bytes = std::bit_cast<std::array<std::uint8_t, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
}

/// Reads fixed-width fields in a given byte order.
class FieldReader {
public:
    FieldReader(std::span<const std::uint8_t> bytes, bool swap) : bytes_(bytes), swap_(swap) {}

    template <class T>
    T get(std::size_t offset) const {
        T v;
        std::memcpy(&v, bytes_.data() + offset, sizeof(T));
        return swap_ ? byteswap_value(v) : v;
    }

private:
    std::span<const std::uint8_t> bytes_;
    bool swap_;
};

/// Writes fields in host byte order.
class FieldWriter {
public:
    explicit FieldWriter(std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

    template <class T>
    void put(std::size_t offset, T v) {
        std::memcpy(bytes_.data() + offset, &v, sizeof(T));
    }

private:
    std::vector<std::uint8_t>& bytes_;
};

inline bool is_gzip(std::span<const std::uint8_t> bytes) noexcept {
    return bytes.size() >= 2 && bytes[0] == 0x1F && bytes[1] == 0x8B;
}

inline std::vector<std::uint8_t> gunzip(std::span<const std::uint8_t> in) {
    z_stream zs{};
    if (inflateInit2(&zs, 15 + 32) != Z_OK) fail(ErrorKind::IoFailure, "zlib init failed");
    std::vector<std::uint8_t> out;
    std::array<std::uint8_t, 1 << 16> chunk{};
    zs.next_in = const_cast<Bytef*>(in.data());
    zs.avail_in = static_cast<uInt>(in.size());
    int rc = Z_OK;
    while (rc != Z_STREAM_END) {
        zs.next_out = chunk.data();
        zs.avail_out = static_cast<uInt>(chunk.size());
        rc = inflate(&zs, Z_NO_FLUSH);
        if (rc != Z_OK && rc != Z_STREAM_END) {
            inflateEnd(&zs);
            fail(ErrorKind::IoFailure, "corrupt or truncated gzip stream");
        }
        out.insert(out.end(), chunk.data(), chunk.data() + (chunk.size() - zs.avail_out));
        if (rc == Z_OK && zs.avail_in == 0 && zs.avail_out != 0) {
            inflateEnd(&zs);
            fail(ErrorKind::IoFailure, "truncated gzip stream");
        }
    }
    inflateEnd(&zs);
    return out;
}

/// Deterministic gzip (zero mtime, no file name).
inline std::vector<std::uint8_t> gzip(std::span<const std::uint8_t> in) {
    z_stream zs{};
    if (deflateInit2(&zs, 6, Z_DEFLATED, 15 + 16, 8, Z_DEFAULT_STRATEGY) != Z_OK)
        fail(ErrorKind::IoFailure, "zlib init failed");
    std::vector<std::uint8_t> out(deflateBound(&zs, static_cast<uLong>(in.size())) + 32);
    zs.next_in = const_cast<Bytef*>(in.data());
    zs.avail_in = static_cast<uInt>(in.size());
    zs.next_out = out.data();
    zs.avail_out = static_cast<uInt>(out.size());
    int rc = deflate(&zs, Z_FINISH);
    deflateEnd(&zs);
    if (rc != Z_STREAM_END) fail(ErrorKind::IoFailure, "gzip compression failed");
    out.resize(zs.total_out);
    return out;
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::IoFailure, "cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    if (in.bad()) fail(ErrorKind::IoFailure, "read error on " + path.string());
    return bytes;
}

inline void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::IoFailure, "cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorKind::IoFailure, "write error on " + path.string());
}

inline bool has_gz_suffix(const std::filesystem::path& path) {
    return path.extension() == ".gz";
}

template <class T>
double decode_one(const std::uint8_t* p, bool swap) {
    T v;
    std::memcpy(&v, p, sizeof(T));
    if (swap) v = byteswap_value(v);
    return static_cast<double>(v);
}

template <class T>
void encode_one(std::uint8_t* p, double v) {
    T t = static_cast<T>(v);
    std::memcpy(p, &t, sizeof(T));
}

template <class T>
bool integral_in_range(double v) {
    return v == std::trunc(v) && v >= static_cast<double>(std::numeric_limits<T>::lowest()) &&
           v <= static_cast<double>(std::numeric_limits<T>::max());
}

} // namespace detail

/// Validates and decodes the first 348 bytes. Byte order is taken from the
/// sizeof_hdr field; a byte-swapped 348 is accepted and flagged.
inline NiftiHeader parse_header(std::span<const std::uint8_t> raw) {
    if (raw.size() < header_size)
        fail(ErrorKind::MalformedHeader,
             "need 348 header bytes, got " + std::to_string(raw.size()));

    std::int32_t size_native;
    std::memcpy(&size_native, raw.data(), 4);
    bool swap = false;
    if (size_native != 348) {
        if (detail::byteswap_value(size_native) == 348) {
            swap = true;
        } else if (size_native == nifti2_header_size ||
                   detail::byteswap_value(size_native) == nifti2_header_size) {
            fail(ErrorKind::MalformedHeader, "NIfTI-2 files are not supported");
        } else {
            fail(ErrorKind::MalformedHeader,
                 "sizeof_hdr is " + std::to_string(size_native) + ", expected 348");
        }
    }

    detail::FieldReader r(raw, swap);
    NiftiHeader h;
    h.byte_swapped = swap;
    h.header_size = 348;

    std::memcpy(h.magic.data(), raw.data() + 344, 4);
    if (std::memcmp(h.magic.data(), "ni1\0", 4) == 0)
        fail(ErrorKind::MalformedHeader,
             "paired .hdr/.img NIfTI is not supported; convert to single-file .nii");
    if (std::memcmp(h.magic.data(), "n+1\0", 4) != 0)
        fail(ErrorKind::MalformedHeader, "magic is not \"n+1\"");

    for (int i = 0; i < 8; ++i) h.dim[i] = r.get<std::int16_t>(40 + 2 * i);
    if (h.dim[0] < 1 || h.dim[0] > 7)
        fail(ErrorKind::MalformedHeader, "dim[0] must be in 1..7, got " + std::to_string(h.dim[0]));
    for (int i = 1; i <= h.dim[0]; ++i)
        if (h.dim[i] < 1)
            fail(ErrorKind::MalformedHeader,
                 "dim[" + std::to_string(i) + "] = " + std::to_string(h.dim[i]) + " is empty");
    for (int i = 4; i <= h.dim[0]; ++i)
        if (h.dim[i] != 1)
            fail(ErrorKind::MalformedHeader, "only 3D volumes are supported (dim[" +
                                                 std::to_string(i) + "] = " +
                                                 std::to_string(h.dim[i]) + ")");

    h.datatype = datatype_from_code(r.get<std::int16_t>(70));
    h.bitpix = r.get<std::int16_t>(72);
    if (h.bitpix != static_cast<std::int16_t>(8 * bytes_per_voxel(h.datatype)))
        fail(ErrorKind::MalformedHeader, "bitpix " + std::to_string(h.bitpix) +
                                             " disagrees with datatype " +
                                             std::string(datatype_name(h.datatype)));

    for (int i = 0; i < 8; ++i) h.pixdim[i] = r.get<float>(76 + 4 * i);
    for (double s : h.spacing())
        if (!(s > 0.0) || !std::isfinite(s))
            fail(ErrorKind::MalformedHeader, "voxel spacing must be positive");

    h.vox_offset = r.get<float>(108);
    if (!(h.vox_offset >= static_cast<float>(header_size)))
        fail(ErrorKind::MalformedHeader, "vox_offset must be >= 348 for single-file NIfTI");
    h.scl_slope = r.get<float>(112);
    h.scl_inter = r.get<float>(116);
    h.xyzt_units = raw[123];

    const char* desc = reinterpret_cast<const char*>(raw.data() + 148);
    h.descrip.assign(desc, strnlen(desc, 80));

    h.qform_code = r.get<std::int16_t>(252);
    h.sform_code = r.get<std::int16_t>(254);
    for (int i = 0; i < 3; ++i) h.quatern[i] = r.get<float>(256 + 4 * i);
    for (int i = 0; i < 3; ++i) h.qoffset[i] = r.get<float>(268 + 4 * i);
    for (int row = 0; row < 3; ++row)
        for (int c = 0; c < 4; ++c) h.srow[row][c] = r.get<float>(280 + 16 * row + 4 * c);
    return h;
}

/// Serializes to 348 bytes in host byte order.
inline std::vector<std::uint8_t> serialize_header(const NiftiHeader& h) {
    std::vector<std::uint8_t> out(header_size, 0);
    detail::FieldWriter w(out);
    w.put<std::int32_t>(0, 348);
    out[38] = 'r';
    for (int i = 0; i < 8; ++i) w.put<std::int16_t>(40 + 2 * i, h.dim[i]);
    w.put<std::int16_t>(70, static_cast<std::int16_t>(h.datatype));
    w.put<std::int16_t>(72, static_cast<std::int16_t>(8 * bytes_per_voxel(h.datatype)));
    for (int i = 0; i < 8; ++i) w.put<float>(76 + 4 * i, h.pixdim[i]);
    w.put<float>(108, h.vox_offset);
    w.put<float>(112, h.scl_slope);
    w.put<float>(116, h.scl_inter);
    out[123] = h.xyzt_units;
    std::memcpy(out.data() + 148, h.descrip.data(), std::min<std::size_t>(h.descrip.size(), 79));
    w.put<std::int16_t>(252, h.qform_code);
    w.put<std::int16_t>(254, h.sform_code);
    for (int i = 0; i < 3; ++i) w.put<float>(256 + 4 * i, h.quatern[i]);
    for (int i = 0; i < 3; ++i) w.put<float>(268 + 4 * i, h.qoffset[i]);
    for (int row = 0; row < 3; ++row)
        for (int c = 0; c < 4; ++c) w.put<float>(280 + 16 * row + 4 * c, h.srow[row][c]);
    std::memcpy(out.data() + 344, h.magic.data(), 4);
    return out;
}

inline constexpr std::string_view unit_tag = "unit:";

/// Decodes a complete (already decompressed) single-file image.
inline VolumeGrid decode_volume(std::span<const std::uint8_t> bytes) {
    NiftiHeader h = parse_header(bytes);
    const auto offset = static_cast<std::size_t>(h.vox_offset);
    const std::size_t n = h.voxel_count();
    const std::size_t bpv = bytes_per_voxel(h.datatype);
    if (bytes.size() < offset || (bytes.size() - offset) / bpv < n)
        fail(ErrorKind::IoFailure, "data section truncated: need " + std::to_string(n * bpv) +
                                       " bytes after offset " + std::to_string(offset));

    std::vector<double> data(n);
    const std::uint8_t* p = bytes.data() + offset;
    const bool swap = h.byte_swapped;
    for (std::size_t i = 0; i < n; ++i, p += bpv) {
        switch (h.datatype) {
        case Datatype::UInt8: data[i] = *p; break;
        case Datatype::Int16: data[i] = detail::decode_one<std::int16_t>(p, swap); break;
        case Datatype::Int32: data[i] = detail::decode_one<std::int32_t>(p, swap); break;
        case Datatype::Float32: data[i] = detail::decode_one<float>(p, swap); break;
        case Datatype::Float64: data[i] = detail::decode_one<double>(p, swap); break;
        }
    }
    if (h.has_scaling()) {
        const double slope = h.scl_slope, inter = h.scl_inter;
        for (double& v : data) v = slope * v + inter;
    }
    for (double v : data)
        if (!std::isfinite(v)) fail(ErrorKind::NonFiniteData, "NaN or Inf voxel after scaling");

    std::string unit;
    if (h.descrip.starts_with(unit_tag)) unit = h.descrip.substr(unit_tag.size());

    VolumeGrid v(Geometry(h.dims(), h.spacing(), h.affine()), std::move(data), std::move(unit));
    std::vector<std::uint8_t> ext(bytes.begin() + header_size, bytes.begin() + offset);
    if (ext.size() == 4 && ext[0] == 0) ext.clear();
    return v.with_header_extension(std::move(ext));
}

inline std::vector<std::uint8_t> load_bytes(const std::filesystem::path& path) {
    auto bytes = detail::read_file(path);
    if (detail::is_gzip(bytes)) bytes = detail::gunzip(bytes);
    return bytes;
}

inline NiftiHeader read_header(const std::filesystem::path& path) {
    auto bytes = load_bytes(path);
    try {
        return parse_header(bytes);
    } catch (const Error& e) {
        throw e.with_context(path.string());
    }
}

inline VolumeGrid read_volume(const std::filesystem::path& path) {
    auto bytes = load_bytes(path);
    try {
        return decode_volume(bytes);
    } catch (const Error& e) {
        throw e.with_context(path.string());
    }
}

/// Header for writing `volume` with the given on-disk type: slope 1,
/// intercept 0, affine stored as sform.
inline NiftiHeader make_header(const VolumeGrid& volume, Datatype datatype) {
    NiftiHeader h;
    h.dim = {3, 1, 1, 1, 1, 1, 1, 1};
    for (int i = 0; i < 3; ++i) {
        if (volume.dims()[i] > static_cast<std::size_t>(std::numeric_limits<std::int16_t>::max()))
            fail(ErrorKind::ValueOutOfRange, "extent exceeds NIfTI-1 limit of 32767");
        h.dim[i + 1] = static_cast<std::int16_t>(volume.dims()[i]);
    }
    h.datatype = datatype;
    h.bitpix = static_cast<std::int16_t>(8 * bytes_per_voxel(datatype));
    h.pixdim = {1.0f, 1.0f, 1.0f, 1.0f, 0.0f, 0.0f, 0.0f, 0.0f};
    for (int i = 0; i < 3; ++i) h.pixdim[i + 1] = static_cast<float>(volume.spacing()[i]);
    const auto& ext = volume.header_extension();
    h.vox_offset = static_cast<float>(header_size + (ext.empty() ? 4 : ext.size()));
    h.scl_slope = 1.0f;
    h.scl_inter = 0.0f;
    h.xyzt_units = 2;
    if (!volume.intensity_unit().empty())
        h.descrip = std::string(unit_tag) + volume.intensity_unit();
    h.qform_code = 0;
    h.sform_code = 1;
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 4; ++c) h.srow[r][c] = static_cast<float>(volume.affine()[r][c]);
    return h;
}

/// Encodes the full file image (header, extension block, data), uncompressed.
/// Integer types require integral in-range values; nothing is clipped.
inline std::vector<std::uint8_t> encode_volume(const VolumeGrid& volume, Datatype datatype) {
    NiftiHeader h = make_header(volume, datatype);
    auto bytes = serialize_header(h);
    const auto& ext = volume.header_extension();
    bytes.resize(header_size + (ext.empty() ? 4 : ext.size()), 0);
    if (!ext.empty()) std::memcpy(bytes.data() + header_size, ext.data(), ext.size());

    const std::size_t bpv = bytes_per_voxel(datatype);
    const std::size_t base = bytes.size();
    bytes.resize(base + volume.size() * bpv);
    std::uint8_t* p = bytes.data() + base;
    auto out_of_range = [&](std::size_t i) {
        fail(ErrorKind::ValueOutOfRange, "value " + std::to_string(volume[i]) + " at voxel " +
                                             std::to_string(i) + " not representable as " +
                                             std::string(datatype_name(datatype)));
    };
    for (std::size_t i = 0; i < volume.size(); ++i, p += bpv) {
        const double v = volume[i];
        switch (datatype) {
        case Datatype::UInt8:
            if (!detail::integral_in_range<std::uint8_t>(v)) out_of_range(i);
            detail::encode_one<std::uint8_t>(p, v);
            break;
        case Datatype::Int16:
            if (!detail::integral_in_range<std::int16_t>(v)) out_of_range(i);
            detail::encode_one<std::int16_t>(p, v);
            break;
        case Datatype::Int32:
            if (!detail::integral_in_range<std::int32_t>(v)) out_of_range(i);
            detail::encode_one<std::int32_t>(p, v);
            break;
        case Datatype::Float32:
            if (std::fabs(v) > static_cast<double>(FLT_MAX)) out_of_range(i);
            detail::encode_one<float>(p, v);
            break;
        case Datatype::Float64:
            detail::encode_one<double>(p, v);
            break;
        }
    }
    return bytes;
}

/// Writes a .nii, or gzip-compressed when the path ends in ".gz".
inline void write_volume(const VolumeGrid& volume, const std::filesystem::path& path,
                         Datatype datatype) {
    auto bytes = encode_volume(volume, datatype);
    if (detail::has_gz_suffix(path)) bytes = detail::gzip(bytes);
    detail::write_file(path, bytes);
}

inline void write_volume(const VolumeGrid& volume, const std::filesystem::path& path,
                         int datatype_code) {
    write_volume(volume, path, datatype_from_code(datatype_code));
}

} // namespace isles::nifti

#endif
