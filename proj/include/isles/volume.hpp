#ifndef ISLES_VOLUME_HPP
#define ISLES_VOLUME_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "isles/error.hpp"

namespace isles {

using Dims = std::array<std::size_t, 3>;
using Spacing = std::array<double, 3>;
using Affine = std::array<std::array<double, 4>, 4>;

inline Affine spacing_affine(const Spacing& spacing) {
    Affine a{};
    for (std::size_t i = 0; i < 3; ++i) a[i][i] = spacing[i];
    a[3][3] = 1.0;
    return a;
}

/// Shared voxel-grid geometry of volumes and masks. Data are stored
/// x-fastest: index = x + nx * (y + ny * z).
struct Geometry {
    Dims dims{1, 1, 1};
    Spacing spacing{1.0, 1.0, 1.0};
    Affine affine = spacing_affine({1.0, 1.0, 1.0});

    Geometry() = default;
    Geometry(Dims d, Spacing s) : dims(d), spacing(s), affine(spacing_affine(s)) {}
    Geometry(Dims d, Spacing s, const Affine& a) : dims(d), spacing(s), affine(a) {}

    std::size_t voxel_count() const noexcept { return dims[0] * dims[1] * dims[2]; }

    std::size_t index(std::size_t x, std::size_t y, std::size_t z) const noexcept {
        return x + dims[0] * (y + dims[1] * z);
    }

    double voxel_volume_mm3() const noexcept { return spacing[0] * spacing[1] * spacing[2]; }

    void validate() const {
        for (std::size_t i = 0; i < 3; ++i) {
            if (dims[i] < 1) fail(ErrorKind::MalformedHeader, "spatial extent must be >= 1");
            if (!(spacing[i] > 0.0) || !std::isfinite(spacing[i]))
                fail(ErrorKind::MalformedHeader, "voxel spacing must be positive and finite");
        }
    }

    bool same_grid(const Geometry& other) const noexcept { return dims == other.dims; }
};

inline std::string dims_string(const Dims& d) {
    return std::to_string(d[0]) + "x" + std::to_string(d[1]) + "x" + std::to_string(d[2]);
}

/// Dense 3D scalar field. Values are finite 64-bit reals (slope/intercept
/// already applied). Immutable once built; operations return new grids.
class VolumeGrid {
public:
    VolumeGrid() : data_(1, 0.0) {}

    VolumeGrid(Geometry geometry, std::vector<double> data, std::string intensity_unit = {})
        : geometry_(std::move(geometry)), data_(std::move(data)),
          intensity_unit_(std::move(intensity_unit)) {
        geometry_.validate();
        if (data_.size() != geometry_.voxel_count())
            fail(ErrorKind::InvalidArgument,
                 "data length " + std::to_string(data_.size()) + " does not match dims " +
                     dims_string(geometry_.dims));
        for (double v : data_)
            if (!std::isfinite(v)) fail(ErrorKind::NonFiniteData, "volume contains NaN or Inf");
    }

    static VolumeGrid filled(Geometry geometry, double value, std::string unit = {}) {
        std::vector<double> data(geometry.voxel_count(), value);
        return VolumeGrid(std::move(geometry), std::move(data), std::move(unit));
    }

    const Geometry& geometry() const noexcept { return geometry_; }
    const Dims& dims() const noexcept { return geometry_.dims; }
    const Spacing& spacing() const noexcept { return geometry_.spacing; }
    const Affine& affine() const noexcept { return geometry_.affine; }
    std::span<const double> data() const noexcept { return data_; }
    std::size_t size() const noexcept { return data_.size(); }
    double operator[](std::size_t i) const noexcept { return data_[i]; }
    double at(std::size_t x, std::size_t y, std::size_t z) const noexcept {
        return data_[geometry_.index(x, y, z)];
    }
    const std::string& intensity_unit() const noexcept { return intensity_unit_; }

    /// Opaque NIfTI header extension bytes (from byte 348 to vox_offset).
    const std::vector<std::uint8_t>& header_extension() const noexcept { return extension_; }
    VolumeGrid with_header_extension(std::vector<std::uint8_t> bytes) const {
        VolumeGrid out = *this;
        out.extension_ = std::move(bytes);
        return out;
    }

    /// Same geometry, unit and extension; new voxel values.
    VolumeGrid with_data(std::vector<double> data) const {
        VolumeGrid out(geometry_, std::move(data), intensity_unit_);
        out.extension_ = extension_;
        return out;
    }

    template <class Fn>
    VolumeGrid map(Fn&& fn) const {
        std::vector<double> out(data_.size());
        std::transform(data_.begin(), data_.end(), out.begin(), fn);
        return with_data(std::move(out));
    }

    friend bool operator==(const VolumeGrid& a, const VolumeGrid& b) {
        return a.geometry_.dims == b.geometry_.dims && a.geometry_.spacing == b.geometry_.spacing &&
               a.geometry_.affine == b.geometry_.affine && a.data_ == b.data_;
    }

private:
    Geometry geometry_;
    std::vector<double> data_;
    std::string intensity_unit_;
    std::vector<std::uint8_t> extension_;
};

/// Binary voxel mask: every value is exactly 0 or 1.
class BinaryMask {
public:
    BinaryMask() : data_(1, 0) {}

    BinaryMask(Geometry geometry, std::vector<std::uint8_t> data)
        : geometry_(std::move(geometry)), data_(std::move(data)) {
        geometry_.validate();
        if (data_.size() != geometry_.voxel_count())
            fail(ErrorKind::InvalidArgument, "mask length does not match dims " +
                                                 dims_string(geometry_.dims));
        for (auto v : data_)
            if (v > 1) fail(ErrorKind::MaskInvalid, "mask values must be 0 or 1");
    }

    static BinaryMask filled(Geometry geometry, bool value) {
        std::vector<std::uint8_t> data(geometry.voxel_count(), value ? 1 : 0);
        return BinaryMask(std::move(geometry), std::move(data));
    }

    /// Strict conversion: any value other than 0 or 1 is MaskInvalid.
    static BinaryMask from_volume(const VolumeGrid& v) {
        std::vector<std::uint8_t> data(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (v[i] == 0.0) data[i] = 0;
            else if (v[i] == 1.0) data[i] = 1;
            else fail(ErrorKind::MaskInvalid, "non-binary value " + std::to_string(v[i]));
        }
        return BinaryMask(v.geometry(), std::move(data));
    }

    /// Any nonzero voxel becomes foreground.
    static BinaryMask from_nonzero(const VolumeGrid& v) {
        std::vector<std::uint8_t> data(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) data[i] = v[i] != 0.0 ? 1 : 0;
        return BinaryMask(v.geometry(), std::move(data));
    }

    VolumeGrid to_volume() const {
        return VolumeGrid(geometry_, std::vector<double>(data_.begin(), data_.end()));
    }

    const Geometry& geometry() const noexcept { return geometry_; }
    const Dims& dims() const noexcept { return geometry_.dims; }
    const Spacing& spacing() const noexcept { return geometry_.spacing; }
    std::span<const std::uint8_t> data() const noexcept { return data_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool operator[](std::size_t i) const noexcept { return data_[i] != 0; }
    bool at(std::size_t x, std::size_t y, std::size_t z) const noexcept {
        return data_[geometry_.index(x, y, z)] != 0;
    }

    std::size_t count() const noexcept {
        return static_cast<std::size_t>(std::count(data_.begin(), data_.end(), std::uint8_t{1}));
    }

    friend bool operator==(const BinaryMask& a, const BinaryMask& b) {
        return a.geometry_.dims == b.geometry_.dims && a.data_ == b.data_;
    }

private:
    Geometry geometry_;
    std::vector<std::uint8_t> data_;
};

inline void require_same_dims(const Dims& a, const Dims& b, const std::string& what) {
    if (a != b)
        fail(ErrorKind::DimensionMismatch,
             what + ": dims " + dims_string(a) + " vs " + dims_string(b));
}

/// Voxels outside the mask become 0; voxels inside are copied bit-for-bit.
inline VolumeGrid apply_mask(const VolumeGrid& volume, const BinaryMask& mask) {
    require_same_dims(volume.dims(), mask.dims(), "mask");
    std::vector<double> out(volume.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = mask[i] ? volume[i] : 0.0;
    return volume.with_data(std::move(out));
}

} // namespace isles

#endif
