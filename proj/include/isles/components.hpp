#ifndef ISLES_COMPONENTS_HPP
#define ISLES_COMPONENTS_HPP

// 3D connected-component labeling of binary masks: one raster pass that
// unions each foreground voxel with its already-visited neighbours, then a
// second pass that assigns final labels in first-voxel scan order.

#include <array>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <string>
#include <vector>

#include "isles/error.hpp"
#include "isles/volume.hpp"

namespace isles {

enum class Connectivity : int { Faces = 6, Edges = 18, Corners = 26 };

inline Connectivity connectivity_from_int(int n) {
    switch (n) {
    case 6: return Connectivity::Faces;
    case 18: return Connectivity::Edges;
    case 26: return Connectivity::Corners;
    default: fail(ErrorKind::InvalidArgument, "connectivity must be 6, 18 or 26, got " + std::to_string(n));
    }
}

struct LesionComponents {
    Dims dims{1, 1, 1};
    /// 0 = background, 1..count = component id.
    std::vector<std::uint32_t> labels;
    std::size_t count = 0;
    /// component_voxel_counts[k - 1] is the size of component k.
    std::vector<std::size_t> component_voxel_counts;
};

namespace detail {

struct Offset {
    int dx, dy, dz;
};

/// Neighbour offsets that precede the current voxel in raster order.
inline std::vector<Offset> backward_neighbours(Connectivity conn) {
    std::vector<Offset> out;
    for (int dz = -1; dz <= 0; ++dz)
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
                if (dz == 0 && (dy > 0 || (dy == 0 && dx >= 0))) continue;
                int manhattan = std::abs(dx) + std::abs(dy) + std::abs(dz);
                if (conn == Connectivity::Faces && manhattan > 1) continue;
                if (conn == Connectivity::Edges && manhattan > 2) continue;
                out.push_back({dx, dy, dz});
            }
    return out;
}

class DisjointSet {
public:
    std::uint32_t make() {
        parent_.push_back(static_cast<std::uint32_t>(parent_.size()));
        return parent_.back();
    }

    std::uint32_t find(std::uint32_t x) {
        while (parent_[x] != x) {
            parent_[x] = parent_[parent_[x]];
            x = parent_[x];
        }
        return x;
    }

    void unite(std::uint32_t a, std::uint32_t b) {
        a = find(a);
        b = find(b);
        if (a == b) return;
        if (a < b) parent_[b] = a;
        else parent_[a] = b;
    }

private:
    std::vector<std::uint32_t> parent_;
};

} // namespace detail

inline LesionComponents connected_components(const BinaryMask& mask,
                                             Connectivity conn = Connectivity::Corners) {
    const auto [nx, ny, nz] = mask.dims();
    const auto neighbours = detail::backward_neighbours(conn);

    LesionComponents out;
    out.dims = mask.dims();
    out.labels.assign(mask.size(), 0);

    // Provisional labels start at 1; slot 0 of the set is unused.
    detail::DisjointSet sets;
    sets.make();
    std::vector<std::uint32_t>& lab = out.labels;

    for (std::size_t z = 0; z < nz; ++z)
        for (std::size_t y = 0; y < ny; ++y)
            for (std::size_t x = 0; x < nx; ++x) {
                const std::size_t i = x + nx * (y + ny * z);
                if (!mask[i]) continue;
                std::uint32_t current = 0;
                for (const auto& o : neighbours) {
                    const auto xx = static_cast<std::ptrdiff_t>(x) + o.dx;
                    const auto yy = static_cast<std::ptrdiff_t>(y) + o.dy;
                    const auto zz = static_cast<std::ptrdiff_t>(z) + o.dz;
                    if (xx < 0 || yy < 0 || zz < 0 || xx >= static_cast<std::ptrdiff_t>(nx) ||
                        yy >= static_cast<std::ptrdiff_t>(ny))
                        continue;
                    const std::size_t j = static_cast<std::size_t>(xx) +
                                          nx * (static_cast<std::size_t>(yy) +
                                                ny * static_cast<std::size_t>(zz));
                    const std::uint32_t other = lab[j];
                    if (other == 0) continue;
                    if (current == 0) current = other;
                    else sets.unite(current, other);
                }
                lab[i] = current != 0 ? current : sets.make();
            }

    // Final labels in order of each component's first voxel.
    std::vector<std::uint32_t> remap;
    for (auto& l : lab) {
        if (l == 0) continue;
        const std::uint32_t root = sets.find(l);
        if (root >= remap.size()) remap.resize(root + 1, 0);
        if (remap[root] == 0) {
            remap[root] = static_cast<std::uint32_t>(++out.count);
            out.component_voxel_counts.push_back(0);
        }
        l = remap[root];
        ++out.component_voxel_counts[l - 1];
    }
    return out;
}

/// Mask of the largest component; ties go to the earliest in scan order.
inline BinaryMask largest_component(const BinaryMask& mask,
                                    Connectivity conn = Connectivity::Corners) {
    const auto cc = connected_components(mask, conn);
    std::vector<std::uint8_t> data(mask.size(), 0);
    if (cc.count > 0) {
        std::size_t best = 0;
        for (std::size_t k = 1; k < cc.count; ++k)
            if (cc.component_voxel_counts[k] > cc.component_voxel_counts[best]) best = k;
        const auto keep = static_cast<std::uint32_t>(best + 1);
        for (std::size_t i = 0; i < data.size(); ++i) data[i] = cc.labels[i] == keep ? 1 : 0;
    }
    return BinaryMask(mask.geometry(), std::move(data));
}

} // namespace isles

#endif
