#ifndef ISLES_TEST_DATASET_FIXTURE_HPP
#define ISLES_TEST_DATASET_FIXTURE_HPP

// Writes a small synthetic dataset in the filename-token layout:
//   root/sub-XXX/ses-01/sub-XXX_ses-01_<token>.nii.gz

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "isles/nifti.hpp"
#include "isles/preprocess.hpp"

namespace isles::testing {

inline constexpr Dims fixture_dims{24, 20, 12};

inline std::string fixture_token(ModalityKind m) {
    std::string s(modality_name(m));
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

inline std::filesystem::path fixture_path(const std::filesystem::path& root, const std::string& id,
                                          const std::string& token) {
    return root / id / "ses-01" / (id + "_ses-01_" + token + ".nii.gz");
}

/// Head-like NCCT: varied brain tissue (15..55 HU) in a 900 HU skull, air outside.
inline VolumeGrid fixture_ncct(std::mt19937_64& rng, const Dims& d = fixture_dims) {
    Geometry g(d, {1.0, 1.0, 2.0});
    std::uniform_int_distribution<int> tissue(15, 55);
    std::vector<double> v(g.voxel_count(), -1000.0);
    const double cx = (d[0] - 1) / 2.0, cy = (d[1] - 1) / 2.0, cz = (d[2] - 1) / 2.0;
    for (std::size_t z = 0; z < d[2]; ++z)
        for (std::size_t y = 0; y < d[1]; ++y)
            for (std::size_t x = 0; x < d[0]; ++x) {
                const double ex = (x - cx) / (d[0] / 2.0 - 0.5), ey = (y - cy) / (d[1] / 2.0 - 0.5),
                             ez = (z - cz) / (d[2] / 2.0 - 0.5);
                const double r = ex * ex + ey * ey + ez * ez;
                if (r <= 0.55) v[g.index(x, y, z)] = tissue(rng);
                else if (r <= 1.0) v[g.index(x, y, z)] = 900.0;
            }
    return VolumeGrid(g, std::move(v), "HU");
}

inline VolumeGrid fixture_modality(std::mt19937_64& rng, ModalityKind m, const Dims& d = fixture_dims) {
    Geometry g(d, {1.0, 1.0, 2.0});
    double hi = 1.0;
    switch (m) {
    case ModalityKind::CTA: hi = 250; break;
    case ModalityKind::CBF: hi = 80; break;
    case ModalityKind::CBV: hi = 15; break;
    case ModalityKind::MTT: hi = 30; break;
    case ModalityKind::TMAX: hi = 15; break;
    default: break;
    }
    std::uniform_int_distribution<int> u(-10, static_cast<int>(hi * 4));
    std::vector<double> v(g.voxel_count());
    for (auto& x : v) x = m == ModalityKind::CTA ? u(rng) : u(rng) / 4.0;
    return VolumeGrid(g, std::move(v), std::string(modality_unit(m)));
}

/// Writes `n` complete subjects; returns their ids.
inline std::vector<std::string> write_fixture_dataset(const std::filesystem::path& root, std::size_t n,
                                                      std::uint64_t seed = 1) {
    std::vector<std::string> ids;
    for (std::size_t s = 0; s < n; ++s) {
        std::mt19937_64 rng(seed * 1000 + s);
        const std::string id = "sub-" + std::string(s < 9 ? "00" : "0") + std::to_string(s + 1);
        ids.push_back(id);
        std::filesystem::create_directories(root / id / "ses-01");
        nifti::write_volume(fixture_ncct(rng), fixture_path(root, id, "ncct"), nifti::Datatype::Int16);
        for (auto m : all_modalities) {
            if (m == ModalityKind::NCCT) continue;
            const auto type = m == ModalityKind::CTA ? nifti::Datatype::Int16 : nifti::Datatype::Float32;
            nifti::write_volume(fixture_modality(rng, m), fixture_path(root, id, fixture_token(m)), type);
        }
        Geometry g(fixture_dims, {1.0, 1.0, 2.0});
        std::vector<double> lesion(g.voxel_count(), 0.0);
        for (std::size_t z = 5; z < 7; ++z)
            for (std::size_t y = 8; y < 11; ++y)
                for (std::size_t x = 10 + s; x < 13 + s; ++x) lesion[g.index(x, y, z)] = 1.0;
        nifti::write_volume(VolumeGrid(g, lesion), fixture_path(root, id, "lesion-msk"),
                            nifti::Datatype::UInt8);
    }
    return ids;
}

} // namespace isles::testing

#endif
