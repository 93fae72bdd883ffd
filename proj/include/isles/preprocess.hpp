#ifndef ISLES_PREPROCESS_HPP
#define ISLES_PREPROCESS_HPP

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "isles/error.hpp"
#include "isles/volume.hpp"

namespace isles {

enum class ModalityKind { NCCT, CTA, CBF, CBV, MTT, TMAX };

inline constexpr std::array<ModalityKind, 6> all_modalities{
    ModalityKind::NCCT, ModalityKind::CTA, ModalityKind::CBF,
    ModalityKind::CBV,  ModalityKind::MTT, ModalityKind::TMAX};

inline constexpr std::string_view modality_name(ModalityKind m) noexcept {
    switch (m) {
    case ModalityKind::NCCT: return "NCCT";
    case ModalityKind::CTA: return "CTA";
    case ModalityKind::CBF: return "CBF";
    case ModalityKind::CBV: return "CBV";
    case ModalityKind::MTT: return "MTT";
    case ModalityKind::TMAX: return "TMAX";
    }
    return "?";
}

inline constexpr std::string_view modality_unit(ModalityKind m) noexcept {
    switch (m) {
    case ModalityKind::NCCT:
    case ModalityKind::CTA: return "HU";
    case ModalityKind::CBF: return "mL/100g/min";
    case ModalityKind::CBV: return "mL/100g";
    case ModalityKind::MTT:
    case ModalityKind::TMAX: return "s";
    }
    return "";
}

inline std::optional<ModalityKind> parse_modality(std::string_view name) {
    std::string upper(name);
    std::transform(upper.begin(), upper.end(), upper.begin(),
                   [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
    for (auto m : all_modalities)
        if (modality_name(m) == upper) return m;
    return std::nullopt;
}

struct WindowSpec {
    double lower = 0.0;
    double upper = 1.0;

    static WindowSpec make(double lower, double upper) {
        if (!std::isfinite(lower) || !std::isfinite(upper) || !(lower < upper))
            fail(ErrorKind::InvalidArgument, "window requires finite lower < upper, got (" +
                                                 std::to_string(lower) + ", " +
                                                 std::to_string(upper) + ")");
        return {lower, upper};
    }

    bool contains(double v) const noexcept { return v >= lower && v <= upper; }

    friend bool operator==(const WindowSpec&, const WindowSpec&) = default;
};

/// Display windows used for the final submission. NCCT has none.
inline constexpr std::optional<WindowSpec> default_window(ModalityKind m) noexcept {
    switch (m) {
    case ModalityKind::NCCT: return std::nullopt;
    case ModalityKind::CTA: return WindowSpec{0.0, 90.0};
    case ModalityKind::CBF: return WindowSpec{0.0, 35.0};
    case ModalityKind::CBV: return WindowSpec{0.0, 10.0};
    case ModalityKind::MTT: return WindowSpec{0.0, 20.0};
    case ModalityKind::TMAX: return WindowSpec{0.0, 7.0};
    }
    return std::nullopt;
}

using WindowOverrides = std::map<ModalityKind, WindowSpec>;

inline std::optional<WindowSpec> window_for(ModalityKind m, const WindowOverrides& overrides) {
    if (auto it = overrides.find(m); it != overrides.end()) return it->second;
    return default_window(m);
}

enum class ThresholdDirection { Below, Above };

struct ThresholdRule {
    double value = 0.0;
    ThresholdDirection direction = ThresholdDirection::Below;

    bool flags(double v) const noexcept {
        return direction == ThresholdDirection::Below ? v < value : v > value;
    }
};

/// Clinical reference thresholds for perfusion maps. MTT's criterion is
/// relative to the contralateral hemisphere and is kept as a note only.
struct ClinicalThresholds {
    ThresholdRule cbf{17.0, ThresholdDirection::Below};
    ThresholdRule cbv{2.0, ThresholdDirection::Above};
    ThresholdRule tmax{6.0, ThresholdDirection::Above};
    double mtt_relative_percent = 145.0;
    std::string mtt_note = "MTT > 145% of the contralateral baseline (relative; not automated)";

    std::optional<ThresholdRule> rule_for(ModalityKind m) const noexcept {
        switch (m) {
        case ModalityKind::CBF: return cbf;
        case ModalityKind::CBV: return cbv;
        case ModalityKind::TMAX: return tmax;
        default: return std::nullopt;
        }
    }
};

// ---------------------------------------------------------------------------
// Intensity maps

inline VolumeGrid apply_window(const VolumeGrid& volume, const WindowSpec& window) {
    const WindowSpec w = WindowSpec::make(window.lower, window.upper);
    return volume.map([w](double v) { return std::clamp(v, w.lower, w.upper); });
}

namespace detail {

inline std::vector<double> in_scope_values(const VolumeGrid& volume, const BinaryMask* mask) {
    if (mask == nullptr) return {volume.data().begin(), volume.data().end()};
    require_same_dims(volume.dims(), mask->dims(), "mask");
    std::vector<double> out;
    out.reserve(mask->count());
    for (std::size_t i = 0; i < volume.size(); ++i)
        if ((*mask)[i]) out.push_back(volume[i]);
    return out;
}

} // namespace detail

/// Nearest-rank percentile of ascending `sorted`: the value at rank
/// ceil(p/100 * n), with rank clamped to [1, n].
inline double nearest_rank(std::span<const double> sorted, double percent) {
    if (sorted.empty()) fail(ErrorKind::DegenerateInput, "percentile of an empty set");
    const double n = static_cast<double>(sorted.size());
    auto rank = static_cast<std::size_t>(std::ceil(percent / 100.0 * n));
    rank = std::clamp<std::size_t>(rank, 1, sorted.size());
    return sorted[rank - 1];
}

/// Clamps every voxel to the [p_low, p_high] nearest-rank percentiles of the
/// in-scope voxels (mask, or whole volume when mask is null).
inline VolumeGrid percentile_clip(const VolumeGrid& volume, double p_low, double p_high,
                                  const BinaryMask* mask = nullptr) {
    if (!(p_low >= 0.0 && p_low < p_high && p_high <= 100.0))
        fail(ErrorKind::InvalidArgument, "percentiles must satisfy 0 <= low < high <= 100");
    auto values = detail::in_scope_values(volume, mask);
    if (values.empty()) fail(ErrorKind::DegenerateInput, "mask selects zero voxels");
    std::sort(values.begin(), values.end());
    const double lo = nearest_rank(values, p_low);
    const double hi = nearest_rank(values, p_high);
    return volume.map([lo, hi](double v) { return std::clamp(v, lo, hi); });
}

/// Standardizes in-scope voxels to mean 0, population std 1; voxels outside
/// the mask become 0.
inline VolumeGrid zscore_normalize(const VolumeGrid& volume, const BinaryMask* mask = nullptr) {
    const auto values = detail::in_scope_values(volume, mask);
    if (values.size() < 2) fail(ErrorKind::DegenerateInput, "z-score needs at least 2 voxels");
    const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
    if (*mn == *mx) fail(ErrorKind::DegenerateInput, "z-score of a constant region");

    const double n = static_cast<double>(values.size());
    long double sum = 0.0L;
    for (double v : values) sum += v;
    const double mean = static_cast<double>(sum / n);
    long double ss = 0.0L;
    for (double v : values) ss += static_cast<long double>(v - mean) * (v - mean);
    const double sd = static_cast<double>(std::sqrt(ss / n));
    if (!(sd > 0.0)) fail(ErrorKind::DegenerateInput, "z-score of a constant region");

    std::vector<double> out(volume.size(), 0.0);
    for (std::size_t i = 0; i < out.size(); ++i)
        if (mask == nullptr || (*mask)[i]) out[i] = (volume[i] - mean) / sd;
    return volume.with_data(std::move(out));
}

/// Global histogram equalization. In-scope intensities are binned over
/// [min, max]; each voxel maps to (cdf(bin) - cdf(first bin)) / (n - cdf(first bin)),
/// so the output spans [0, 1]. Voxels outside the mask become 0.
inline VolumeGrid histogram_equalize(const VolumeGrid& volume, std::size_t bins = 256,
                                     const BinaryMask* mask = nullptr) {
    if (bins < 2) fail(ErrorKind::InvalidArgument, "histogram needs at least 2 bins");
    const auto values = detail::in_scope_values(volume, mask);
    if (values.empty()) fail(ErrorKind::DegenerateInput, "mask selects zero voxels");
    const auto [mn_it, mx_it] = std::minmax_element(values.begin(), values.end());
    const double lo = *mn_it, hi = *mx_it;
    if (lo == hi) fail(ErrorKind::DegenerateInput, "histogram equalization of a constant region");

    const double width = hi - lo;
    auto bin_of = [&](double v) {
        const double t = (std::clamp(v, lo, hi) - lo) / width * static_cast<double>(bins);
        return std::min(static_cast<std::size_t>(t), bins - 1);
    };
    std::vector<std::size_t> cdf(bins, 0);
    for (double v : values) ++cdf[bin_of(v)];
    for (std::size_t k = 1; k < bins; ++k) cdf[k] += cdf[k - 1];
    const double first = static_cast<double>(cdf[bin_of(lo)]);
    const double denom = static_cast<double>(values.size()) - first;

    std::vector<double> out(volume.size(), 0.0);
    for (std::size_t i = 0; i < out.size(); ++i)
        if (mask == nullptr || (*mask)[i])
            out[i] = (static_cast<double>(cdf[bin_of(volume[i])]) - first) / denom;
    return volume.with_data(std::move(out));
}

inline BinaryMask make_threshold_map(const VolumeGrid& volume, ModalityKind modality,
                                     const ClinicalThresholds& thresholds = {}) {
    const auto rule = thresholds.rule_for(modality);
    if (!rule)
        fail(ErrorKind::UnsupportedModality,
             std::string(modality_name(modality)) + " has no absolute clinical threshold");
    std::vector<std::uint8_t> data(volume.size());
    for (std::size_t i = 0; i < volume.size(); ++i) data[i] = rule->flags(volume[i]) ? 1 : 0;
    return BinaryMask(volume.geometry(), std::move(data));
}

// ---------------------------------------------------------------------------
// Presets

enum class PresetName { ZScoreOnly, WindowOnly, WindowPlusEqualize, WindowPlusZScore };

inline constexpr std::array<PresetName, 4> all_presets{
    PresetName::ZScoreOnly, PresetName::WindowOnly, PresetName::WindowPlusEqualize,
    PresetName::WindowPlusZScore};

inline constexpr std::string_view preset_name(PresetName p) noexcept {
    switch (p) {
    case PresetName::ZScoreOnly: return "ZSCORE_ONLY";
    case PresetName::WindowOnly: return "WINDOW_ONLY";
    case PresetName::WindowPlusEqualize: return "WINDOW_PLUS_EQUALIZE";
    case PresetName::WindowPlusZScore: return "WINDOW_PLUS_ZSCORE";
    }
    return "?";
}

inline std::optional<PresetName> parse_preset(std::string_view name) {
    for (auto p : all_presets)
        if (preset_name(p) == name) return p;
    return std::nullopt;
}

struct PreprocessStep {
    enum class Kind { PercentileClip, Window, ZScore, Equalize };
    Kind kind = Kind::Window;
    double p_low = 1.0;
    double p_high = 99.0;
    std::size_t bins = 256;
};

struct PreprocessPreset {
    PresetName name = PresetName::WindowOnly;
    std::vector<PreprocessStep> steps;

    static PreprocessPreset make(PresetName name, std::size_t equalize_bins = 256) {
        using K = PreprocessStep::Kind;
        PreprocessPreset p{name, {}};
        switch (name) {
        case PresetName::ZScoreOnly:
            p.steps = {{K::PercentileClip, 1.0, 99.0, 0}, {K::ZScore}};
            break;
        case PresetName::WindowOnly:
            p.steps = {{K::Window}};
            break;
        case PresetName::WindowPlusEqualize:
            p.steps = {{K::Window}, {K::Equalize, 0, 0, equalize_bins}};
            break;
        case PresetName::WindowPlusZScore:
            p.steps = {{K::Window}, {K::ZScore}};
            break;
        }
        return p;
    }
};

using ModalityVolumes = std::map<ModalityKind, VolumeGrid>;

/// Runs one modality through the preset's steps. Windowing uses the
/// override or default window; a modality without either is left as is.
inline VolumeGrid run_steps(const VolumeGrid& volume, ModalityKind modality,
                            const PreprocessPreset& preset, const BinaryMask& brain_mask,
                            const WindowOverrides& overrides = {}) {
    using K = PreprocessStep::Kind;
    VolumeGrid v = apply_mask(volume, brain_mask);
    for (const auto& step : preset.steps) {
        switch (step.kind) {
        case K::PercentileClip: v = percentile_clip(v, step.p_low, step.p_high, &brain_mask); break;
        case K::Window:
            if (auto w = window_for(modality, overrides)) v = apply_window(v, *w);
            break;
        case K::ZScore: v = zscore_normalize(v, &brain_mask); break;
        case K::Equalize: v = histogram_equalize(v, step.bins, &brain_mask); break;
        }
    }
    return v;
}

inline ModalityVolumes run_preset(const ModalityVolumes& volumes, const PreprocessPreset& preset,
                                  const BinaryMask& brain_mask,
                                  const WindowOverrides& overrides = {}) {
    for (const auto& [m, v] : volumes)
        require_same_dims(v.dims(), brain_mask.dims(),
                          std::string(modality_name(m)) + " vs brain mask");
    ModalityVolumes out;
    for (const auto& [m, v] : volumes) {
        try {
            out.emplace(m, run_steps(v, m, preset, brain_mask, overrides));
        } catch (const Error& e) {
            throw e.with_context(modality_name(m));
        }
    }
    return out;
}

} // namespace isles

#endif
