#ifndef ISLES_SKULLSTRIP_HPP
#define ISLES_SKULLSTRIP_HPP

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <limits>
#include <string>
#include <string_view>
#include <vector>

#include "isles/components.hpp"
#include "isles/error.hpp"
#include "isles/nifti.hpp"
#include "isles/preprocess.hpp"
#include "isles/process.hpp"
#include "isles/volume.hpp"

namespace isles::skullstrip {

inline constexpr std::string_view input_placeholder = "{input}";
inline constexpr std::string_view output_placeholder = "{output}";

/// External brain-extraction command. Arguments may embed {input} and
/// {output}; each must appear exactly once across the arguments.
struct StripperCommand {
    std::string executable;
    std::vector<std::string> arguments;
    double timeout_s = 600.0;

    /// Splits a command line on whitespace; double quotes group a token.
    static StripperCommand parse(std::string_view line, double timeout_s = 600.0) {
        std::vector<std::string> tokens;
        std::string cur;
        bool quoted = false, have = false;
        for (char c : line) {
            if (c == '"') {
                quoted = !quoted;
                have = true;
            } else if (!quoted && (c == ' ' || c == '\t' || c == '\n')) {
                if (have) tokens.push_back(std::move(cur));
                cur.clear();
                have = false;
            } else {
                cur.push_back(c);
                have = true;
            }
        }
        if (quoted) fail(ErrorKind::InvalidArgument, "unbalanced quote in stripper command");
        if (have) tokens.push_back(std::move(cur));
        if (tokens.empty()) fail(ErrorKind::InvalidArgument, "empty stripper command");
        StripperCommand cmd{tokens.front(), {tokens.begin() + 1, tokens.end()}, timeout_s};
        cmd.validate();
        return cmd;
    }

    void validate() const {
        if (executable.empty()) fail(ErrorKind::InvalidArgument, "stripper executable is empty");
        if (!(timeout_s > 0.0)) fail(ErrorKind::InvalidArgument, "stripper timeout must be positive");
        auto occurrences = [&](std::string_view needle) {
            std::size_t n = 0;
            for (const auto& a : arguments)
                for (auto pos = a.find(needle); pos != std::string::npos;
                     pos = a.find(needle, pos + needle.size()))
                    ++n;
            return n;
        };
        if (occurrences(input_placeholder) != 1 || occurrences(output_placeholder) != 1)
            fail(ErrorKind::InvalidArgument,
                 "stripper command must contain {input} and {output} exactly once each");
    }

    std::vector<std::string> render(const std::filesystem::path& input,
                                    const std::filesystem::path& output) const {
        std::vector<std::string> argv{executable};
        for (auto a : arguments) {
            if (auto p = a.find(input_placeholder); p != std::string::npos)
                a.replace(p, input_placeholder.size(), input.string());
            if (auto p = a.find(output_placeholder); p != std::string::npos)
                a.replace(p, output_placeholder.size(), output.string());
            argv.push_back(std::move(a));
        }
        return argv;
    }

    std::string template_string() const {
        std::string s = executable;
        for (const auto& a : arguments) s += " " + a;
        return s;
    }
};

inline std::string join_command(const std::vector<std::string>& argv) {
    std::string s;
    for (const auto& a : argv) {
        if (!s.empty()) s += ' ';
        s += a.find(' ') == std::string::npos ? a : "\"" + a + "\"";
    }
    return s;
}

struct ExternalStripResult {
    BinaryMask mask;
    std::string command_line;
    std::string diagnostics;
};

/// Runs the external tool on the NCCT file and validates the mask it writes.
inline ExternalStripResult run_external_stripper_logged(const std::filesystem::path& ncct_path,
                                                        const StripperCommand& cmd) {
    cmd.validate();
    const auto header = nifti::read_header(ncct_path);
    process::TempDir tmp("isles-strip");
    const auto mask_path = tmp.path() / "mask.nii.gz";
    const auto argv = cmd.render(ncct_path, mask_path);

    ExternalStripResult out;
    out.command_line = join_command(argv);
    const auto timeout = std::chrono::milliseconds(static_cast<long long>(cmd.timeout_s * 1000.0));
    const auto result = process::run(argv, timeout, tmp.path() / "tool.log");
    out.diagnostics = result.output;

    if (result.timed_out)
        fail(ErrorKind::ToolFailure, "stripper timed out after " + std::to_string(cmd.timeout_s) +
                                         " s: " + out.command_line + "\n" + result.output);
    if (result.signaled || result.exit_code != 0)
        fail(ErrorKind::ToolFailure,
             "stripper exited with code " + std::to_string(result.exit_code) + ": " +
                 out.command_line + "\n" + result.output);
    if (!std::filesystem::exists(mask_path))
        fail(ErrorKind::ToolFailure, "stripper produced no mask file: " + out.command_line);

    VolumeGrid raw;
    try {
        raw = nifti::read_volume(mask_path);
    } catch (const Error& e) {
        fail(ErrorKind::MaskInvalid, "unreadable stripper output: " + e.detail());
    }
    if (raw.dims() != header.dims())
        fail(ErrorKind::MaskInvalid, "stripper mask dims " + dims_string(raw.dims()) +
                                         " differ from NCCT dims " + dims_string(header.dims()));
    out.mask = BinaryMask::from_volume(raw);
    return out;
}

inline BinaryMask run_external_stripper(const std::filesystem::path& ncct_path,
                                        const StripperCommand& cmd) {
    return run_external_stripper_logged(ncct_path, cmd).mask;
}

// ---------------------------------------------------------------------------
// Morphology

namespace detail {

/// Squared weighted distance transform along one line (lower envelope of
/// parabolas). `f` holds 0 at features and +inf elsewhere on input.
inline void edt_line(std::vector<double>& f, double w2, std::vector<double>& d,
                     std::vector<std::size_t>& v, std::vector<double>& z) {
    const std::size_t n = f.size();
    constexpr double inf = std::numeric_limits<double>::infinity();
    d.assign(n, inf);
    v.assign(n, 0);
    z.assign(n + 1, 0.0);
    std::size_t k = 0;
    std::size_t first = n;
    for (std::size_t q = 0; q < n; ++q)
        if (std::isfinite(f[q])) {
            first = q;
            break;
        }
    if (first == n) return;
    v[0] = first;
    z[0] = -inf;
    z[1] = inf;
    auto inter = [&](std::size_t q, std::size_t p) {
        const double dq = static_cast<double>(q), dp = static_cast<double>(p);
        return ((f[q] + w2 * dq * dq) - (f[p] + w2 * dp * dp)) / (2.0 * w2 * (dq - dp));
    };
    for (std::size_t q = first + 1; q < n; ++q) {
        if (!std::isfinite(f[q])) continue;
        double s = inter(q, v[k]);
        while (s <= z[k]) {
            --k;
            s = inter(q, v[k]);
        }
        ++k;
        v[k] = q;
        z[k] = s;
        z[k + 1] = inf;
    }
    k = 0;
    for (std::size_t q = 0; q < n; ++q) {
        while (z[k + 1] < static_cast<double>(q)) ++k;
        const double diff = static_cast<double>(q) - static_cast<double>(v[k]);
        d[q] = w2 * diff * diff + f[v[k]];
    }
}

/// Squared distance, with per-axis weights, from every voxel to the nearest
/// voxel where `feature` is true.
inline std::vector<double> weighted_sq_edt(const std::vector<std::uint8_t>& feature, const Dims& dims,
                                           const std::array<double, 3>& weights) {
    constexpr double inf = std::numeric_limits<double>::infinity();
    const auto [nx, ny, nz] = dims;
    std::vector<double> g(feature.size());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = feature[i] ? 0.0 : inf;

    std::vector<double> line, out, z;
    std::vector<std::size_t> v;
    const std::size_t stride[3] = {1, nx, nx * ny};
    for (int axis = 0; axis < 3; ++axis) {
        const std::size_t len = dims[axis];
        const double w2 = weights[axis] * weights[axis];
        const std::size_t a = axis == 0 ? 1 : 0, b = axis == 2 ? 1 : 2;
        for (std::size_t j = 0; j < dims[b]; ++j)
            for (std::size_t i = 0; i < dims[a]; ++i) {
                const std::size_t base = i * stride[a] + j * stride[b];
                line.resize(len);
                for (std::size_t t = 0; t < len; ++t) line[t] = g[base + t * stride[axis]];
                edt_line(line, w2, out, v, z);
                for (std::size_t t = 0; t < len; ++t) g[base + t * stride[axis]] = out[t];
            }
    }
    return g;
}

} // namespace detail

/// Per-axis voxel radii of a ball of `radius_mm`: floor(radius / spacing),
/// at least 1.
inline std::array<std::size_t, 3> ball_radii(double radius_mm, const Spacing& spacing) {
    std::array<std::size_t, 3> r{};
    for (int i = 0; i < 3; ++i)
        r[i] = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(radius_mm / spacing[i])));
    return r;
}

/// Morphological closing with the ellipsoid {(dx/rx)^2 + (dy/ry)^2 + (dz/rz)^2 <= 1}.
/// The grid is padded by the radius so the result always contains the input.
inline BinaryMask binary_closing(const BinaryMask& mask, const std::array<std::size_t, 3>& radii) {
    const Dims& d = mask.dims();
    const Dims pd{d[0] + 2 * radii[0], d[1] + 2 * radii[1], d[2] + 2 * radii[2]};
    const std::array<double, 3> w{1.0 / static_cast<double>(radii[0]),
                                  1.0 / static_cast<double>(radii[1]),
                                  1.0 / static_cast<double>(radii[2])};
    constexpr double tol = 1e-9;

    std::vector<std::uint8_t> padded(pd[0] * pd[1] * pd[2], 0);
    for (std::size_t z = 0; z < d[2]; ++z)
        for (std::size_t y = 0; y < d[1]; ++y)
            for (std::size_t x = 0; x < d[0]; ++x)
                padded[(x + radii[0]) + pd[0] * ((y + radii[1]) + pd[1] * (z + radii[2]))] =
                    mask.at(x, y, z) ? 1 : 0;

    const auto to_fg = detail::weighted_sq_edt(padded, pd, w);
    std::vector<std::uint8_t> background(padded.size());
    for (std::size_t i = 0; i < padded.size(); ++i) background[i] = to_fg[i] <= 1.0 + tol ? 0 : 1;

    const auto to_bg = detail::weighted_sq_edt(background, pd, w);
    std::vector<std::uint8_t> out(mask.size(), 0);
    for (std::size_t z = 0; z < d[2]; ++z)
        for (std::size_t y = 0; y < d[1]; ++y)
            for (std::size_t x = 0; x < d[0]; ++x) {
                const std::size_t pi =
                    (x + radii[0]) + pd[0] * ((y + radii[1]) + pd[1] * (z + radii[2]));
                out[mask.geometry().index(x, y, z)] = to_bg[pi] > 1.0 + tol ? 1 : 0;
            }
    return BinaryMask(mask.geometry(), std::move(out));
}

struct FallbackParams {
    double hu_low = 0.0;
    double hu_high = 100.0;
    double closing_radius_mm = 2.0;
};

/// Deterministic brain mask: threshold to [hu_low, hu_high], keep the largest
/// 26-connected component, then close with a ball of closing_radius_mm.
/// A radius of 0 skips the closing.
inline BinaryMask fallback_strip(const VolumeGrid& ncct, double hu_low = 0.0, double hu_high = 100.0,
                                 double closing_radius_mm = 2.0) {
    if (!(hu_low < hu_high)) fail(ErrorKind::InvalidArgument, "fallback requires hu_low < hu_high");
    if (!(closing_radius_mm >= 0.0))
        fail(ErrorKind::InvalidArgument, "closing radius must be non-negative");

    std::vector<std::uint8_t> in_range(ncct.size());
    std::size_t hits = 0;
    for (std::size_t i = 0; i < ncct.size(); ++i) {
        in_range[i] = ncct[i] >= hu_low && ncct[i] <= hu_high ? 1 : 0;
        hits += in_range[i];
    }
    if (hits == 0)
        fail(ErrorKind::DegenerateInput, "no voxel in [" + std::to_string(hu_low) + ", " +
                                             std::to_string(hu_high) + "] HU");

    BinaryMask mask = largest_component(BinaryMask(ncct.geometry(), std::move(in_range)));
    if (closing_radius_mm > 0.0) {
        mask = binary_closing(mask, ball_radii(closing_radius_mm, ncct.spacing()));
        mask = largest_component(mask);
    }
    return mask;
}

inline BinaryMask fallback_strip(const VolumeGrid& ncct, const FallbackParams& p) {
    return fallback_strip(ncct, p.hu_low, p.hu_high, p.closing_radius_mm);
}

/// Applies the brain mask to every co-registered modality.
inline ModalityVolumes propagate_mask(const BinaryMask& mask, const ModalityVolumes& volumes) {
    for (const auto& [m, v] : volumes)
        if (v.dims() != mask.dims())
            fail(ErrorKind::DimensionMismatch, std::string(modality_name(m)) + " dims " +
                                                   dims_string(v.dims()) + " differ from mask dims " +
                                                   dims_string(mask.dims()));
    ModalityVolumes out;
    for (const auto& [m, v] : volumes) out.emplace(m, apply_mask(v, mask));
    return out;
}

} // namespace isles::skullstrip

#endif
