#ifndef ISLES_METRICS_HPP
#define ISLES_METRICS_HPP

// Segmentation scores: voxel Dice, absolute volume difference (mL),
// lesion-wise F1 over connected components, and absolute lesion count
// difference, plus mean (std) aggregation over cases.

#include <cmath>
#include <cstddef>
#include <cstdio>
#include <cstdlib>
#include <string>
#include <vector>

#include "isles/components.hpp"
#include "isles/error.hpp"
#include "isles/volume.hpp"

namespace isles::metrics {

struct MetricsReport {
    double dice = 0.0;
    double avd_ml = 0.0;
    double lesion_f1 = 0.0;
    std::size_t alcd = 0;
};

struct LesionMatching {
    Connectivity connectivity = Connectivity::Corners;
    /// A component counts as matched when its overlap with the other mask
    /// is at least one voxel and overlap/size >= this fraction.
    double min_overlap_fraction = 0.0;
};

inline void require_pair(const BinaryMask& pred, const BinaryMask& gt) {
    require_same_dims(pred.dims(), gt.dims(), "prediction vs ground truth");
}

/// 2|P∩G| / (|P|+|G|); 1.0 when both masks are empty.
inline double dice(const BinaryMask& pred, const BinaryMask& gt) {
    require_pair(pred, gt);
    std::size_t p = 0, g = 0, both = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        p += pred[i];
        g += gt[i];
        both += pred[i] && gt[i];
    }
    if (p + g == 0) return 1.0;
    return 2.0 * static_cast<double>(both) / static_cast<double>(p + g);
}

inline double volume_ml(const BinaryMask& mask) {
    return static_cast<double>(mask.count()) * mask.geometry().voxel_volume_mm3() / 1000.0;
}

inline double avd(const BinaryMask& pred, const BinaryMask& gt) {
    require_pair(pred, gt);
    if (pred.spacing() != gt.spacing())
        fail(ErrorKind::DimensionMismatch, "prediction and ground truth voxel spacing differ");
    return std::fabs(volume_ml(pred) - volume_ml(gt));
}

namespace detail {

/// Number of components of `cc` that overlap `other` enough to count as matched.
inline std::size_t matched_components(const LesionComponents& cc, const BinaryMask& other,
                                      double min_fraction) {
    std::vector<std::size_t> overlap(cc.count, 0);
    for (std::size_t i = 0; i < cc.labels.size(); ++i)
        if (cc.labels[i] != 0 && other[i]) ++overlap[cc.labels[i] - 1];
    std::size_t matched = 0;
    for (std::size_t k = 0; k < cc.count; ++k) {
        if (overlap[k] == 0) continue;
        const double frac =
            static_cast<double>(overlap[k]) / static_cast<double>(cc.component_voxel_counts[k]);
        if (frac >= min_fraction) ++matched;
    }
    return matched;
}

inline double f1_from_components(const LesionComponents& pc, const LesionComponents& gc,
                                 const BinaryMask& pred, const BinaryMask& gt,
                                 double min_fraction) {
    if (pc.count == 0 && gc.count == 0) return 1.0;
    if (pc.count == 0 || gc.count == 0) return 0.0;
    const double precision = static_cast<double>(matched_components(pc, gt, min_fraction)) /
                             static_cast<double>(pc.count);
    const double recall = static_cast<double>(matched_components(gc, pred, min_fraction)) /
                          static_cast<double>(gc.count);
    if (precision + recall == 0.0) return 0.0;
    return 2.0 * precision * recall / (precision + recall);
}

} // namespace detail

inline double lesion_f1(const BinaryMask& pred, const BinaryMask& gt,
                        const LesionMatching& matching = {}) {
    require_pair(pred, gt);
    const auto pc = connected_components(pred, matching.connectivity);
    const auto gc = connected_components(gt, matching.connectivity);
    return detail::f1_from_components(pc, gc, pred, gt, matching.min_overlap_fraction);
}

inline double lesion_f1(const BinaryMask& pred, const BinaryMask& gt, Connectivity conn) {
    return lesion_f1(pred, gt, LesionMatching{conn, 0.0});
}

inline std::size_t alcd(const BinaryMask& pred, const BinaryMask& gt,
                        Connectivity conn = Connectivity::Corners) {
    require_pair(pred, gt);
    const auto np = connected_components(pred, conn).count;
    const auto ng = connected_components(gt, conn).count;
    return np > ng ? np - ng : ng - np;
}

/// All four scores, labeling each mask once.
inline MetricsReport evaluate_case(const BinaryMask& pred, const BinaryMask& gt,
                                   const LesionMatching& matching = {}) {
    require_pair(pred, gt);
    const auto pc = connected_components(pred, matching.connectivity);
    const auto gc = connected_components(gt, matching.connectivity);
    MetricsReport r;
    r.dice = dice(pred, gt);
    r.avd_ml = avd(pred, gt);
    r.lesion_f1 = detail::f1_from_components(pc, gc, pred, gt, matching.min_overlap_fraction);
    r.alcd = pc.count > gc.count ? pc.count - gc.count : gc.count - pc.count;
    return r;
}

enum class StdKind { Population, Sample };

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;
};

struct AggregateReport {
    MeanStd dice;
    MeanStd avd_ml;
    MeanStd lesion_f1;
    MeanStd alcd;
    std::size_t case_count = 0;
};

inline MeanStd mean_std(const std::vector<double>& values, StdKind kind = StdKind::Population) {
    if (values.empty()) fail(ErrorKind::EmptyInput, "no values to aggregate");
    const double n = static_cast<double>(values.size());
    double sum = 0.0;
    for (double v : values) sum += v;
    const double mean = sum / n;
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    double denom = n;
    if (kind == StdKind::Sample) denom = values.size() > 1 ? n - 1.0 : 1.0;
    return {mean, std::sqrt(ss / denom)};
}

inline AggregateReport aggregate(const std::vector<MetricsReport>& reports,
                                 StdKind kind = StdKind::Population) {
    if (reports.empty()) fail(ErrorKind::EmptyInput, "no metric reports to aggregate");
    std::vector<double> d, a, f, c;
    for (const auto& r : reports) {
        d.push_back(r.dice);
        a.push_back(r.avd_ml);
        f.push_back(r.lesion_f1);
        c.push_back(static_cast<double>(r.alcd));
    }
    AggregateReport out;
    out.dice = mean_std(d, kind);
    out.avd_ml = mean_std(a, kind);
    out.lesion_f1 = mean_std(f, kind);
    out.alcd = mean_std(c, kind);
    out.case_count = reports.size();
    return out;
}

/// "mean (std)" with two decimals, e.g. "28.50 (21.27)". `scale` is 100 for
/// percent display of fractions.
inline std::string format_mean_std(const MeanStd& m, double scale = 1.0) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f (%.2f)", m.mean * scale, m.std * scale);
    return buf;
}

/// Summary block laid out like a leaderboard row: header line then values.
inline std::string render_summary(const AggregateReport& agg, bool percent) {
    const double scale = percent ? 100.0 : 1.0;
    std::string out;
    out += percent ? "cases\tDice (%)\tAVD (mL)\tF1 (%)\tALCD\n" : "cases\tDice\tAVD (mL)\tF1\tALCD\n";
    out += std::to_string(agg.case_count) + "\t" + format_mean_std(agg.dice, scale) + "\t" +
           format_mean_std(agg.avd_ml) + "\t" + format_mean_std(agg.lesion_f1, scale) + "\t" +
           format_mean_std(agg.alcd) + "\n";
    return out;
}

} // namespace isles::metrics

#endif
