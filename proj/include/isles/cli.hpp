#ifndef ISLES_CLI_HPP
#define ISLES_CLI_HPP

// Subcommands: strip, preprocess, evaluate, split, inspect.
// Exit codes: 0 success, 1 per-item failures, 2 usage or config error.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "isles/components.hpp"
#include "isles/error.hpp"
#include "isles/metrics.hpp"
#include "isles/nifti.hpp"
#include "isles/pipeline.hpp"
#include "isles/preprocess.hpp"
#include "isles/skullstrip.hpp"

namespace isles::cli {

namespace fs = std::filesystem;

inline constexpr int exit_ok = 0;
inline constexpr int exit_item_failure = 1;
inline constexpr int exit_usage = 2;

/// Environment variable holding the default external stripper template.
inline constexpr const char* stripper_cmd_env = "ISLES_STRIPPER_CMD";

namespace detail {

struct StripOptions {
    std::string input;
    std::string output;
    std::string stripper = "fallback";
    std::string stripper_cmd;
    double timeout_s = 600.0;
    double hu_low = 0.0;
    double hu_high = 100.0;
    double closing_radius_mm = 2.0;
};

struct PreprocessOptions {
    std::string config;
    std::string manifest;
    std::string preset;
    std::string stripper;
    std::string stripper_cmd;
    std::optional<std::size_t> workers;
    std::optional<std::uint64_t> seed;
};

struct EvaluateOptions {
    std::string pred_dir;
    std::string gt_dir;
    int connectivity = 26;
    double overlap_fraction = 0.0;
    bool percent = true;
    bool sample_std = false;
    std::string output;
    std::string summary;
    std::optional<std::size_t> workers;
};

struct SplitOptions {
    std::string ids;
    int k = 10;
    std::uint64_t seed = 0;
    std::string output;
    bool stratify_site = false;
};

inline std::string fmt(double v, int digits = 6) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*g", digits, v);
    return buf;
}

inline std::string stripper_template(const std::string& flag_value) {
    if (!flag_value.empty()) return flag_value;
    if (const char* env = std::getenv(stripper_cmd_env)) return env;
    return {};
}

inline int cmd_strip(const StripOptions& o, std::ostream& out, std::ostream& err) {
    if (!fs::exists(o.input)) {
        err << "error: input file not found: " << o.input << "\n";
        return exit_usage;
    }
    if (o.output.empty()) {
        err << "error: --output is required\n";
        return exit_usage;
    }
    BinaryMask mask;
    try {
        if (o.stripper == "external") {
            const auto tmpl = stripper_template(o.stripper_cmd);
            if (tmpl.empty()) {
                err << "error: external mode needs --stripper-cmd or " << stripper_cmd_env << "\n";
                return exit_usage;
            }
            skullstrip::StripperCommand cmd;
            try {
                cmd = skullstrip::StripperCommand::parse(tmpl, o.timeout_s);
            } catch (const Error& e) {
                err << "error: " << e.what() << "\n";
                return exit_usage;
            }
            auto res = skullstrip::run_external_stripper_logged(o.input, cmd);
            err << "command: " << res.command_line << "\n";
            mask = std::move(res.mask);
        } else {
            if (!(o.hu_low < o.hu_high)) {
                err << "error: --hu-low must be below --hu-high\n";
                return exit_usage;
            }
            const auto ncct = nifti::read_volume(o.input);
            mask = skullstrip::fallback_strip(ncct, o.hu_low, o.hu_high, o.closing_radius_mm);
        }
        nifti::write_volume(mask.to_volume(), o.output, nifti::Datatype::UInt8);
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return exit_item_failure;
    }
    out << "mask\t" << o.output << "\n";
    out << "mask_voxels\t" << mask.count() << "\n";
    out << "mask_ml\t" << fmt(metrics::volume_ml(mask), 10) << "\n";
    return exit_ok;
}

inline int cmd_preprocess(const PreprocessOptions& o, std::ostream& out, std::ostream& err) {
    pipeline::PipelineConfig cfg;
    try {
        cfg = pipeline::load_config(o.config);
        if (!o.preset.empty()) {
            auto p = parse_preset(o.preset);
            if (!p) fail(ErrorKind::InvalidConfig, "unknown preset '" + o.preset + "'");
            cfg.preset = *p;
        }
        if (o.workers) cfg.workers = *o.workers;
        if (o.seed) cfg.seed = *o.seed;
        const auto tmpl = stripper_template(o.stripper_cmd);
        if (!tmpl.empty() && (!cfg.stripper_command || !o.stripper_cmd.empty()))
            cfg.stripper_command = skullstrip::StripperCommand::parse(
                tmpl, cfg.stripper_command ? cfg.stripper_command->timeout_s : 600.0);
        if (o.stripper == "external") cfg.stripper_mode = pipeline::StripperMode::External;
        else if (o.stripper == "fallback") cfg.stripper_mode = pipeline::StripperMode::Fallback;
        cfg.validate();
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return exit_usage;
    }

    pipeline::RunManifest manifest;
    try {
        manifest = pipeline::run_pipeline(cfg);
        const fs::path manifest_path = o.manifest.empty() ? cfg.output_root / "manifest.json" : fs::path(o.manifest);
        pipeline::write_manifest(manifest, manifest_path);
        out << "manifest\t" << manifest_path.string() << "\n";
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return exit_usage;
    }
    for (const auto& s : manifest.subjects) {
        out << s.subject_id << "\t" << (s.ok ? "ok" : "error") << "\n";
        if (!s.ok) err << s.subject_id << ": " << s.error_kind << ": " << s.error_message << "\n";
    }
    out << "subjects\t" << manifest.subjects.size() << "\terrors\t" << manifest.error_count() << "\n";
    return manifest.all_ok() ? exit_ok : exit_item_failure;
}

inline std::map<std::string, fs::path> nifti_files_by_id(const fs::path& dir) {
    std::map<std::string, fs::path> out;
    std::error_code ec;
    for (const auto& e : fs::directory_iterator(dir, ec)) {
        const auto name = e.path().filename().string();
        if (e.is_regular_file() && pipeline::is_nifti_name(name))
            out[pipeline::strip_nifti_extension(name)] = e.path();
    }
    return out;
}

inline int cmd_evaluate(const EvaluateOptions& o, std::ostream& out, std::ostream& err) {
    metrics::LesionMatching matching;
    try {
        matching.connectivity = connectivity_from_int(o.connectivity);
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return exit_usage;
    }
    if (!(o.overlap_fraction >= 0.0 && o.overlap_fraction <= 1.0)) {
        err << "error: --overlap-fraction must be in [0, 1]\n";
        return exit_usage;
    }
    matching.min_overlap_fraction = o.overlap_fraction;
    for (const auto& d : {o.pred_dir, o.gt_dir})
        if (!fs::is_directory(d)) {
            err << "error: not a directory: " << d << "\n";
            return exit_usage;
        }

    const auto preds = nifti_files_by_id(o.pred_dir);
    const auto gts = nifti_files_by_id(o.gt_dir);
    std::vector<std::string> ids;
    for (const auto& [id, p] : preds)
        if (gts.contains(id)) ids.push_back(id);
    if (ids.empty()) {
        err << "error: no prediction/ground-truth pairs with matching names in " << o.pred_dir
            << " and " << o.gt_dir << "\n";
        return exit_usage;
    }

    std::ostringstream table;
    table << "subject_id\tdice\tavd_ml\tlesion_f1\talcd\n";
    std::vector<metrics::MetricsReport> reports;
    int failures = 0;
    for (const auto& id : ids) {
        try {
            const auto pred = BinaryMask::from_nonzero(nifti::read_volume(preds.at(id)));
            const auto gt = BinaryMask::from_nonzero(nifti::read_volume(gts.at(id)));
            const auto r = metrics::evaluate_case(pred, gt, matching);
            reports.push_back(r);
            table << id << "\t" << fmt(r.dice, 10) << "\t" << fmt(r.avd_ml, 10) << "\t"
                  << fmt(r.lesion_f1, 10) << "\t" << r.alcd << "\n";
        } catch (const Error& e) {
            ++failures;
            err << id << ": " << e.what() << "\n";
        }
    }

    std::string summary;
    if (!reports.empty()) {
        const auto agg = metrics::aggregate(
            reports, o.sample_std ? metrics::StdKind::Sample : metrics::StdKind::Population);
        summary = metrics::render_summary(agg, o.percent);
        summary += "assumption\tlesion match = any voxel overlap";
        if (matching.min_overlap_fraction > 0.0)
            summary += " with overlap fraction >= " + fmt(matching.min_overlap_fraction);
        summary += "; connectivity = " + std::to_string(o.connectivity) + "\n";
        summary += "assumption\tempty prediction and empty reference score Dice = F1 = 1\n";
        summary += std::string("assumption\tstd = ") + (o.sample_std ? "sample" : "population") + "\n";
    }

    out << table.str() << "\n" << summary;
    try {
        if (!o.output.empty()) {
            std::ofstream f(o.output, std::ios::trunc);
            if (!f) fail(ErrorKind::IoFailure, "cannot write " + o.output);
            f << table.str();
        }
        if (!o.summary.empty()) {
            std::ofstream f(o.summary, std::ios::trunc);
            if (!f) fail(ErrorKind::IoFailure, "cannot write " + o.summary);
            f << summary;
        }
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return exit_item_failure;
    }
    return failures == 0 ? exit_ok : exit_item_failure;
}

inline int cmd_split(const SplitOptions& o, std::ostream& out, std::ostream& err) {
    std::ifstream in(o.ids);
    if (!in) {
        err << "error: cannot read ids file: " << o.ids << "\n";
        return exit_usage;
    }
    std::vector<std::string> ids;
    std::map<std::string, std::string> sites;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line.starts_with("#")) continue;
        const auto tab = line.find('\t');
        const std::string id = line.substr(0, tab);
        ids.push_back(id);
        if (tab != std::string::npos) sites[id] = line.substr(tab + 1);
    }
    if (ids.empty()) {
        err << "error: ids file is empty: " << o.ids << "\n";
        return exit_usage;
    }
    pipeline::FoldSplit split;
    try {
        if (o.k < 2) fail(ErrorKind::InvalidFoldCount, "fold count must be >= 2, got " + std::to_string(o.k));
        split = pipeline::make_folds(ids, static_cast<std::size_t>(o.k), o.seed,
                                     o.stratify_site ? &sites : nullptr);
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return exit_usage;
    }
    const auto text = pipeline::render_folds(split);
    if (o.output.empty()) {
        out << text;
    } else {
        std::ofstream f(o.output, std::ios::binary | std::ios::trunc);
        if (!f) {
            err << "error: cannot write " << o.output << "\n";
            return exit_item_failure;
        }
        f << text;
        const auto sizes = split.fold_sizes();
        for (std::size_t i = 0; i < sizes.size(); ++i) out << "fold " << i << "\t" << sizes[i] << "\n";
    }
    return exit_ok;
}

inline int cmd_inspect(const std::string& path, std::ostream& out, std::ostream& err) {
    try {
        const auto header = nifti::read_header(path);
        const auto v = nifti::read_volume(path);
        double mn = v[0], mx = v[0], sum = 0.0;
        for (double x : v.data()) {
            mn = std::min(mn, x);
            mx = std::max(mx, x);
            sum += x;
        }
        const auto& d = v.dims();
        const auto& s = v.spacing();
        out << "path\t" << path << "\n";
        out << "dims\t" << d[0] << " " << d[1] << " " << d[2] << "\n";
        out << "spacing_mm\t" << fmt(s[0]) << " " << fmt(s[1]) << " " << fmt(s[2]) << "\n";
        out << "datatype\t" << nifti::datatype_name(header.datatype) << "\n";
        out << "byte_order\t" << (header.byte_swapped ? "swapped" : "native") << "\n";
        out << "scl_slope\t" << fmt(header.scl_slope) << "\tscl_inter\t" << fmt(header.scl_inter) << "\n";
        out << "min\t" << fmt(mn, 10) << "\n";
        out << "max\t" << fmt(mx, 10) << "\n";
        out << "mean\t" << fmt(sum / static_cast<double>(v.size()), 10) << "\n";
        for (auto m : all_modalities) {
            const auto w = default_window(m);
            if (!w) continue;
            std::size_t inside = 0;
            for (double x : v.data()) inside += w->contains(x);
            char buf[128];
            std::snprintf(buf, sizeof buf, "window_coverage\t%s\t(%g, %g)\t%.2f%%\n",
                          std::string(modality_name(m)).c_str(), w->lower, w->upper,
                          100.0 * static_cast<double>(inside) / static_cast<double>(v.size()));
            out << buf;
        }
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return exit_item_failure;
    }
    return exit_ok;
}

} // namespace detail

/// Parses argv and dispatches. Never throws; returns the exit code.
inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Stroke CT preprocessing and lesion-metric toolkit", "isles"};
    app.require_subcommand(1);

    detail::StripOptions strip;
    auto* s = app.add_subcommand("strip", "Compute a brain mask from an NCCT volume");
    s->add_option("--input,input", strip.input, "NCCT NIfTI file")->required();
    s->add_option("--output,-o", strip.output, "Mask NIfTI to write")->required();
    s->add_option("--stripper", strip.stripper, "external or fallback")
        ->check(CLI::IsMember({"external", "fallback"}))
        ->capture_default_str();
    s->add_option("--stripper-cmd", strip.stripper_cmd,
                  std::string("Command template with {input} and {output}; default from ") + stripper_cmd_env);
    s->add_option("--timeout", strip.timeout_s, "External tool timeout (s)")->capture_default_str();
    s->add_option("--hu-low", strip.hu_low, "Fallback lower HU bound")->capture_default_str();
    s->add_option("--hu-high", strip.hu_high, "Fallback upper HU bound")->capture_default_str();
    s->add_option("--closing-radius", strip.closing_radius_mm, "Fallback closing radius (mm)")
        ->check(CLI::NonNegativeNumber)
        ->capture_default_str();

    detail::PreprocessOptions pre;
    auto* p = app.add_subcommand("preprocess", "Run strip, mask propagation and preset over a dataset");
    p->add_option("--config,config", pre.config, "Pipeline config (JSON)")->required();
    p->add_option("--manifest", pre.manifest, "Manifest path (default <output_root>/manifest.json)");
    p->add_option("--preset", pre.preset, "Override the config preset");
    p->add_option("--stripper", pre.stripper, "Override stripper mode")
        ->check(CLI::IsMember({"external", "fallback"}));
    p->add_option("--stripper-cmd", pre.stripper_cmd, "Override stripper command template");
    p->add_option("--workers", pre.workers, "Worker threads (0 = all cores)");
    p->add_option("--seed", pre.seed, "Override the config seed");

    detail::EvaluateOptions ev;
    auto* e = app.add_subcommand("evaluate", "Score predicted lesion masks against ground truth");
    e->add_option("--pred,pred", ev.pred_dir, "Directory of predicted masks")->required();
    e->add_option("--gt,gt", ev.gt_dir, "Directory of reference masks (same file names)")->required();
    e->add_option("--connectivity", ev.connectivity, "6, 18 or 26")->capture_default_str();
    e->add_option("--overlap-fraction", ev.overlap_fraction,
                  "Minimum overlap fraction for a lesion match (0 = any voxel)")
        ->capture_default_str();
    e->add_flag("--percent,!--fraction", ev.percent, "Show Dice/F1 in percent (default)");
    e->add_flag("--sample-std", ev.sample_std, "Use sample instead of population std");
    e->add_option("--output", ev.output, "Per-case TSV to write");
    e->add_option("--summary", ev.summary, "Aggregate summary to write");
    e->add_option("--workers", ev.workers, "Accepted for symmetry; evaluation is sequential");

    detail::SplitOptions sp;
    auto* f = app.add_subcommand("split", "Assign subject ids to cross-validation folds");
    f->add_option("--ids,ids", sp.ids, "File with one subject id per line (optional tab + site)")->required();
    f->add_option("--k,-k", sp.k, "Fold count")->capture_default_str();
    f->add_option("--seed", sp.seed, "Shuffle seed")->capture_default_str();
    f->add_option("--output,-o", sp.output, "Fold assignment TSV (default stdout)");
    f->add_flag("--stratify-site", sp.stratify_site, "Spread each site evenly over folds");

    std::string inspect_path;
    auto* i = app.add_subcommand("inspect", "Print header facts, intensity stats and window coverage");
    i->add_option("path", inspect_path, "NIfTI file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return exit_ok;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return exit_ok;
    } catch (const CLI::ParseError& pe) {
        err << "usage error: " << pe.what() << "\n";
        return exit_usage;
    }

    try {
        if (s->parsed()) return detail::cmd_strip(strip, out, err);
        if (p->parsed()) return detail::cmd_preprocess(pre, out, err);
        if (e->parsed()) return detail::cmd_evaluate(ev, out, err);
        if (f->parsed()) return detail::cmd_split(sp, out, err);
        if (i->parsed()) return detail::cmd_inspect(inspect_path, out, err);
    } catch (const std::exception& ex) {
        err << "error: " << ex.what() << "\n";
        return exit_item_failure;
    }
    return exit_usage;
}

inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    std::vector<const char*> argv{"isles"};
    for (const auto& a : args) argv.push_back(a.c_str());
    return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

} // namespace isles::cli

#endif
