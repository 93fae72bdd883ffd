#ifndef ISLES_PIPELINE_HPP
#define ISLES_PIPELINE_HPP

// Batch orchestration: dataset discovery, cross-validation folds, config,
// per-subject strip -> propagate -> preset, and the run manifest.

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "isles/components.hpp"
#include "isles/digest.hpp"
#include "isles/error.hpp"
#include "isles/nifti.hpp"
#include "isles/preprocess.hpp"
#include "isles/skullstrip.hpp"
#include "isles/volume.hpp"

namespace isles::pipeline {

namespace fs = std::filesystem;
using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Discovery

struct ModalityTokens {
    std::map<ModalityKind, std::string> modality{
        {ModalityKind::NCCT, "ncct"}, {ModalityKind::CTA, "cta"},   {ModalityKind::CBF, "cbf"},
        {ModalityKind::CBV, "cbv"},   {ModalityKind::MTT, "mtt"},   {ModalityKind::TMAX, "tmax"}};
    std::string ground_truth = "lesion-msk";
};

struct SubjectRecord {
    std::string subject_id;
    std::map<ModalityKind, fs::path> modality_paths;
    std::optional<fs::path> ground_truth_path;
    std::optional<std::string> site_tag;
};

struct DiscoveryResult {
    /// Subjects with an NCCT scan, sorted by id.
    std::vector<SubjectRecord> subjects;
    /// Subjects lacking NCCT; kept so callers can report them.
    std::vector<SubjectRecord> missing_ncct;
    std::vector<std::string> warnings;
};

inline bool is_nifti_name(const std::string& name) {
    return name.ends_with(".nii") || name.ends_with(".nii.gz");
}

inline std::string strip_nifti_extension(const std::string& name) {
    if (name.ends_with(".nii.gz")) return name.substr(0, name.size() - 7);
    if (name.ends_with(".nii")) return name.substr(0, name.size() - 4);
    return name;
}

inline std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

/// Filename tokens: the stem split on '_' and '.', lower-cased.
inline std::vector<std::string> filename_tokens(const std::string& filename) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : strip_nifti_extension(filename)) {
        if (c == '_' || c == '.') {
            if (!cur.empty()) out.push_back(lower(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (!cur.empty()) out.push_back(lower(cur));
    return out;
}

/// Optional `sites.tsv` at the dataset root: "<subject_id>\t<site>" per line.
inline std::map<std::string, std::string> read_site_table(const fs::path& root) {
    std::map<std::string, std::string> sites;
    std::ifstream in(root / "sites.tsv");
    std::string line;
    while (std::getline(in, line)) {
        auto tab = line.find('\t');
        if (tab == std::string::npos || line.starts_with("#")) continue;
        sites[line.substr(0, tab)] = line.substr(tab + 1);
    }
    return sites;
}

/// One directory per subject under `root`; files anywhere below it are
/// assigned by filename token.
inline DiscoveryResult discover_subjects(const fs::path& root, const ModalityTokens& tokens = {}) {
    std::error_code ec;
    if (!fs::is_directory(root, ec))
        fail(ErrorKind::IoFailure, "dataset root is not a directory: " + root.string());

    std::vector<fs::path> subject_dirs;
    for (const auto& entry : fs::directory_iterator(root, ec))
        if (entry.is_directory()) subject_dirs.push_back(entry.path());
    if (ec) fail(ErrorKind::IoFailure, "cannot list " + root.string() + ": " + ec.message());
    std::sort(subject_dirs.begin(), subject_dirs.end());
    const auto sites = read_site_table(root);

    DiscoveryResult result;
    for (const auto& dir : subject_dirs) {
        SubjectRecord rec;
        rec.subject_id = dir.filename().string();
        if (auto it = sites.find(rec.subject_id); it != sites.end()) rec.site_tag = it->second;

        std::vector<fs::path> files;
        for (const auto& e : fs::recursive_directory_iterator(dir, ec))
            if (e.is_regular_file() && is_nifti_name(e.path().filename().string()))
                files.push_back(e.path());
        if (ec) fail(ErrorKind::IoFailure, "cannot scan " + dir.string() + ": " + ec.message());
        std::sort(files.begin(), files.end());

        for (const auto& file : files) {
            const auto toks = filename_tokens(file.filename().string());
            auto has = [&](const std::string& t) {
                return std::find(toks.begin(), toks.end(), lower(t)) != toks.end();
            };
            if (has(tokens.ground_truth)) {
                if (rec.ground_truth_path)
                    fail(ErrorKind::DuplicateModality,
                         rec.subject_id + ": two ground-truth files match '" +
                             tokens.ground_truth + "'");
                rec.ground_truth_path = file;
                continue;
            }
            std::vector<ModalityKind> hits;
            for (const auto& [m, t] : tokens.modality)
                if (has(t)) hits.push_back(m);
            if (hits.empty()) continue;
            if (hits.size() > 1) {
                result.warnings.push_back(rec.subject_id + ": ambiguous file skipped: " +
                                          file.filename().string());
                continue;
            }
            if (rec.modality_paths.contains(hits[0]))
                fail(ErrorKind::DuplicateModality,
                     rec.subject_id + ": two files match '" + tokens.modality.at(hits[0]) + "'");
            rec.modality_paths[hits[0]] = file;
        }

        for (auto m : all_modalities)
            if (!rec.modality_paths.contains(m))
                result.warnings.push_back(rec.subject_id + ": missing " +
                                          std::string(modality_name(m)));
        if (rec.modality_paths.contains(ModalityKind::NCCT)) result.subjects.push_back(std::move(rec));
        else result.missing_ncct.push_back(std::move(rec));
    }
    return result;
}

// ---------------------------------------------------------------------------
// Folds

struct FoldSplit {
    std::size_t k = 0;
    std::map<std::string, std::size_t> assignment;

    std::vector<std::size_t> fold_sizes() const {
        std::vector<std::size_t> sizes(k, 0);
        for (const auto& [id, f] : assignment) ++sizes[f];
        return sizes;
    }
};

namespace detail {

/// Uniform integer in [0, bound) by rejection; independent of the standard
/// library's distribution implementation.
inline std::uint64_t bounded(std::mt19937_64& rng, std::uint64_t bound) {
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t x;
    do x = rng();
    while (x >= limit);
    return x % bound;
}

inline void shuffle(std::vector<std::string>& v, std::mt19937_64& rng) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[bounded(rng, i)]);
}

} // namespace detail

/// Seeded shuffle then round-robin deal. Input order does not matter: ids
/// are sorted first. With `sites`, each site is shuffled separately and the
/// deal continues across sites, so every site is spread over the folds.
inline FoldSplit make_folds(std::vector<std::string> ids, std::size_t k, std::uint64_t seed,
                            const std::map<std::string, std::string>* sites = nullptr) {
    if (k < 2) fail(ErrorKind::InvalidFoldCount, "fold count must be >= 2, got " + std::to_string(k));
    if (k > ids.size())
        fail(ErrorKind::InvalidFoldCount, "fold count " + std::to_string(k) + " exceeds " +
                                              std::to_string(ids.size()) + " subjects");
    std::sort(ids.begin(), ids.end());
    if (std::adjacent_find(ids.begin(), ids.end()) != ids.end())
        fail(ErrorKind::InvalidArgument, "duplicate subject id");

    std::mt19937_64 rng(seed);
    std::vector<std::string> order;
    if (sites == nullptr) {
        order = ids;
        detail::shuffle(order, rng);
    } else {
        std::map<std::string, std::vector<std::string>> groups;
        for (const auto& id : ids) {
            auto it = sites->find(id);
            groups[it == sites->end() ? std::string() : it->second].push_back(id);
        }
        for (auto& [site, members] : groups) {
            detail::shuffle(members, rng);
            order.insert(order.end(), members.begin(), members.end());
        }
    }
    FoldSplit split{k, {}};
    for (std::size_t i = 0; i < order.size(); ++i) split.assignment[order[i]] = i % k;
    return split;
}

/// Index of the highest score; ties go to the lowest index.
inline std::size_t select_best_fold(const std::vector<double>& per_fold_validation_dice) {
    if (per_fold_validation_dice.empty()) fail(ErrorKind::EmptyInput, "no fold scores");
    std::size_t best = 0;
    for (std::size_t i = 1; i < per_fold_validation_dice.size(); ++i)
        if (per_fold_validation_dice[i] > per_fold_validation_dice[best]) best = i;
    return best;
}

/// "subject_id\tfold" lines under a header, sorted by id.
inline std::string render_folds(const FoldSplit& split) {
    std::string out = "subject_id\tfold\n";
    for (const auto& [id, f] : split.assignment) out += id + "\t" + std::to_string(f) + "\n";
    return out;
}

// ---------------------------------------------------------------------------
// Configuration

enum class StripperMode { External, Fallback };

struct PipelineConfig {
    fs::path dataset_root;
    fs::path output_root;
    PresetName preset = PresetName::WindowPlusEqualize;
    WindowOverrides window_overrides;
    std::size_t equalize_bins = 256;
    StripperMode stripper_mode = StripperMode::Fallback;
    skullstrip::FallbackParams fallback;
    std::optional<skullstrip::StripperCommand> stripper_command;
    Connectivity connectivity = Connectivity::Corners;
    std::uint64_t seed = 0;
    std::size_t workers = 0;
    ModalityTokens tokens;

    std::size_t effective_workers() const {
        if (workers > 0) return workers;
        return std::max<unsigned>(1, std::thread::hardware_concurrency());
    }

    void validate() const {
        if (dataset_root.empty()) fail(ErrorKind::InvalidConfig, "dataset_root is required");
        if (output_root.empty()) fail(ErrorKind::InvalidConfig, "output_root is required");
        if (fs::weakly_canonical(dataset_root) == fs::weakly_canonical(output_root))
            fail(ErrorKind::InvalidConfig, "output_root must differ from dataset_root");
        if (equalize_bins < 2) fail(ErrorKind::InvalidConfig, "equalize_bins must be >= 2");
        if (stripper_mode == StripperMode::External && !stripper_command)
            fail(ErrorKind::InvalidConfig, "external stripper mode needs stripper.command");
        if (!(fallback.hu_low < fallback.hu_high))
            fail(ErrorKind::InvalidConfig, "stripper.hu_low must be below stripper.hu_high");
        if (!(fallback.closing_radius_mm >= 0.0))
            fail(ErrorKind::InvalidConfig, "stripper.closing_radius_mm must be >= 0");
    }

    PreprocessPreset preset_steps() const { return PreprocessPreset::make(preset, equalize_bins); }
};

namespace detail {

inline void reject_unknown_keys(const json& obj, std::initializer_list<std::string_view> allowed,
                                const std::string& where) {
    if (!obj.is_object()) fail(ErrorKind::InvalidConfig, where + " must be an object");
    for (const auto& [key, value] : obj.items())
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
            fail(ErrorKind::InvalidConfig, "unknown key '" + key + "' in " + where);
}

template <class T>
T get_as(const json& obj, const char* key, const std::string& where) {
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception&) {
        fail(ErrorKind::InvalidConfig, where + "." + key + " has the wrong type");
    }
}

inline std::string stripper_mode_name(StripperMode m) {
    return m == StripperMode::External ? "external" : "fallback";
}

} // namespace detail

/// Parses the JSON config document. Relative paths resolve against `base_dir`.
inline PipelineConfig parse_config(const json& doc, const fs::path& base_dir = {}) {
    using detail::get_as;
    detail::reject_unknown_keys(doc,
                                {"dataset_root", "output_root", "preset", "windows", "equalize_bins",
                                 "stripper", "connectivity", "seed", "workers", "tokens"},
                                "config");
    PipelineConfig cfg;
    auto resolve = [&](const std::string& p) {
        fs::path path(p);
        return path.is_relative() && !base_dir.empty() ? base_dir / path : path;
    };
    if (doc.contains("dataset_root")) cfg.dataset_root = resolve(get_as<std::string>(doc, "dataset_root", "config"));
    if (doc.contains("output_root")) cfg.output_root = resolve(get_as<std::string>(doc, "output_root", "config"));
    if (doc.contains("preset")) {
        const auto name = get_as<std::string>(doc, "preset", "config");
        auto p = parse_preset(name);
        if (!p) fail(ErrorKind::InvalidConfig, "unknown preset '" + name + "'");
        cfg.preset = *p;
    }
    if (doc.contains("windows")) {
        const auto& w = doc.at("windows");
        if (!w.is_object()) fail(ErrorKind::InvalidConfig, "windows must be an object");
        for (const auto& [key, value] : w.items()) {
            auto m = parse_modality(key);
            if (!m) fail(ErrorKind::InvalidConfig, "unknown modality '" + key + "' in windows");
            if (!value.is_array() || value.size() != 2 || !value[0].is_number() || !value[1].is_number())
                fail(ErrorKind::InvalidConfig, "windows." + key + " must be [lower, upper]");
            try {
                cfg.window_overrides[*m] = WindowSpec::make(value[0].get<double>(), value[1].get<double>());
            } catch (const Error& e) {
                fail(ErrorKind::InvalidConfig, "windows." + key + ": " + e.detail());
            }
        }
    }
    if (doc.contains("equalize_bins")) cfg.equalize_bins = get_as<std::size_t>(doc, "equalize_bins", "config");
    if (doc.contains("stripper")) {
        const auto& s = doc.at("stripper");
        detail::reject_unknown_keys(s, {"mode", "command", "timeout_s", "hu_low", "hu_high", "closing_radius_mm"},
                                    "stripper");
        double timeout = 600.0;
        if (s.contains("timeout_s")) timeout = get_as<double>(s, "timeout_s", "stripper");
        if (s.contains("mode")) {
            const auto mode = get_as<std::string>(s, "mode", "stripper");
            if (mode == "external") cfg.stripper_mode = StripperMode::External;
            else if (mode == "fallback") cfg.stripper_mode = StripperMode::Fallback;
            else fail(ErrorKind::InvalidConfig, "stripper.mode must be external or fallback");
        }
        if (s.contains("command")) {
            try {
                cfg.stripper_command = skullstrip::StripperCommand::parse(
                    get_as<std::string>(s, "command", "stripper"), timeout);
            } catch (const Error& e) {
                fail(ErrorKind::InvalidConfig, "stripper.command: " + e.detail());
            }
        }
        if (s.contains("hu_low")) cfg.fallback.hu_low = get_as<double>(s, "hu_low", "stripper");
        if (s.contains("hu_high")) cfg.fallback.hu_high = get_as<double>(s, "hu_high", "stripper");
        if (s.contains("closing_radius_mm"))
            cfg.fallback.closing_radius_mm = get_as<double>(s, "closing_radius_mm", "stripper");
    }
    if (doc.contains("connectivity")) {
        try {
            cfg.connectivity = connectivity_from_int(get_as<int>(doc, "connectivity", "config"));
        } catch (const Error& e) {
            fail(ErrorKind::InvalidConfig, e.detail());
        }
    }
    if (doc.contains("seed")) cfg.seed = get_as<std::uint64_t>(doc, "seed", "config");
    if (doc.contains("workers")) cfg.workers = get_as<std::size_t>(doc, "workers", "config");
    if (doc.contains("tokens")) {
        const auto& t = doc.at("tokens");
        if (!t.is_object()) fail(ErrorKind::InvalidConfig, "tokens must be an object");
        for (const auto& [key, value] : t.items()) {
            if (!value.is_string() || value.get<std::string>().empty())
                fail(ErrorKind::InvalidConfig, "tokens." + key + " must be a non-empty string");
            if (lower(key) == "lesion" || lower(key) == "ground_truth") {
                cfg.tokens.ground_truth = value.get<std::string>();
                continue;
            }
            auto m = parse_modality(key);
            if (!m) fail(ErrorKind::InvalidConfig, "unknown key '" + key + "' in tokens");
            cfg.tokens.modality[*m] = value.get<std::string>();
        }
    }
    cfg.validate();
    return cfg;
}

inline PipelineConfig load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::InvalidConfig, "cannot read config " + path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        fail(ErrorKind::InvalidConfig, path.string() + ": " + e.what());
    }
    return parse_config(doc, path.parent_path());
}

/// Normalized snapshot of every setting, as recorded in the manifest.
inline json config_snapshot(const PipelineConfig& cfg) {
    json j;
    j["dataset_root"] = cfg.dataset_root.string();
    j["output_root"] = cfg.output_root.string();
    j["preset"] = std::string(preset_name(cfg.preset));
    json steps = json::array();
    for (const auto& s : cfg.preset_steps().steps) {
        switch (s.kind) {
        case PreprocessStep::Kind::PercentileClip:
            steps.push_back({{"step", "percentile_clip"}, {"p_low", s.p_low}, {"p_high", s.p_high}});
            break;
        case PreprocessStep::Kind::Window: steps.push_back({{"step", "window"}}); break;
        case PreprocessStep::Kind::ZScore: steps.push_back({{"step", "zscore"}}); break;
        case PreprocessStep::Kind::Equalize:
            steps.push_back({{"step", "equalize"}, {"bins", s.bins}});
            break;
        }
    }
    j["preset_steps"] = steps;
    json windows = json::object();
    for (auto m : all_modalities)
        if (auto w = window_for(m, cfg.window_overrides))
            windows[std::string(modality_name(m))] = {w->lower, w->upper};
    j["windows"] = windows;
    j["equalize_bins"] = cfg.equalize_bins;
    json s;
    s["mode"] = detail::stripper_mode_name(cfg.stripper_mode);
    if (cfg.stripper_mode == StripperMode::External) {
        s["command"] = cfg.stripper_command->template_string();
        s["timeout_s"] = cfg.stripper_command->timeout_s;
    } else {
        s["hu_low"] = cfg.fallback.hu_low;
        s["hu_high"] = cfg.fallback.hu_high;
        s["closing_radius_mm"] = cfg.fallback.closing_radius_mm;
    }
    j["stripper"] = s;
    j["connectivity"] = static_cast<int>(cfg.connectivity);
    j["seed"] = cfg.seed;
    json tokens;
    for (const auto& [m, t] : cfg.tokens.modality) tokens[std::string(modality_name(m))] = t;
    tokens["LESION"] = cfg.tokens.ground_truth;
    j["tokens"] = tokens;
    return j;
}

// ---------------------------------------------------------------------------
// Run

struct OutputRecord {
    ModalityKind modality;
    fs::path path;
    std::string sha256;
};

struct SubjectStatus {
    std::string subject_id;
    bool ok = false;
    std::string error_kind;
    std::string error_message;
    std::vector<OutputRecord> outputs;
    std::size_t mask_voxels = 0;
    double mask_ml = 0.0;
    std::string tool_command;
    double seconds = 0.0;
};

struct RunManifest {
    json config;
    std::vector<SubjectStatus> subjects;
    std::vector<std::string> warnings;
    std::size_t workers = 1;
    double elapsed_seconds = 0.0;

    bool all_ok() const {
        return std::all_of(subjects.begin(), subjects.end(), [](const auto& s) { return s.ok; });
    }
    std::size_t error_count() const {
        return static_cast<std::size_t>(
            std::count_if(subjects.begin(), subjects.end(), [](const auto& s) { return !s.ok; }));
    }

    /// subject id -> modality -> digest, for determinism checks.
    std::map<std::string, std::map<std::string, std::string>> digests() const {
        std::map<std::string, std::map<std::string, std::string>> out;
        for (const auto& s : subjects)
            for (const auto& o : s.outputs) out[s.subject_id][std::string(modality_name(o.modality))] = o.sha256;
        return out;
    }

    json to_json() const {
        json j;
        j["config"] = config;
        j["workers"] = workers;
        j["elapsed_seconds"] = elapsed_seconds;
        j["warnings"] = warnings;
        json subs = json::array();
        for (const auto& s : subjects) {
            json e;
            e["subject_id"] = s.subject_id;
            e["status"] = s.ok ? "ok" : "error";
            if (!s.ok) {
                e["error_kind"] = s.error_kind;
                e["error"] = s.error_message;
            }
            json outs = json::array();
            for (const auto& o : s.outputs)
                outs.push_back({{"modality", std::string(modality_name(o.modality))},
                                {"path", o.path.string()},
                                {"sha256", o.sha256}});
            e["outputs"] = outs;
            if (s.ok) {
                e["mask_voxels"] = s.mask_voxels;
                e["mask_ml"] = s.mask_ml;
            }
            if (!s.tool_command.empty()) e["tool_command"] = s.tool_command;
            e["seconds"] = s.seconds;
            subs.push_back(std::move(e));
        }
        j["subjects"] = subs;
        return j;
    }
};

namespace detail {

inline fs::path mirrored_path(const PipelineConfig& cfg, const fs::path& input) {
    return cfg.output_root / fs::relative(input, cfg.dataset_root);
}

struct PendingOutput {
    ModalityKind modality;
    fs::path path;
    std::vector<std::uint8_t> bytes;
};

inline SubjectStatus process_subject(const PipelineConfig& cfg, const SubjectRecord& rec) {
    const auto start = std::chrono::steady_clock::now();
    SubjectStatus status;
    status.subject_id = rec.subject_id;
    try {
        const auto& ncct_path = rec.modality_paths.at(ModalityKind::NCCT);
        ModalityVolumes volumes;
        volumes.emplace(ModalityKind::NCCT, nifti::read_volume(ncct_path));

        BinaryMask mask;
        if (cfg.stripper_mode == StripperMode::External) {
            auto res = skullstrip::run_external_stripper_logged(ncct_path, *cfg.stripper_command);
            status.tool_command = res.command_line;
            mask = std::move(res.mask);
        } else {
            mask = skullstrip::fallback_strip(volumes.at(ModalityKind::NCCT), cfg.fallback);
        }
        status.mask_voxels = mask.count();
        status.mask_ml = static_cast<double>(status.mask_voxels) * mask.geometry().voxel_volume_mm3() / 1000.0;

        for (const auto& [m, path] : rec.modality_paths)
            if (m != ModalityKind::NCCT) volumes.emplace(m, nifti::read_volume(path));

        const auto stripped = skullstrip::propagate_mask(mask, volumes);
        const auto processed = run_preset(stripped, cfg.preset_steps(), mask, cfg.window_overrides);

        std::vector<PendingOutput> pending;
        for (const auto& [m, v] : processed) {
            const fs::path out_path = mirrored_path(cfg, rec.modality_paths.at(m));
            auto bytes = nifti::encode_volume(v, nifti::Datatype::Float32);
            if (nifti::detail::has_gz_suffix(out_path)) bytes = nifti::detail::gzip(bytes);
            pending.push_back({m, out_path, std::move(bytes)});
        }

        std::vector<fs::path> written;
        try {
            for (const auto& p : pending) {
                fs::create_directories(p.path.parent_path());
                nifti::detail::write_file(p.path, p.bytes);
                written.push_back(p.path);
                status.outputs.push_back({p.modality, p.path, sha256_hex(p.bytes)});
            }
        } catch (...) {
            std::error_code ec;
            for (const auto& w : written) fs::remove(w, ec);
            status.outputs.clear();
            throw;
        }
        status.ok = true;
    } catch (const Error& e) {
        status.ok = false;
        status.error_kind = std::string(to_string(e.kind()));
        status.error_message = e.detail();
    } catch (const std::exception& e) {
        status.ok = false;
        status.error_kind = "InternalError";
        status.error_message = e.what();
    }
    status.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return status;
}

} // namespace detail

/// Processes every discovered subject with a bounded worker pool. Only
/// config and dataset-root problems throw; subject failures are recorded.
inline RunManifest run_pipeline(const PipelineConfig& cfg) {
    cfg.validate();
    const auto start = std::chrono::steady_clock::now();
    const auto found = discover_subjects(cfg.dataset_root, cfg.tokens);

    RunManifest manifest;
    manifest.config = config_snapshot(cfg);
    manifest.warnings = found.warnings;
    manifest.workers = cfg.effective_workers();

    std::vector<SubjectStatus> results(found.subjects.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < found.subjects.size(); i = next++)
            results[i] = detail::process_subject(cfg, found.subjects[i]);
    };
    {
        std::vector<std::jthread> pool;
        const std::size_t n = std::min(manifest.workers, std::max<std::size_t>(1, found.subjects.size()));
        for (std::size_t t = 1; t < n; ++t) pool.emplace_back(worker);
        worker();
    }

    for (const auto& rec : found.missing_ncct) {
        SubjectStatus s;
        s.subject_id = rec.subject_id;
        s.error_kind = std::string(to_string(ErrorKind::IoFailure));
        s.error_message = "no NCCT scan found; brain mask cannot be computed";
        results.push_back(std::move(s));
    }
    std::sort(results.begin(), results.end(),
              [](const auto& a, const auto& b) { return a.subject_id < b.subject_id; });
    manifest.subjects = std::move(results);
    manifest.elapsed_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return manifest;
}

inline void write_manifest(const RunManifest& manifest, const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) fail(ErrorKind::IoFailure, "cannot write manifest " + path.string());
    out << manifest.to_json().dump(2) << "\n";
}

} // namespace isles::pipeline

#endif
