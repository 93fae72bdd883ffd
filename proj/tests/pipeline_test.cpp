#include <gtest/gtest.h>

#include <fstream>
#include <functional>
#include <random>

#include "dataset_fixture.hpp"
#include "isles/pipeline.hpp"
#include "test_util.hpp"

using namespace isles;
using namespace isles::pipeline;
using isles::testing::ScratchDir;
using isles::testing::fixture_path;

namespace {

ErrorKind kind_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.kind();
    }
    ADD_FAILURE() << "expected an isles::Error";
    return ErrorKind::InvalidArgument;
}

std::vector<std::string> make_ids(std::size_t n) {
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < n; ++i) ids.push_back("case_" + std::to_string(i));
    return ids;
}

PipelineConfig fixture_config(const ScratchDir& dir, PresetName preset, std::size_t workers) {
    PipelineConfig cfg;
    cfg.dataset_root = dir / "data";
    cfg.output_root = dir / ("out-" + std::to_string(workers));
    cfg.preset = preset;
    cfg.workers = workers;
    return cfg;
}

} // namespace

TEST(Discovery, CompleteSubjects) {
    ScratchDir dir("disc");
    isles::testing::write_fixture_dataset(dir / "data", 3);
    const auto res = discover_subjects(dir / "data");
    ASSERT_EQ(res.subjects.size(), 3u);
    for (const auto& s : res.subjects) {
        EXPECT_EQ(s.modality_paths.size(), 6u);
        EXPECT_TRUE(s.ground_truth_path.has_value());
    }
    EXPECT_EQ(res.subjects[0].subject_id, "sub-001");
    EXPECT_TRUE(res.warnings.empty());
}

TEST(Discovery, MissingModalityIsWarned) {
    ScratchDir dir("disc");
    isles::testing::write_fixture_dataset(dir / "data", 2);
    fs::remove(fixture_path(dir / "data", "sub-002", "cbv"));
    const auto res = discover_subjects(dir / "data");
    ASSERT_EQ(res.subjects.size(), 2u);
    EXPECT_FALSE(res.subjects[1].modality_paths.contains(ModalityKind::CBV));
    ASSERT_EQ(res.warnings.size(), 1u);
    EXPECT_NE(res.warnings[0].find("sub-002"), std::string::npos);
    EXPECT_NE(res.warnings[0].find("CBV"), std::string::npos);
}

TEST(Discovery, DuplicateTokenRejected) {
    ScratchDir dir("disc");
    isles::testing::write_fixture_dataset(dir / "data", 1);
    fs::copy_file(fixture_path(dir / "data", "sub-001", "cta"),
                  dir / "data" / "sub-001" / "ses-01" / "sub-001_ses-01_run-2_cta.nii.gz");
    EXPECT_EQ(kind_of([&] { discover_subjects(dir / "data"); }), ErrorKind::DuplicateModality);
}

TEST(Discovery, MissingNcctReportedNotDropped) {
    ScratchDir dir("disc");
    isles::testing::write_fixture_dataset(dir / "data", 2);
    fs::remove(fixture_path(dir / "data", "sub-001", "ncct"));
    const auto res = discover_subjects(dir / "data");
    EXPECT_EQ(res.subjects.size(), 1u);
    ASSERT_EQ(res.missing_ncct.size(), 1u);
    EXPECT_EQ(res.missing_ncct[0].subject_id, "sub-001");
}

TEST(Discovery, TokensMatchWholeWordsOnly) {
    EXPECT_EQ(filename_tokens("sub-1_ses-01_cta.nii.gz"),
              (std::vector<std::string>{"sub-1", "ses-01", "cta"}));
    ScratchDir dir("disc");
    fs::create_directories(dir / "data" / "s1");
    nifti::write_volume(VolumeGrid::filled(Geometry({2, 2, 2}, {1, 1, 1}), 1),
                        dir / "data" / "s1" / "s1_ncct.nii", nifti::Datatype::Int16);
    nifti::write_volume(VolumeGrid::filled(Geometry({2, 2, 2}, {1, 1, 1}), 1),
                        dir / "data" / "s1" / "s1_ctangio.nii", nifti::Datatype::Int16);
    const auto res = discover_subjects(dir / "data");
    ASSERT_EQ(res.subjects.size(), 1u);
    EXPECT_FALSE(res.subjects[0].modality_paths.contains(ModalityKind::CTA));
}

TEST(Discovery, MissingRootIsIoFailure) {
    EXPECT_EQ(kind_of([] { discover_subjects("/nonexistent/dataset"); }), ErrorKind::IoFailure);
}

TEST(Folds, HundredFiftyIntoTenFoldsOfFifteen) {
    const auto split = make_folds(make_ids(150), 10, 42);
    EXPECT_EQ(split.fold_sizes(), std::vector<std::size_t>(10, 15));
    EXPECT_EQ(split.assignment.size(), 150u);
}

TEST(Folds, SevenIntoThree) {
    auto sizes = make_folds(make_ids(7), 3, 1).fold_sizes();
    std::sort(sizes.begin(), sizes.end(), std::greater<>());
    EXPECT_EQ(sizes, (std::vector<std::size_t>{3, 2, 2}));
}

TEST(Folds, DeterministicAndOrderIndependent) {
    auto ids = make_ids(40);
    const auto a = make_folds(ids, 5, 9);
    std::reverse(ids.begin(), ids.end());
    EXPECT_EQ(make_folds(ids, 5, 9).assignment, a.assignment);
    EXPECT_NE(make_folds(ids, 5, 10).assignment, a.assignment);
}

TEST(Folds, PartitionPropertyOverRandomSizes) {
    std::mt19937_64 rng(6);
    for (int t = 0; t < 50; ++t) {
        const std::size_t n = 2 + rng() % 200;
        const std::size_t k = 2 + rng() % (n - 1);
        const auto split = make_folds(make_ids(n), k, rng());
        EXPECT_EQ(split.assignment.size(), n);
        const auto sizes = split.fold_sizes();
        const auto [mn, mx] = std::minmax_element(sizes.begin(), sizes.end());
        EXPECT_LE(*mx - *mn, 1u);
        for (const auto& [id, f] : split.assignment) EXPECT_LT(f, k);
    }
}

TEST(Folds, SiteStratificationSpreadsSites) {
    std::map<std::string, std::string> sites;
    auto ids = make_ids(20);
    for (std::size_t i = 0; i < ids.size(); ++i) sites[ids[i]] = i < 10 ? "munich" : "zurich";
    const auto split = make_folds(ids, 5, 3, &sites);
    std::map<std::size_t, int> munich;
    for (const auto& [id, f] : split.assignment) munich[f] += sites[id] == "munich";
    for (const auto& [f, n] : munich) EXPECT_EQ(n, 2);
}

TEST(Folds, InvalidCounts) {
    EXPECT_EQ(kind_of([] { make_folds(make_ids(5), 1, 0); }), ErrorKind::InvalidFoldCount);
    EXPECT_EQ(kind_of([] { make_folds(make_ids(5), 6, 0); }), ErrorKind::InvalidFoldCount);
    EXPECT_THROW(make_folds({"a", "a", "b"}, 2, 0), Error);
}

TEST(Folds, RenderSortedById) {
    const auto text = render_folds(make_folds({"b", "a", "c"}, 3, 0));
    EXPECT_EQ(text.rfind("subject_id\tfold\na\t", 0), 0u);
}

TEST(BestFold, Examples) {
    EXPECT_EQ(select_best_fold({0.218, 0.310, 0.318}), 2u);
    EXPECT_EQ(select_best_fold({0.5, 0.5, 0.5}), 0u);
    EXPECT_EQ(select_best_fold({0.1}), 0u);
    EXPECT_EQ(kind_of([] { select_best_fold({}); }), ErrorKind::EmptyInput);
}

TEST(BestFold, InvariantUnderPositiveAffineRescaling) {
    std::mt19937_64 rng(13);
    std::uniform_real_distribution<double> u(0, 1), a(0.1, 10), b(-5, 5);
    for (int t = 0; t < 100; ++t) {
        std::vector<double> s(1 + rng() % 12);
        for (auto& x : s) x = std::round(u(rng) * 20) / 20;
        const double sa = a(rng), sb = b(rng);
        std::vector<double> r;
        for (double x : s) r.push_back(sa * x + sb);
        // Rescaling can merge near-ties in floating point; compare against exact ties only.
        const auto best = select_best_fold(s);
        EXPECT_EQ(s[select_best_fold(r)], s[best]);
    }
}

TEST(Config, ParsesFullDocument) {
    const auto doc = nlohmann::json::parse(R"({
        "dataset_root": "in", "output_root": "out", "preset": "ZSCORE_ONLY",
        "windows": {"NCCT": [0, 80], "tmax": [0, 10]}, "equalize_bins": 128,
        "stripper": {"mode": "external", "command": "strip -i {input} -o {output}", "timeout_s": 30},
        "connectivity": 6, "seed": 7, "workers": 3, "tokens": {"CTA": "angio", "lesion": "msk"}})");
    const auto cfg = parse_config(doc, "/base");
    EXPECT_EQ(cfg.dataset_root, fs::path("/base/in"));
    EXPECT_EQ(cfg.preset, PresetName::ZScoreOnly);
    EXPECT_EQ(cfg.window_overrides.at(ModalityKind::NCCT), (WindowSpec{0, 80}));
    EXPECT_EQ(cfg.window_overrides.at(ModalityKind::TMAX), (WindowSpec{0, 10}));
    EXPECT_EQ(cfg.equalize_bins, 128u);
    EXPECT_EQ(cfg.stripper_mode, StripperMode::External);
    EXPECT_EQ(cfg.stripper_command->timeout_s, 30.0);
    EXPECT_EQ(cfg.connectivity, Connectivity::Faces);
    EXPECT_EQ(cfg.seed, 7u);
    EXPECT_EQ(cfg.workers, 3u);
    EXPECT_EQ(cfg.tokens.modality.at(ModalityKind::CTA), "angio");
    EXPECT_EQ(cfg.tokens.ground_truth, "msk");
    const auto snap = config_snapshot(cfg);
    EXPECT_EQ(snap["preset"], "ZSCORE_ONLY");
    EXPECT_EQ(snap["windows"]["CTA"][1], 90.0);
}

TEST(Config, Defaults) {
    const auto cfg = parse_config(nlohmann::json::parse(R"({"dataset_root": "/a", "output_root": "/b"})"));
    EXPECT_EQ(cfg.preset, PresetName::WindowPlusEqualize);
    EXPECT_EQ(cfg.stripper_mode, StripperMode::Fallback);
    EXPECT_EQ(cfg.fallback.hu_low, 0.0);
    EXPECT_EQ(cfg.fallback.hu_high, 100.0);
    EXPECT_EQ(cfg.fallback.closing_radius_mm, 2.0);
    EXPECT_EQ(cfg.connectivity, Connectivity::Corners);
}

TEST(Config, RejectsInvalidDocuments) {
    for (const char* text : {
             R"({"dataset_root": "/a", "output_root": "/b", "colour": 1})",
             R"({"dataset_root": "/a", "output_root": "/b", "stripper": {"radius": 2}})",
             R"({"dataset_root": "/a", "output_root": "/b", "preset": "CLAHE"})",
             R"({"dataset_root": "/a", "output_root": "/b", "windows": {"CTA": [90, 0]}})",
             R"({"dataset_root": "/a", "output_root": "/b", "windows": {"DWI": [0, 1]}})",
             R"({"dataset_root": "/a", "output_root": "/b", "connectivity": 8})",
             R"({"dataset_root": "/a", "output_root": "/b", "stripper": {"mode": "external"}})",
             R"({"dataset_root": "/a", "output_root": "/b", "seed": "x"})",
             R"({"dataset_root": "/a", "output_root": "/a"})",
             R"({"output_root": "/b"})",
         }) {
        EXPECT_EQ(kind_of([&] { parse_config(nlohmann::json::parse(text)); }), ErrorKind::InvalidConfig)
            << text;
    }
}

TEST(Config, LoadFromFile) {
    ScratchDir dir("cfg");
    std::ofstream(dir / "c.json") << R"({"dataset_root": "d", "output_root": "o"})";
    EXPECT_EQ(load_config(dir / "c.json").output_root, dir.path() / "o");
    std::ofstream(dir / "bad.json") << "{not json";
    EXPECT_EQ(kind_of([&] { load_config(dir / "bad.json"); }), ErrorKind::InvalidConfig);
    EXPECT_EQ(kind_of([&] { load_config(dir / "none.json"); }), ErrorKind::InvalidConfig);
}

TEST(RunPipeline, WindowOnlyTwoSubjects) {
    ScratchDir dir("run");
    isles::testing::write_fixture_dataset(dir / "data", 2);
    const auto cfg = fixture_config(dir, PresetName::WindowOnly, 2);
    const auto manifest = run_pipeline(cfg);
    ASSERT_EQ(manifest.subjects.size(), 2u);
    std::size_t outputs = 0;
    for (const auto& s : manifest.subjects) {
        EXPECT_TRUE(s.ok) << s.error_message;
        EXPECT_GT(s.mask_voxels, 0u);
        for (const auto& o : s.outputs) {
            ++outputs;
            EXPECT_TRUE(fs::exists(o.path));
            EXPECT_EQ(o.sha256, sha256_hex(nifti::detail::read_file(o.path)));
            const auto h = nifti::read_header(o.path);
            EXPECT_EQ(h.datatype, nifti::Datatype::Float32);
            const auto v = nifti::read_volume(o.path);
            if (auto w = default_window(o.modality))
                for (double x : v.data()) {
                    ASSERT_GE(x, w->lower);
                    ASSERT_LE(x, w->upper);
                }
        }
    }
    EXPECT_EQ(outputs, 12u);
    EXPECT_TRUE(fs::exists(fixture_path(cfg.output_root, "sub-002", "tmax")));
    const auto j = manifest.to_json();
    EXPECT_EQ(j["subjects"][0]["status"], "ok");
    EXPECT_EQ(j["config"]["preset"], "WINDOW_ONLY");
}

TEST(RunPipeline, DimensionMismatchIsolatedToOneSubject) {
    ScratchDir dir("run");
    isles::testing::write_fixture_dataset(dir / "data", 2);
    nifti::write_volume(VolumeGrid::filled(Geometry({24, 20, 11}, {1, 1, 2}), 5.0),
                        fixture_path(dir / "data", "sub-002", "cta"), nifti::Datatype::Int16);
    const auto cfg = fixture_config(dir, PresetName::WindowPlusEqualize, 2);
    const auto manifest = run_pipeline(cfg);
    ASSERT_EQ(manifest.subjects.size(), 2u);
    EXPECT_TRUE(manifest.subjects[0].ok);
    EXPECT_FALSE(manifest.subjects[1].ok);
    EXPECT_EQ(manifest.subjects[1].error_kind, "DimensionMismatch");
    EXPECT_NE(manifest.subjects[1].error_message.find("CTA"), std::string::npos);
    EXPECT_TRUE(manifest.subjects[1].outputs.empty());
    EXPECT_FALSE(fs::exists(cfg.output_root / "sub-002"));
    EXPECT_EQ(manifest.error_count(), 1u);
}

TEST(RunPipeline, MissingNcctBecomesErrorEntry) {
    ScratchDir dir("run");
    isles::testing::write_fixture_dataset(dir / "data", 2);
    fs::remove(fixture_path(dir / "data", "sub-001", "ncct"));
    const auto manifest = run_pipeline(fixture_config(dir, PresetName::WindowOnly, 1));
    ASSERT_EQ(manifest.subjects.size(), 2u);
    EXPECT_EQ(manifest.subjects[0].subject_id, "sub-001");
    EXPECT_FALSE(manifest.subjects[0].ok);
    EXPECT_TRUE(manifest.subjects[1].ok);
}

TEST(RunPipeline, DigestsIdenticalAcrossRunsAndWorkers) {
    ScratchDir dir("det");
    isles::testing::write_fixture_dataset(dir / "data", 2);
    const auto a = run_pipeline(fixture_config(dir, PresetName::WindowPlusEqualize, 1));
    const auto b = run_pipeline(fixture_config(dir, PresetName::WindowPlusEqualize, 1));
    const auto c = run_pipeline(fixture_config(dir, PresetName::WindowPlusEqualize, 4));
    ASSERT_TRUE(a.all_ok());
    EXPECT_EQ(a.digests().size(), 2u);
    EXPECT_EQ(a.digests(), b.digests());
    EXPECT_EQ(a.digests(), c.digests());
}

TEST(RunPipeline, ExternalStripperCommandRecorded) {
    ScratchDir dir("ext");
    isles::testing::write_fixture_dataset(dir / "data", 1);
    // Stub: a mask of ones of the right shape.
    nifti::write_volume(VolumeGrid::filled(Geometry(isles::testing::fixture_dims, {1, 1, 2}), 1.0),
                        dir / "ones.nii.gz", nifti::Datatype::UInt8);
    std::ofstream(dir / "stub.sh") << "#!/bin/sh\ncp " << (dir / "ones.nii.gz").string() << " \"$2\"\n";
    fs::permissions(dir / "stub.sh", fs::perms::owner_all);
    auto cfg = fixture_config(dir, PresetName::WindowOnly, 1);
    cfg.stripper_mode = StripperMode::External;
    cfg.stripper_command = skullstrip::StripperCommand::parse((dir / "stub.sh").string() + " {input} {output}");
    const auto manifest = run_pipeline(cfg);
    ASSERT_TRUE(manifest.all_ok()) << manifest.subjects[0].error_message;
    EXPECT_EQ(manifest.subjects[0].mask_voxels, 24u * 20u * 12u);
    EXPECT_NE(manifest.subjects[0].tool_command.find("stub.sh"), std::string::npos);
    ScratchDir out("mf");
    write_manifest(manifest, out / "m.json");
    std::ifstream in(out / "m.json");
    const auto j = nlohmann::json::parse(in);
    EXPECT_NE(j["subjects"][0]["tool_command"].get<std::string>().find("stub.sh"), std::string::npos);
    EXPECT_EQ(j["config"]["stripper"]["mode"], "external");
}
