#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "cci/nst.hpp"

using namespace cci;
namespace fs = std::filesystem;

namespace {

SignalRecord ecg(std::uint64_t seed, const std::string& id) {
    SynthConfig sc;
    sc.duration_s = 22;
    sc.fs_hz = 360;
    return synth(Task::qrs, sc, seed, id);
}

dsp::NoiseSpec inband() {
    dsp::NoiseSpec s;
    s.band = std::array<double, 2>{0.5, 50.0};
    return s;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

} // namespace

TEST(Contaminate, AchievesSnrAndIsDeterministic) {
    const auto r = ecg(1, "r1");
    const auto a = contaminate(r, inband(), 6.0, 9), b = contaminate(r, inband(), 6.0, 9);
    EXPECT_EQ(a.samples, b.samples);
    std::vector<double> x(r.samples.begin(), r.samples.end()), n(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) n[i] = static_cast<double>(a.samples[i]) - x[i];
    EXPECT_NEAR(10 * std::log10(dsp::mean_power(x) / dsp::mean_power(n)), 6.0, 0.01);
    EXPECT_EQ(a.annotations.size(), r.annotations.size());
    // different record ids draw different noise
    auto r2 = r;
    r2.id = "r2";
    EXPECT_NE(contaminate(r2, inband(), 6.0, 9).samples, a.samples);
}

TEST(Contaminate, RecordedNoiseIsTiled) {
    const auto r = ecg(2, "r");
    dsp::NoiseSpec s;
    s.kind = dsp::NoiseKind::em;
    s.source = std::vector<double>{1, -1, 2, -2, 0.5};
    s.source_fs_hz = r.fs_hz;
    const auto n = noise_for_record(s, r, 4);
    ASSERT_EQ(n.size(), r.samples.size());
    for (std::size_t i = 5; i < n.size(); ++i) ASSERT_EQ(n[i], n[i - 5]);
    dsp::NoiseSpec missing;
    missing.kind = dsp::NoiseKind::ma;
    EXPECT_THROW(noise_for_record(missing, r, 4), Error);
}

TEST(Stress, GridRowsAndFiles) {
    const std::vector<SignalRecord> recs{ecg(3, "a"), ecg(4, "b")};
    std::vector<ModelSet<float>> sets(2);
    sets[0].mode = "baseline";
    sets[1].mode = "cci";
    for (int k = 0; k < 3; ++k) {
        sets[0].models.push_back(init_params<float>(ModelShape::for_task(Task::qrs, 8, 16), 10 + k));
        sets[1].models.push_back(init_params<float>(ModelShape::for_task(Task::qrs, 8, 16), 20 + k));
    }
    const auto rows = run_noise_stress(sets, recs, {inband()}, {0.0, 12.0}, 5);
    ASSERT_EQ(rows.size(), 2u + 2u * 2u);
    EXPECT_EQ(rows[0].noise_kind, "clean");
    EXPECT_FALSE(rows[0].snr_db);
    for (const auto& r : rows) {
        EXPECT_EQ(r.n_models, 3);
        EXPECT_GE(r.er_mean, 0.0);
        EXPECT_GE(r.er_std, 0.0);
    }
    // std is the sample standard deviation over fold models
    std::vector<double> ers;
    for (const auto& m : sets[0].models) ers.push_back(*evaluate_records(m, recs).aggregate.er);
    const double mu = (ers[0] + ers[1] + ers[2]) / 3;
    double ss = 0;
    for (double e : ers) ss += (e - mu) * (e - mu);
    EXPECT_NEAR(rows[0].er_mean, mu, 1e-9);
    EXPECT_NEAR(rows[0].er_std, std::sqrt(ss / 2), 1e-9);

    const auto dir = fs::temp_directory_path() / "cci_nst";
    fs::remove_all(dir);
    fs::create_directories(dir);
    write_nst_csv(dir / "baseline.csv", rows, "baseline");
    const auto csv = slurp(dir / "baseline.csv");
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "noise_kind,snr_db,er_mean,er_std,n_models");
    EXPECT_NE(csv.find("\nclean,,"), std::string::npos);
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
    const auto plots = write_nst_plots(dir, rows);
    ASSERT_EQ(plots.size(), 1u);
    EXPECT_NE(slurp(plots[0]).find("<svg"), std::string::npos);
}

TEST(Stress, RejectsEmptySets) {
    EXPECT_THROW(run_noise_stress<float>({}, {ecg(1, "a")}, {inband()}, {0.0}, 1), Error);
    std::vector<ModelSet<float>> sets(1);
    sets[0].mode = "x";
    EXPECT_THROW(run_noise_stress(sets, {ecg(1, "a")}, {inband()}, {0.0}, 1), Error);
}
