#pragma once

// Noise stress test: Er mean and spread across fold models over a grid of
// noise kinds and SNR levels.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "common.hpp"
#include "dsp.hpp"
#include "evalx.hpp"
#include "network.hpp"
#include "svg.hpp"

namespace cci {

/// Fold models trained under one mode.
template <typename S>
struct ModelSet {
    std::string mode;
    std::vector<Model<S>> models;
};

struct NstRow {
    std::string mode;
    std::string noise_kind;        // "clean" for the control row
    std::optional<double> snr_db;  // absent for the control row
    double er_mean = 0.0;
    double er_std = 0.0;
    int n_models = 0;
};

/// Noise for one record at the record's rate, unscaled.
inline dsp::Signal noise_for_record(const dsp::NoiseSpec& spec, const SignalRecord& r, std::uint64_t seed) {
    spec.check();
    const std::uint64_t s = fnv1a(r.id, seed ^ 0x9e3779b97f4a7c15ULL);
    if (spec.kind == dsp::NoiseKind::gaussian_inband) {
        const auto& b = *spec.band;
        return dsp::make_inband_gaussian(r.fs_hz, b[0], b[1], r.samples.size(), s);
    }
    dsp::Signal src = *spec.source;
    if (spec.source_fs_hz > 0.0 && spec.source_fs_hz != r.fs_hz) src = dsp::resample(src, spec.source_fs_hz, r.fs_hz);
    if (src.empty()) throw Error("noise source is empty after resampling");
    std::mt19937_64 rng(s);
    std::uniform_int_distribution<std::size_t> off(0, src.size() - 1);
    return dsp::tile(src, r.samples.size(), off(rng));
}

inline SignalRecord contaminate(const SignalRecord& r, const dsp::NoiseSpec& spec, double snr_db, std::uint64_t seed) {
    const std::vector<double> x(r.samples.begin(), r.samples.end());
    const auto mixed = dsp::mix_at_snr(x, noise_for_record(spec, r, seed), snr_db);
    SignalRecord out = r;
    out.samples.assign(mixed.begin(), mixed.end());
    return out;
}

namespace detail {

inline void mean_std(const std::vector<double>& v, double& mean, double& sd) {
    mean = sd = std::numeric_limits<double>::quiet_NaN();
    if (v.empty()) return;
    mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    sd = 0.0;
    if (v.size() < 2) return;
    for (double x : v) sd += (x - mean) * (x - mean);
    sd = std::sqrt(sd / static_cast<double>(v.size() - 1));
}

template <typename S>
NstRow grid_cell(const ModelSet<S>& set, const std::vector<SignalRecord>& recs, std::string kind, std::optional<double> snr) {
    std::vector<double> ers;
    for (const auto& m : set.models) {
        const auto er = evaluate_records(m, recs).aggregate.er;
        if (er) ers.push_back(*er);
    }
    NstRow row{set.mode, std::move(kind), snr, 0.0, 0.0, static_cast<int>(set.models.size())};
    mean_std(ers, row.er_mean, row.er_std);
    return row;
}

} // namespace detail

/// Contamination is applied to raw records, before preprocessing. Rows: one
/// clean control row per set, then every (noise kind, SNR) cell.
template <typename S>
std::vector<NstRow> run_noise_stress(const std::vector<ModelSet<S>>& sets, const std::vector<SignalRecord>& records,
                                     const std::vector<dsp::NoiseSpec>& specs, const std::vector<double>& snr_grid_db,
                                     std::uint64_t seed) {
    if (sets.empty()) throw Error("noise stress needs at least one model");
    for (const auto& s : sets)
        if (s.models.empty()) throw Error("model set '" + s.mode + "' is empty");
    for (const auto& sp : specs) sp.check();
    std::vector<NstRow> rows;
    for (const auto& set : sets) rows.push_back(detail::grid_cell(set, records, "clean", std::nullopt));
    for (std::size_t k = 0; k < specs.size(); ++k) {
        for (double snr : snr_grid_db) {
            std::vector<SignalRecord> noisy;
            noisy.reserve(records.size());
            for (const auto& r : records) noisy.push_back(contaminate(r, specs[k], snr, seed + specs[k].seed + 1000003ULL * k));
            for (const auto& set : sets)
                rows.push_back(detail::grid_cell(set, noisy, std::string(dsp::to_string(specs[k].kind)), snr));
        }
    }
    return rows;
}

/// CSV with columns noise_kind, snr_db, er_mean, er_std, n_models for one mode.
inline void write_nst_csv(const std::filesystem::path& path, const std::vector<NstRow>& rows, const std::string& mode) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw Error("cannot write " + path.string());
    os << "noise_kind,snr_db,er_mean,er_std,n_models\n";
    os.precision(6);
    for (const auto& r : rows) {
        if (r.mode != mode) continue;
        os << r.noise_kind << ',';
        if (r.snr_db) os << *r.snr_db;
        os << ',' << r.er_mean << ',' << r.er_std << ',' << r.n_models << '\n';
    }
}

/// One Er-vs-SNR chart per noise kind, one series per training mode.
inline std::vector<std::filesystem::path> write_nst_plots(const std::filesystem::path& dir, const std::vector<NstRow>& rows) {
    std::vector<std::string> kinds, modes;
    for (const auto& r : rows) {
        if (r.snr_db && std::find(kinds.begin(), kinds.end(), r.noise_kind) == kinds.end()) kinds.push_back(r.noise_kind);
        if (std::find(modes.begin(), modes.end(), r.mode) == modes.end()) modes.push_back(r.mode);
    }
    std::vector<std::filesystem::path> out;
    for (const auto& k : kinds) {
        std::vector<svg::Series> series;
        for (const auto& m : modes) {
            svg::Series s{m, {}, {}, {}};
            for (const auto& r : rows)
                if (r.mode == m && r.noise_kind == k && r.snr_db) {
                    s.x.push_back(*r.snr_db);
                    s.y.push_back(r.er_mean);
                    s.err.push_back(std::isfinite(r.er_std) ? r.er_std : 0.0);
                }
            series.push_back(std::move(s));
        }
        const auto p = dir / ("nst_" + k + ".svg");
        svg::line_chart(p, "Er vs SNR (" + k + ")", "SNR (dB)", "Er (%)", series);
        out.push_back(p);
    }
    return out;
}

} // namespace cci
