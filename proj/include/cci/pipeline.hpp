#pragma once

// Task preprocessing: raw record -> target-rate filtered record -> labeled,
// standardized episodes.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "common.hpp"
#include "dsp.hpp"
#include "records.hpp"

namespace cci {

struct PreprocessConfig {
    double qrs_band_lo_hz = 0.5;
    double qrs_band_hi_hz = 50.0;
    int wiener_window = 41;  // ~50 ms at 800 Hz, odd

    static PreprocessConfig defaults() { return {}; }
};

/// Resample to the task rate and filter: QRS band-pass 0.5-50 Hz, heart sound
/// local Wiener. Annotation indices are rescaled to the new rate.
inline SignalRecord preprocess_record(const SignalRecord& r, const PreprocessConfig& pc = {}) {
    validate(r);
    const double fs = target_fs(r.task);
    const std::vector<double> raw(r.samples.begin(), r.samples.end());
    dsp::Signal x = dsp::resample(raw, r.fs_hz, fs);
    if (r.task == Task::qrs)
        x = dsp::bandpass(x, fs, pc.qrs_band_lo_hz, pc.qrs_band_hi_hz);
    else
        x = dsp::wiener_local(x, pc.wiener_window);

    SignalRecord out;
    out.id = r.id;
    out.task = r.task;
    out.fs_hz = fs;
    out.samples.assign(x.begin(), x.end());
    const double ratio = fs / r.fs_hz;
    const auto n = static_cast<std::int64_t>(out.samples.size());
    for (const auto& a : r.annotations) {
        const auto idx = std::min<std::int64_t>(n - 1, std::llround(static_cast<double>(a.sample_index) * ratio));
        if (!out.annotations.empty() && idx <= out.annotations.back().sample_index) {
            // Collapsed by downsampling; a duplicate beat is dropped, a heart-sound state keeps its slot.
            if (r.task == Task::qrs) continue;
            throw Error("annotations of record " + r.id + " collide after resampling");
        }
        out.annotations.push_back({idx, a.label});
    }
    return out;
}

/// Zero-centers and standardizes every episode in place.
inline void normalize_episodes(std::vector<Episode>& eps) {
    for (auto& e : eps) e.signal = dsp::standardize(dsp::zero_center(e.signal));
}

/// Slices an already preprocessed record into normalized episodes.
inline std::vector<Episode> episodes_of(const SignalRecord& pre) {
    auto eps = slice_episodes(pre, episode_seconds(pre.task));
    normalize_episodes(eps);
    return eps;
}

inline std::vector<Episode> prepare_episodes(const std::vector<SignalRecord>& raw, const PreprocessConfig& pc = {}) {
    std::vector<Episode> out;
    for (const auto& r : raw) {
        auto eps = episodes_of(preprocess_record(r, pc));
        out.insert(out.end(), std::make_move_iterator(eps.begin()), std::make_move_iterator(eps.end()));
    }
    return out;
}

/// One JSON object per line: source_id, offset_samples, frame_len_samples,
/// frame_labels, signal.
inline void save_episodes_jsonl(const std::vector<Episode>& eps, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw Error("cannot write " + path.string());
    for (const auto& e : eps) {
        nlohmann::ordered_json j;
        j["source_id"] = e.source_id;
        j["offset_samples"] = e.offset_samples;
        j["frame_len_samples"] = e.frame_len_samples;
        j["frame_labels"] = e.frame_labels;
        j["signal"] = e.signal;
        os << j.dump() << '\n';
    }
}

inline std::vector<Episode> load_episodes_jsonl(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw Error("cannot open " + path.string());
    std::vector<Episode> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            Episode e;
            e.source_id = j.at("source_id").get<std::string>();
            e.offset_samples = j.at("offset_samples").get<std::int64_t>();
            e.frame_len_samples = j.at("frame_len_samples").get<int>();
            e.frame_labels = j.at("frame_labels").get<std::vector<int>>();
            e.signal = j.at("signal").get<std::vector<double>>();
            out.push_back(std::move(e));
        } catch (const nlohmann::json::exception& ex) {
            throw Error(path.string() + ":" + std::to_string(lineno) + ": " + ex.what());
        }
    }
    return out;
}

} // namespace cci
