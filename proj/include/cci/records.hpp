#pragma once

// Signal records, their on-disk triple format, synthetic generators, and
// episode slicing with per-frame label derivation.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "common.hpp"

namespace cci {

inline constexpr std::array<std::string_view, 4> kHeartStates = {"S1", "systole", "S2", "diastole"};
inline constexpr std::string_view kBeatLabel = "beat";

inline int heart_state_index(std::string_view label) {
    for (std::size_t i = 0; i < kHeartStates.size(); ++i)
        if (kHeartStates[i] == label) return static_cast<int>(i);
    return -1;
}

struct Annotation {
    std::int64_t sample_index = 0;
    std::string label;

    bool operator==(const Annotation&) const = default;
};

struct SignalRecord {
    std::string id;
    Task task = Task::qrs;
    double fs_hz = 250.0;
    std::vector<float> samples;
    std::vector<Annotation> annotations;

    std::size_t size() const { return samples.size(); }
    double duration_s() const { return static_cast<double>(samples.size()) / fs_hz; }

    bool operator==(const SignalRecord&) const = default;
};

/// One fixed-length window with labels on the latent frame grid.
struct Episode {
    std::vector<double> signal;
    std::vector<int> frame_labels;
    int frame_len_samples = 4;
    std::string source_id;
    std::int64_t offset_samples = 0;

    std::size_t frames() const { return frame_labels.size(); }
};

/// Samples per latent frame, equal to the encoder's total pooling factor.
inline int default_frame_len(Task t) { return t == Task::qrs ? 4 : 16; }

struct LabelConfig {
    int frame_len = 4;
    double qrs_halfwidth_ms = 75.0;

    static LabelConfig for_task(Task t) { return {default_frame_len(t), 75.0}; }
};

namespace detail {

inline std::string annotation_kind(Task t) { return t == Task::qrs ? "beat" : "segment"; }

} // namespace detail

/// Throws cci::Error describing the first invariant the record violates.
inline void validate(const SignalRecord& r) {
    if (r.id.empty()) throw Error("record id is empty");
    if (!(r.fs_hz > 0.0) || !std::isfinite(r.fs_hz)) throw Error("fs_hz must be positive");
    for (std::size_t i = 0; i < r.samples.size(); ++i)
        if (!std::isfinite(r.samples[i]))
            throw Error("sample " + std::to_string(i) + " is not finite");
    const auto n = static_cast<std::int64_t>(r.samples.size());
    std::int64_t prev = -1;
    int prev_state = -1;
    for (const auto& a : r.annotations) {
        if (a.sample_index < 0 || a.sample_index >= n)
            throw Error("annotation out of range: sample_index " + std::to_string(a.sample_index));
        if (a.sample_index <= prev)
            throw Error("annotation sample_index not strictly increasing at " + std::to_string(a.sample_index));
        prev = a.sample_index;
        if (r.task == Task::qrs) {
            if (a.label != kBeatLabel) throw Error("invalid QRS annotation label '" + a.label + "'");
        } else {
            const int s = heart_state_index(a.label);
            if (s < 0) throw Error("invalid heart-sound annotation label '" + a.label + "'");
            if (prev_state >= 0 && s != (prev_state + 1) % 4)
                throw Error("heart-sound states out of cycle order at sample " + std::to_string(a.sample_index));
            prev_state = s;
        }
    }
}

// ---------------------------------------------------------------------------
// On-disk format: <id>.meta.json, <id>.f32 (little-endian float32), <id>.ann
// ---------------------------------------------------------------------------

namespace detail {

inline void write_f32_le(std::ostream& os, std::span<const float> v) {
    std::vector<unsigned char> buf(v.size() * 4);
    for (std::size_t i = 0; i < v.size(); ++i) {
        std::uint32_t bits;
        std::memcpy(&bits, &v[i], 4);
        for (int b = 0; b < 4; ++b) buf[i * 4 + b] = static_cast<unsigned char>((bits >> (8 * b)) & 0xFFu);
    }
    os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

inline std::vector<float> read_f32_le(std::istream& is, std::size_t nbytes) {
    std::vector<unsigned char> buf(nbytes);
    is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(nbytes));
    std::vector<float> out(nbytes / 4);
    for (std::size_t i = 0; i < out.size(); ++i) {
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(buf[i * 4 + b]) << (8 * b);
        std::memcpy(&out[i], &bits, 4);
    }
    return out;
}

inline std::filesystem::path record_stem(const std::filesystem::path& p) {
    const std::string s = p.string();
    for (std::string_view ext : {".meta.json", ".f32", ".ann"}) {
        if (s.size() > ext.size() && s.ends_with(ext)) return s.substr(0, s.size() - ext.size());
    }
    return p;
}

} // namespace detail

inline void save_record(const SignalRecord& r, const std::filesystem::path& dir) {
    validate(r);
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    const auto stem = dir / r.id;

    nlohmann::ordered_json meta;
    meta["id"] = r.id;
    meta["task"] = std::string(to_string(r.task));
    meta["fs_hz"] = r.fs_hz;
    meta["n_samples"] = r.samples.size();
    meta["annotation_kind"] = detail::annotation_kind(r.task);

    auto open = [](const std::filesystem::path& p) {
        std::ofstream os(p, std::ios::binary | std::ios::trunc);
        if (!os) throw Error("cannot write " + p.string());
        return os;
    };
    {
        auto os = open(stem.string() + ".meta.json");
        os << meta.dump(2) << '\n';
    }
    {
        auto os = open(stem.string() + ".f32");
        detail::write_f32_le(os, r.samples);
    }
    {
        auto os = open(stem.string() + ".ann");
        for (const auto& a : r.annotations) os << a.sample_index << '\t' << a.label << '\n';
        if (!os) throw Error("cannot write " + stem.string() + ".ann");
    }
}

/// Accepts the stem (`dir/id`) or any of the three member files.
inline SignalRecord load_record(const std::filesystem::path& path) {
    const auto stem = detail::record_stem(path).string();
    const std::string meta_path = stem + ".meta.json";
    const std::string f32_path = stem + ".f32";
    const std::string ann_path = stem + ".ann";

    std::ifstream mf(meta_path);
    if (!mf) throw Error("missing file: " + meta_path);
    nlohmann::json meta;
    try {
        mf >> meta;
    } catch (const std::exception& e) {
        throw Error("malformed metadata " + meta_path + ": " + e.what());
    }

    SignalRecord r;
    try {
        r.id = meta.at("id").get<std::string>();
        r.task = task_from_string(meta.at("task").get<std::string>());
        r.fs_hz = meta.at("fs_hz").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw Error("metadata field missing or invalid in " + meta_path + ": " + e.what());
    }
    const auto n = meta.at("n_samples").get<std::int64_t>();
    if (n < 0) throw Error("n_samples is negative");
    if (meta.contains("annotation_kind") && meta["annotation_kind"] != detail::annotation_kind(r.task))
        throw Error("annotation_kind does not match task");

    std::ifstream sf(f32_path, std::ios::binary | std::ios::ate);
    if (!sf) throw Error("missing file: " + f32_path);
    const auto bytes = static_cast<std::size_t>(sf.tellg());
    if (bytes % 4 != 0 || bytes / 4 != static_cast<std::size_t>(n))
        throw Error("length mismatch: n_samples=" + std::to_string(n) + " but " + f32_path + " holds " +
                    std::to_string(bytes / 4) + " samples");
    sf.seekg(0);
    r.samples = detail::read_f32_le(sf, bytes);

    std::ifstream af(ann_path);
    if (!af) throw Error("missing file: " + ann_path);
    std::string line;
    int lineno = 0;
    while (std::getline(af, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos) throw Error(ann_path + ":" + std::to_string(lineno) + ": expected TAB");
        Annotation a;
        try {
            std::size_t used = 0;
            a.sample_index = std::stoll(line.substr(0, tab), &used);
            if (used != tab) throw std::invalid_argument("trailing");
        } catch (const std::exception&) {
            throw Error(ann_path + ":" + std::to_string(lineno) + ": bad sample_index");
        }
        a.label = line.substr(tab + 1);
        r.annotations.push_back(std::move(a));
    }
    validate(r);
    return r;
}

/// Lists record stems (`dir/id`) in a directory, sorted by id.
inline std::vector<std::filesystem::path> list_records(const std::filesystem::path& dir) {
    std::vector<std::filesystem::path> out;
    if (!std::filesystem::is_directory(dir)) throw Error("not a directory: " + dir.string());
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        const auto name = e.path().filename().string();
        if (name.ends_with(".meta.json")) out.push_back(detail::record_stem(e.path()));
    }
    std::sort(out.begin(), out.end());
    return out;
}

inline std::vector<SignalRecord> load_records(const std::filesystem::path& dir) {
    std::vector<SignalRecord> out;
    for (const auto& p : list_records(dir)) out.push_back(load_record(p));
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic generators
// ---------------------------------------------------------------------------

struct SynthConfig {
    double duration_s = 60.0;
    double fs_hz = 250.0;
    double heart_rate_bpm = 72.0;
    double rr_std = 0.05;             // relative RR jitter (fraction of mean RR)
    double amplitude_jitter = 0.1;    // relative per-beat amplitude jitter
    double noise_std = 0.01;          // additive white measurement noise
    double baseline_wander = 0.05;    // amplitude of a slow sinusoidal drift

    // ECG beat shape: Gaussian bumps relative to the R peak.
    double p_amp = 0.15, p_offset_ms = -180.0, p_width_ms = 25.0;
    double q_amp = -0.12, q_offset_ms = -28.0, q_width_ms = 9.0;
    double r_amp = 1.0, r_width_ms = 11.0;
    double s_amp = -0.25, s_offset_ms = 28.0, s_width_ms = 10.0;
    double t_amp = 0.3, t_offset_ms = 260.0, t_width_ms = 55.0;
    double inverted_fraction = 0.0;   // fraction of beats with negated QRS
    bool decoupled_p = false;         // P waves follow an independent atrial rhythm
    double atrial_rate_bpm = 90.0;

    // PCG.
    double s1_ms = 120.0, s2_ms = 100.0;
    double s1_freq_hz = 45.0, s2_freq_hz = 65.0;
    double s1_amp = 1.0, s2_amp = 0.7;
    double floor_std = 0.03;

    void check() const {
        if (!(duration_s > 0.0)) throw Error("duration_s must be positive");
        if (!(fs_hz > 0.0)) throw Error("fs_hz must be positive");
        if (!(heart_rate_bpm > 0.0)) throw Error("heart_rate_bpm must be positive");
    }
};

namespace detail {

inline void add_bump(std::vector<double>& x, double fs, double center_s, double amp, double width_ms) {
    if (amp == 0.0) return;
    const double sigma = width_ms * 1e-3 * fs;
    const double c = center_s * fs;
    const auto lo = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(c - 5 * sigma)));
    const auto hi = std::min<std::int64_t>(static_cast<std::int64_t>(x.size()) - 1,
                                           static_cast<std::int64_t>(std::ceil(c + 5 * sigma)));
    for (auto i = lo; i <= hi; ++i) {
        const double u = (static_cast<double>(i) - c) / sigma;
        x[static_cast<std::size_t>(i)] += amp * std::exp(-0.5 * u * u);
    }
}

inline double draw_rr(std::mt19937_64& rng, double mean_rr, double rel_std) {
    std::normal_distribution<double> n01(0.0, 1.0);
    const double rr = mean_rr * (1.0 + rel_std * n01(rng));
    return std::clamp(rr, std::max(0.3, 0.5 * mean_rr), 1.5 * mean_rr + 0.3);
}

inline std::vector<float> finish(const std::vector<double>& x, const SynthConfig& cfg, std::mt19937_64& rng) {
    std::normal_distribution<double> n01(0.0, 1.0);
    std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
    const double ph = phase(rng);
    std::vector<float> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double t = static_cast<double>(i) / cfg.fs_hz;
        const double wander = cfg.baseline_wander * std::sin(2.0 * std::numbers::pi * 0.2 * t + ph);
        out[i] = static_cast<float>(x[i] + wander + cfg.noise_std * n01(rng));
    }
    return out;
}

} // namespace detail

/// Gaussian-bump ECG with one "beat" annotation per emitted QRS.
inline SignalRecord synth_ecg(const SynthConfig& cfg, std::uint64_t seed, std::string id = {}) {
    cfg.check();
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::normal_distribution<double> n01(0.0, 1.0);

    const auto n = static_cast<std::size_t>(std::llround(cfg.duration_s * cfg.fs_hz));
    std::vector<double> x(n, 0.0);
    const double mean_rr = 60.0 / cfg.heart_rate_bpm;

    SignalRecord r;
    r.id = id.empty() ? "ecg_" + std::to_string(seed) : std::move(id);
    r.task = Task::qrs;
    r.fs_hz = cfg.fs_hz;

    double t = u01(rng) * mean_rr;
    std::int64_t last_idx = -1;
    while (t < cfg.duration_s) {
        const double gain = std::max(0.2, 1.0 + cfg.amplitude_jitter * n01(rng));
        const double sign = u01(rng) < cfg.inverted_fraction ? -1.0 : 1.0;
        const auto idx = static_cast<std::int64_t>(std::llround(t * cfg.fs_hz));
        if (idx < static_cast<std::int64_t>(n) && idx > last_idx) {
            r.annotations.push_back({idx, std::string(kBeatLabel)});
            last_idx = idx;
        }
        const double ms = 1e-3;
        detail::add_bump(x, cfg.fs_hz, t + cfg.q_offset_ms * ms, sign * gain * cfg.q_amp, cfg.q_width_ms);
        detail::add_bump(x, cfg.fs_hz, t, sign * gain * cfg.r_amp, cfg.r_width_ms);
        detail::add_bump(x, cfg.fs_hz, t + cfg.s_offset_ms * ms, sign * gain * cfg.s_amp, cfg.s_width_ms);
        detail::add_bump(x, cfg.fs_hz, t + cfg.t_offset_ms * ms, sign * gain * cfg.t_amp, cfg.t_width_ms);
        if (!cfg.decoupled_p)
            detail::add_bump(x, cfg.fs_hz, t + cfg.p_offset_ms * ms, gain * cfg.p_amp, cfg.p_width_ms);
        t += detail::draw_rr(rng, mean_rr, cfg.rr_std);
    }
    if (cfg.decoupled_p) {
        const double atrial_rr = 60.0 / cfg.atrial_rate_bpm;
        for (double tp = u01(rng) * atrial_rr; tp < cfg.duration_s; tp += detail::draw_rr(rng, atrial_rr, cfg.rr_std))
            detail::add_bump(x, cfg.fs_hz, tp, cfg.p_amp, cfg.p_width_ms);
    }
    r.samples = detail::finish(x, cfg, rng);
    return r;
}

/// Damped-sinusoid S1/S2 bursts over a low-amplitude floor, annotated with
/// segment onsets that tile the record.
inline SignalRecord synth_pcg(const SynthConfig& cfg, std::uint64_t seed, std::string id = {}) {
    cfg.check();
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::normal_distribution<double> n01(0.0, 1.0);

    const auto n = static_cast<std::size_t>(std::llround(cfg.duration_s * cfg.fs_hz));
    std::vector<double> x(n, 0.0);
    const double mean_rr = 60.0 / cfg.heart_rate_bpm;

    SignalRecord r;
    r.id = id.empty() ? "pcg_" + std::to_string(seed) : std::move(id);
    r.task = Task::heartsound;
    r.fs_hz = cfg.fs_hz;

    auto burst = [&](double start_s, double dur_s, double freq, double amp) {
        const auto i0 = static_cast<std::int64_t>(std::ceil(start_s * cfg.fs_hz));
        const auto i1 = static_cast<std::int64_t>(std::floor((start_s + dur_s) * cfg.fs_hz));
        const double ph = u01(rng) * 2.0 * std::numbers::pi;
        for (auto i = std::max<std::int64_t>(i0, 0); i <= i1 && i < static_cast<std::int64_t>(n); ++i) {
            const double u = (static_cast<double>(i) / cfg.fs_hz - start_s) / dur_s;
            const double env = std::sin(std::numbers::pi * u) * std::exp(-2.5 * u);
            x[static_cast<std::size_t>(i)] += amp * env * std::sin(2.0 * std::numbers::pi * freq * u * dur_s + ph);
        }
    };

    // Start part-way into a cycle so records do not all begin with S1.
    double cycle_start = -u01(rng) * mean_rr;
    std::int64_t last_idx = -1;
    while (cycle_start < cfg.duration_s) {
        const double rr = detail::draw_rr(rng, mean_rr, cfg.rr_std);
        const double gain = std::max(0.2, 1.0 + cfg.amplitude_jitter * n01(rng));
        const double s1 = cfg.s1_ms * 1e-3 * (1.0 + 0.05 * n01(rng));
        const double s2 = cfg.s2_ms * 1e-3 * (1.0 + 0.05 * n01(rng));
        const double systole = std::max(0.08, 0.3 * rr - 0.05);
        std::array<double, 4> onsets = {cycle_start, cycle_start + s1, cycle_start + s1 + systole,
                                        cycle_start + s1 + systole + s2};
        burst(onsets[0], s1, cfg.s1_freq_hz, gain * cfg.s1_amp);
        burst(onsets[2], s2, cfg.s2_freq_hz, gain * cfg.s2_amp);
        const double cycle_end = cycle_start + rr;
        for (int s = 0; s < 4; ++s) {
            const double seg_end = s < 3 ? onsets[static_cast<std::size_t>(s) + 1] : cycle_end;
            if (seg_end <= 0.0) continue;
            auto idx = static_cast<std::int64_t>(std::llround(std::max(0.0, onsets[static_cast<std::size_t>(s)]) * cfg.fs_hz));
            if (last_idx < 0) idx = 0;
            if (idx >= static_cast<std::int64_t>(n) || idx <= last_idx) continue;
            r.annotations.push_back({idx, std::string(kHeartStates[static_cast<std::size_t>(s)])});
            last_idx = idx;
        }
        cycle_start = cycle_end;
    }
    SynthConfig floor_cfg = cfg;
    floor_cfg.noise_std = cfg.floor_std;
    floor_cfg.baseline_wander = 0.0;
    r.samples = detail::finish(x, floor_cfg, rng);
    return r;
}

inline SignalRecord synth(Task task, const SynthConfig& cfg, std::uint64_t seed, std::string id = {}) {
    return task == Task::qrs ? synth_ecg(cfg, seed, std::move(id)) : synth_pcg(cfg, seed, std::move(id));
}

// ---------------------------------------------------------------------------
// Frame labels and slicing
// ---------------------------------------------------------------------------

/// Per-frame labels for the window [start, start + length). QRS frames are 1
/// when their center lies within the configured half-width of any beat; heart
/// sound frames carry the state of the segment containing their center.
inline std::vector<int> labelize(std::int64_t start, std::int64_t length, std::span<const Annotation> annotations,
                                 Task task, double fs_hz, const LabelConfig& lc) {
    if (lc.frame_len <= 0 || length % lc.frame_len != 0)
        throw Error("window length is not a multiple of the frame length");
    const auto frames = length / lc.frame_len;
    std::vector<int> labels(static_cast<std::size_t>(frames), 0);
    const double half = 0.5 * static_cast<double>(lc.frame_len - 1);
    auto center = [&](std::int64_t f) { return static_cast<double>(start + f * lc.frame_len) + half; };

    if (task == Task::qrs) {
        const double hw = lc.qrs_halfwidth_ms * 1e-3 * fs_hz;
        for (const auto& a : annotations) {
            const double b = static_cast<double>(a.sample_index);
            // frames whose centers fall in [b - hw, b + hw]
            const auto f0 = std::max<std::int64_t>(
                0, static_cast<std::int64_t>(std::ceil((b - hw - static_cast<double>(start) - half) / lc.frame_len)));
            const auto f1 = std::min<std::int64_t>(
                frames - 1, static_cast<std::int64_t>(std::floor((b + hw - static_cast<double>(start) - half) / lc.frame_len)));
            for (auto f = f0; f <= f1; ++f) labels[static_cast<std::size_t>(f)] = 1;
        }
        return labels;
    }

    std::size_t seg = 0;
    for (std::int64_t f = 0; f < frames; ++f) {
        const double c = center(f);
        while (seg + 1 < annotations.size() && static_cast<double>(annotations[seg + 1].sample_index) <= c) ++seg;
        if (annotations.empty() || static_cast<double>(annotations[seg].sample_index) > c)
            throw Error("heart-sound window not covered by segment annotations at frame " + std::to_string(f));
        const int s = heart_state_index(annotations[seg].label);
        if (s < 0) throw Error("invalid heart-sound label '" + annotations[seg].label + "'");
        labels[static_cast<std::size_t>(f)] = s;
    }
    return labels;
}

/// Consecutive non-overlapping windows; a trailing remainder is dropped.
inline std::vector<Episode> slice_episodes(const SignalRecord& r, double episode_seconds, const LabelConfig& lc) {
    const auto len = static_cast<std::int64_t>(std::llround(episode_seconds * r.fs_hz));
    if (len <= 0) throw Error("episode length must be positive");
    std::vector<Episode> out;
    const auto n = static_cast<std::int64_t>(r.samples.size());
    for (std::int64_t off = 0; off + len <= n; off += len) {
        Episode e;
        e.signal.assign(r.samples.begin() + off, r.samples.begin() + off + len);
        e.frame_labels = labelize(off, len, r.annotations, r.task, r.fs_hz, lc);
        e.frame_len_samples = lc.frame_len;
        e.source_id = r.id;
        e.offset_samples = off;
        out.push_back(std::move(e));
    }
    return out;
}

inline std::vector<Episode> slice_episodes(const SignalRecord& r, double episode_seconds) {
    return slice_episodes(r, episode_seconds, LabelConfig::for_task(r.task));
}

} // namespace cci
