#pragma once

// Frame probabilities -> event lists.

#include <cstdint>
#include <string>
#include <vector>

#include "common.hpp"
#include "layers.hpp"
#include "records.hpp"

namespace cci {

struct Event {
    double time_ms = 0.0;
    std::string label;

    bool operator==(const Event&) const = default;
};

using EventList = std::vector<Event>;

inline constexpr double kQrsThreshold = 0.5;
inline constexpr double kQrsRefractoryMs = 200.0;

/// Candidate run of frames above threshold.
struct QrsCandidate {
    double center_frame = 0.0;  // probability-weighted
    double mass = 0.0;          // summed probability
};

inline std::vector<QrsCandidate> qrs_candidates(std::span<const double> p, double threshold = kQrsThreshold) {
    std::vector<QrsCandidate> out;
    std::size_t t = 0;
    while (t < p.size()) {
        if (!(p[t] > threshold)) {
            ++t;
            continue;
        }
        double mass = 0.0, moment = 0.0;
        for (; t < p.size() && p[t] > threshold; ++t) {
            mass += p[t];
            moment += p[t] * static_cast<double>(t);
        }
        out.push_back({moment / mass, mass});
    }
    return out;
}

/// Beats from per-frame QRS probabilities. Adjacent candidates closer than the
/// refractory gap are resolved left to right by dropping the smaller mass
/// (the later one on ties) until every gap is at least the refractory period.
inline EventList qrs_decisions(std::span<const double> probs, double frame_ms, double threshold = kQrsThreshold,
                               double refractory_ms = kQrsRefractoryMs) {
    if (!(frame_ms > 0.0)) throw Error("frame_ms must be positive");
    auto c = qrs_candidates(probs, threshold);
    for (bool changed = true; changed;) {
        changed = false;
        for (std::size_t i = 0; i + 1 < c.size(); ++i) {
            if ((c[i + 1].center_frame - c[i].center_frame) * frame_ms < refractory_ms) {
                c.erase(c.begin() + static_cast<std::ptrdiff_t>(c[i + 1].mass <= c[i].mass ? i + 1 : i));
                changed = true;
                break;
            }
        }
    }
    EventList out;
    for (const auto& k : c) out.push_back({k.center_frame * frame_ms, std::string(kBeatLabel)});
    return out;
}

template <typename S>
EventList qrs_decisions(const nn::Mat<S>& probs, double frame_ms) {
    if (probs.cols() != 1) throw Error("qrs_decisions expects T x 1 probabilities");
    std::vector<double> p(static_cast<std::size_t>(probs.rows()));
    for (Eigen::Index t = 0; t < probs.rows(); ++t) p[static_cast<std::size_t>(t)] = static_cast<double>(probs(t, 0));
    return qrs_decisions(p, frame_ms);
}

/// Per-frame argmax state, ties toward the lower index.
template <typename S>
std::vector<int> hs_states(const nn::Mat<S>& probs) {
    if (probs.cols() != 4) throw Error("hs_onsets expects T x 4 probabilities");
    std::vector<int> s(static_cast<std::size_t>(probs.rows()));
    for (Eigen::Index t = 0; t < probs.rows(); ++t) {
        int best = 0;
        for (int k = 1; k < 4; ++k)
            if (probs(t, k) > probs(t, best)) best = k;
        s[static_cast<std::size_t>(t)] = best;
    }
    return s;
}

inline EventList onsets_from_states(std::span<const int> states, double frame_ms) {
    EventList out;
    for (std::size_t t = 0; t < states.size(); ++t)
        if (t == 0 || states[t] != states[t - 1])
            out.push_back({static_cast<double>(t) * frame_ms, std::string(kHeartStates[static_cast<std::size_t>(states[t])])});
    return out;
}

template <typename S>
EventList hs_onsets(const nn::Mat<S>& probs, double frame_ms) {
    if (!(frame_ms > 0.0)) throw Error("frame_ms must be positive");
    return onsets_from_states(hs_states(probs), frame_ms);
}

/// Inverse of onsets_from_states on a grid of `frames` frames.
inline std::vector<int> states_from_onsets(const EventList& ev, double frame_ms, std::size_t frames) {
    std::vector<int> s(frames, 0);
    for (std::size_t i = 0; i < ev.size(); ++i) {
        const auto t0 = static_cast<std::size_t>(std::llround(ev[i].time_ms / frame_ms));
        const auto t1 = i + 1 < ev.size() ? static_cast<std::size_t>(std::llround(ev[i + 1].time_ms / frame_ms)) : frames;
        const int st = heart_state_index(ev[i].label);
        for (std::size_t t = t0; t < t1 && t < frames; ++t) s[t] = st;
    }
    return s;
}

} // namespace cci
