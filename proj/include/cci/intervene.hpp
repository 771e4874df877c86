#pragma once

// Frame-level do-operations. zero_rhythm erases the target window (rhythm
// intervention); invert_morph negates it (morphology intervention).

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "common.hpp"

namespace cci {

enum class InterventionKind { zero_rhythm, invert_morph };

inline std::string_view to_string(InterventionKind k) {
    return k == InterventionKind::zero_rhythm ? "zero_rhythm" : "invert_morph";
}

inline InterventionKind intervention_from_string(std::string_view s) {
    if (s == "zero_rhythm" || s == "ar") return InterventionKind::zero_rhythm;
    if (s == "invert_morph" || s == "am") return InterventionKind::invert_morph;
    throw Error("unknown intervention kind '" + std::string(s) + "'");
}

struct InterventionSpec {
    InterventionKind kind = InterventionKind::zero_rhythm;
    int target_frame = 0;     // first covered frame
    int frames_covered = 1;   // contiguous frames starting at target_frame
    int frame_len_samples = 4;

    int end_frame() const { return target_frame + frames_covered; }
    bool covers(int frame) const { return frame >= target_frame && frame < end_frame(); }
};

/// 0 on [tau, tau + w), 1 elsewhere.
inline std::vector<int> build_mask(int frames, int tau, int w) {
    if (frames <= 0 || w < 1 || tau < 0 || tau + w > frames)
        throw Error("intervention window [" + std::to_string(tau) + ", " + std::to_string(tau + w) +
                    ") outside [0, " + std::to_string(frames) + ")");
    std::vector<int> mask(static_cast<std::size_t>(frames), 1);
    for (int t = tau; t < tau + w; ++t) mask[static_cast<std::size_t>(t)] = 0;
    return mask;
}

/// Applies the do-operation. Samples outside the target window are copied
/// unchanged.
template <typename S>
std::vector<S> apply_do(std::span<const S> x, const InterventionSpec& spec) {
    if (spec.frame_len_samples <= 0 || x.size() % static_cast<std::size_t>(spec.frame_len_samples) != 0)
        throw Error("apply_do: episode length is not a multiple of frame_len_samples");
    const int frames = static_cast<int>(x.size() / static_cast<std::size_t>(spec.frame_len_samples));
    const auto mask = build_mask(frames, spec.target_frame, spec.frames_covered);

    std::vector<S> y(x.begin(), x.end());
    const auto fl = static_cast<std::size_t>(spec.frame_len_samples);
    for (int t = 0; t < frames; ++t) {
        if (mask[static_cast<std::size_t>(t)] != 0) continue;
        for (std::size_t i = static_cast<std::size_t>(t) * fl; i < static_cast<std::size_t>(t + 1) * fl; ++i) {
            if (spec.kind == InterventionKind::zero_rhythm)
                y[i] = S(0);
            else
                y[i] = -x[i];
        }
    }
    return y;
}

template <typename S>
std::vector<S> apply_do(const std::vector<S>& x, const InterventionSpec& spec) {
    return apply_do(std::span<const S>(x), spec);
}

} // namespace cci
