#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace cci {

/// Raised for every contract violation in the library. The message names the
/// offending field or condition.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Task { qrs, heartsound };

inline std::string_view to_string(Task t) {
    return t == Task::qrs ? "qrs" : "heartsound";
}

inline Task task_from_string(std::string_view s) {
    if (s == "qrs") return Task::qrs;
    if (s == "heartsound" || s == "hs") return Task::heartsound;
    throw Error("unknown task '" + std::string(s) + "'");
}

/// Number of output classes of the per-frame decoder.
inline int num_classes(Task t) { return t == Task::qrs ? 1 : 4; }

/// Sampling rate every record is brought to before slicing.
inline double target_fs(Task t) { return t == Task::qrs ? 250.0 : 800.0; }

inline double episode_seconds(Task t) { return t == Task::qrs ? 10.0 : 5.0; }

/// Grace period used for event matching, in milliseconds.
inline double grace_ms(Task t) { return t == Task::qrs ? 150.0 : 100.0; }

// FNV-1a; used for config hashes and parameter fingerprints.
inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 1469598103934665603ULL) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

} // namespace cci
