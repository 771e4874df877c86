#pragma once

// Grace-period event matching, detection metrics and record-level evaluation.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "common.hpp"
#include "network.hpp"
#include "pipeline.hpp"
#include "postprocess.hpp"
#include "records.hpp"

namespace cci {

struct MatchCounts {
    long tp = 0;
    long fp = 0;
    long fn = 0;

    MatchCounts& operator+=(const MatchCounts& o) {
        tp += o.tp;
        fp += o.fp;
        fn += o.fn;
        return *this;
    }
    bool operator==(const MatchCounts&) const = default;
};

namespace detail {

inline void check_sorted(const EventList& ev, const char* which) {
    for (std::size_t i = 1; i < ev.size(); ++i)
        if (ev[i].time_ms < ev[i - 1].time_ms) throw Error(std::string("unsorted ") + which + " events");
}

/// Greedy sweep over one label: each reference takes the earliest unmatched
/// prediction inside its grace window. Optimal because all windows share a width.
inline MatchCounts match_sorted(const std::vector<double>& ref, const std::vector<double>& pred, double grace_ms) {
    MatchCounts c;
    std::size_t j = 0;
    for (double r : ref) {
        while (j < pred.size() && pred[j] < r - grace_ms) {
            ++c.fp;
            ++j;
        }
        if (j < pred.size() && pred[j] <= r + grace_ms) {
            ++c.tp;
            ++j;
        } else {
            ++c.fn;
        }
    }
    c.fp += static_cast<long>(pred.size() - j);
    return c;
}

} // namespace detail

/// One-to-one matching within `grace_ms`, separately per event label.
inline MatchCounts match_events(const EventList& ref, const EventList& pred, double grace_ms) {
    if (grace_ms < 0.0) throw Error("grace period must be non-negative");
    detail::check_sorted(ref, "reference");
    detail::check_sorted(pred, "predicted");
    std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> by_label;
    for (const auto& e : ref) by_label[e.label].first.push_back(e.time_ms);
    for (const auto& e : pred) by_label[e.label].second.push_back(e.time_ms);
    MatchCounts total;
    for (const auto& [label, rp] : by_label) total += detail::match_sorted(rp.first, rp.second, grace_ms);
    return total;
}

struct MetricsReport {
    std::string scope = "all";
    long tp = 0, fp = 0, fn = 0;
    std::optional<double> se, ppr, er, f1;  // percentages; absent when undefined
    double grace_ms = 0.0;
};

inline MetricsReport metrics_from_counts(long tp, long fp, long fn, double grace_ms, std::string scope = "all") {
    if (tp < 0 || fp < 0 || fn < 0) throw Error("counts must be non-negative");
    MetricsReport m;
    m.scope = std::move(scope);
    m.tp = tp;
    m.fp = fp;
    m.fn = fn;
    m.grace_ms = grace_ms;
    const double t = static_cast<double>(tp);
    if (tp + fn > 0) m.se = 100.0 * t / static_cast<double>(tp + fn);
    if (tp + fp > 0) m.ppr = 100.0 * t / static_cast<double>(tp + fp);
    if (tp + fp + fn > 0) m.er = 100.0 * static_cast<double>(fp + fn) / static_cast<double>(tp + fp + fn);
    if (m.se && m.ppr && *m.se + *m.ppr > 0.0) m.f1 = 2.0 * *m.se * *m.ppr / (*m.se + *m.ppr);
    return m;
}

inline MetricsReport metrics_from_counts(const MatchCounts& c, double grace_ms, std::string scope = "all") {
    return metrics_from_counts(c.tp, c.fp, c.fn, grace_ms, std::move(scope));
}

/// Two-decimal rendering; absent values print as "NA".
inline std::string fmt2(const std::optional<double>& v) {
    if (!v) return "NA";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", *v);
    return buf;
}

inline void write_metrics_csv(std::ostream& os, const std::vector<MetricsReport>& rows) {
    os << "scope,tp,fp,fn,se,ppr,er,f1,grace_ms\n";
    for (const auto& r : rows)
        os << r.scope << ',' << r.tp << ',' << r.fp << ',' << r.fn << ',' << fmt2(r.se) << ',' << fmt2(r.ppr) << ','
           << fmt2(r.er) << ',' << fmt2(r.f1) << ',' << r.grace_ms << '\n';
}

inline void write_metrics_table(std::ostream& os, const std::vector<MetricsReport>& rows) {
    std::size_t w = 5;
    for (const auto& r : rows) w = std::max(w, r.scope.size());
    char line[256];
    std::snprintf(line, sizeof line, "%-*s %9s %9s %9s %7s %7s %7s %7s\n", static_cast<int>(w), "scope", "TP", "FP", "FN",
                  "Se", "P+", "Er", "F1");
    os << line;
    for (const auto& r : rows) {
        std::snprintf(line, sizeof line, "%-*s %9ld %9ld %9ld %7s %7s %7s %7s\n", static_cast<int>(w), r.scope.c_str(), r.tp,
                      r.fp, r.fn, fmt2(r.se).c_str(), fmt2(r.ppr).c_str(), fmt2(r.er).c_str(), fmt2(r.f1).c_str());
        os << line;
    }
}

// ---------------------------------------------------------------------------
// Record-level evaluation
// ---------------------------------------------------------------------------

/// Reference events of a record in ms, restricted to [0, limit_ms). Heart-sound
/// references are state onsets; the record's opening segment has no onset.
inline EventList reference_events(const SignalRecord& r, double limit_ms) {
    EventList out;
    for (const auto& a : r.annotations) {
        const double t = 1000.0 * static_cast<double>(a.sample_index) / r.fs_hz;
        if (t >= limit_ms) break;
        if (r.task == Task::heartsound && a.sample_index == 0) continue;
        out.push_back({t, a.label});
    }
    return out;
}

/// Predicted events for one preprocessed record: episodes are inferred
/// independently and their probabilities concatenated on the record timeline.
template <typename S>
EventList predict_events(const Model<S>& m, const SignalRecord& pre, double* covered_ms = nullptr) {
    const auto eps = episodes_of(pre);
    const double frame_ms = 1000.0 * m.shape.encoder.downsample() / pre.fs_hz;
    const auto C = num_classes(pre.task);
    const Eigen::Index T = m.encoder->frames();
    Mat<S> all(static_cast<Eigen::Index>(eps.size()) * T, C);
    for (std::size_t k = 0; k < eps.size(); ++k) {
        if (static_cast<int>(eps[k].signal.size()) != m.encoder->input_len()) throw Error("episode length does not match the model");
        const std::vector<S> x(eps[k].signal.begin(), eps[k].signal.end());
        auto [z, p] = m.infer(x);
        all.middleRows(static_cast<Eigen::Index>(k) * T, T) = p.values;
    }
    if (covered_ms) *covered_ms = static_cast<double>(all.rows()) * frame_ms;
    EventList ev;
    if (pre.task == Task::qrs) {
        ev = qrs_decisions(all, frame_ms);
        // Frame t is centred (F-1)/2 samples after its first sample.
        const double shift = 1000.0 * 0.5 * (m.shape.encoder.downsample() - 1) / pre.fs_hz;
        for (auto& e : ev) e.time_ms += shift;
    } else {
        ev = hs_onsets(all, frame_ms);
        if (!ev.empty()) ev.erase(ev.begin());  // t = 0 is the window start, not a transition
    }
    return ev;
}

struct EvalResult {
    MetricsReport aggregate;
    std::vector<MetricsReport> per_record;
    MatchCounts counts;
};

/// Preprocess -> encode -> decode -> postprocess -> match for raw records,
/// micro-averaged over records.
template <typename S>
EvalResult evaluate_records(const Model<S>& m, const std::vector<SignalRecord>& records, const PreprocessConfig& pc = {}) {
    if (records.empty()) throw Error("no records");
    EvalResult res;
    const double grace = grace_ms(m.shape.task);
    for (const auto& r : records) {
        if (r.task != m.shape.task) throw Error("task mismatch: record " + r.id + " is " + std::string(to_string(r.task)));
        const auto pre = preprocess_record(r, pc);
        double covered = 0.0;
        const auto pred = predict_events(m, pre, &covered);
        const auto ref = reference_events(r, covered);
        const auto c = match_events(ref, pred, grace);
        res.counts += c;
        res.per_record.push_back(metrics_from_counts(c, grace, r.id));
    }
    res.aggregate = metrics_from_counts(res.counts, grace, "all");
    return res;
}

} // namespace cci
