#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "cci/evalx.hpp"

using namespace cci;

namespace {

// Maximum bipartite matching by exhaustive search over assignments.
long brute_tp(const std::vector<double>& ref, const std::vector<double>& pred, double grace, std::size_t i,
              std::vector<bool>& used) {
    if (i == ref.size()) return 0;
    long best = brute_tp(ref, pred, grace, i + 1, used);
    for (std::size_t j = 0; j < pred.size(); ++j)
        if (!used[j] && std::abs(pred[j] - ref[i]) <= grace) {
            used[j] = true;
            best = std::max(best, 1 + brute_tp(ref, pred, grace, i + 1, used));
            used[j] = false;
        }
    return best;
}

EventList beats(std::vector<double> t) {
    EventList e;
    for (double x : t) e.push_back({x, "beat"});
    return e;
}

} // namespace

TEST(Match, WorkedExample) {
    const auto c = match_events(beats({100, 500, 900}), beats({120, 700, 905, 1400}), 150);
    EXPECT_EQ(c, (MatchCounts{2, 2, 1}));
}

TEST(Match, OnePredictionServesOneReference) {
    const auto c = match_events(beats({100, 110}), beats({105}), 150);
    EXPECT_EQ(c, (MatchCounts{1, 0, 1}));
}

TEST(Match, LabelsAreSeparate) {
    EventList ref{{100, "S1"}, {300, "S2"}}, pred{{100, "S2"}, {300, "S1"}};
    EXPECT_EQ(match_events(ref, pred, 50), (MatchCounts{0, 2, 2}));
}

TEST(Match, GraceBoundaryIsInclusive) {
    EXPECT_EQ(match_events(beats({100}), beats({250}), 150).tp, 1);
    EXPECT_EQ(match_events(beats({100}), beats({250.001}), 150).tp, 0);
}

TEST(Match, RejectsUnsortedAndNegativeGrace) {
    EXPECT_THROW(match_events(beats({200, 100}), beats({}), 150), Error);
    EXPECT_THROW(match_events(beats({}), beats({}), -1), Error);
}

TEST(Match, GreedyIsMaximum) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0, 2000);
    std::uniform_int_distribution<int> n(0, 7);
    for (int trial = 0; trial < 2000; ++trial) {
        std::vector<double> r(static_cast<std::size_t>(n(rng))), p(static_cast<std::size_t>(n(rng)));
        for (auto& x : r) x = std::round(u(rng));
        for (auto& x : p) x = std::round(u(rng));
        std::sort(r.begin(), r.end());
        std::sort(p.begin(), p.end());
        std::vector<bool> used(p.size());
        const long tp = brute_tp(r, p, 150, 0, used);
        const auto c = match_events(beats(r), beats(p), 150);
        ASSERT_EQ(c.tp, tp);
        EXPECT_EQ(c.fn, static_cast<long>(r.size()) - tp);
        EXPECT_EQ(c.fp, static_cast<long>(p.size()) - tp);
    }
}

TEST(Metrics, Formulas) {
    const auto m = metrics_from_counts(90, 10, 5, 150);
    EXPECT_NEAR(*m.se, 100.0 * 90 / 95, 1e-12);
    EXPECT_NEAR(*m.ppr, 90.0, 1e-12);
    EXPECT_NEAR(*m.er, 100.0 * 15 / 105, 1e-12);
    EXPECT_NEAR(*m.f1, 100.0 * 2 * 90 / (2 * 90 + 10 + 5), 1e-12);
}

TEST(Metrics, UndefinedQuotients) {
    const auto none = metrics_from_counts(0, 0, 0, 150);
    EXPECT_FALSE(none.se || none.ppr || none.er || none.f1);
    const auto miss = metrics_from_counts(0, 0, 4, 150);
    EXPECT_EQ(*miss.se, 0.0);
    EXPECT_FALSE(miss.ppr);
    EXPECT_EQ(*miss.er, 100.0);
    EXPECT_FALSE(miss.f1);
    EXPECT_EQ(fmt2(miss.ppr), "NA");
    EXPECT_THROW(metrics_from_counts(-1, 0, 0, 150), Error);
}

TEST(Metrics, CsvLayout) {
    std::ostringstream os;
    write_metrics_csv(os, {metrics_from_counts(3, 1, 0, 150, "r1")});
    EXPECT_EQ(os.str(), "scope,tp,fp,fn,se,ppr,er,f1,grace_ms\nr1,3,1,0,100.00,75.00,25.00,85.71,150\n");
}

TEST(Reference, HeartSoundSkipsOpeningState) {
    SignalRecord r;
    r.task = Task::heartsound;
    r.fs_hz = 1000;
    r.samples.assign(3000, 0.f);
    r.annotations = {{0, "S1"}, {100, "systole"}, {400, "S2"}, {2500, "diastole"}};
    const auto ev = reference_events(r, 2000);
    ASSERT_EQ(ev.size(), 2u);
    EXPECT_EQ(ev[0], (Event{100, "systole"}));
}

TEST(Evaluate, RejectsEmptyAndMismatchedTask) {
    auto m = init_params<float>(ModelShape::for_task(Task::qrs, 8, 16), 1);
    EXPECT_THROW(evaluate_records(m, {}), Error);
    SynthConfig sc;
    sc.duration_s = 20;
    sc.fs_hz = 2000;
    EXPECT_THROW(evaluate_records(m, {synth(Task::heartsound, sc, 1, "p")}), Error);
}

TEST(Evaluate, RunsEndToEndOnSynthetic) {
    auto m = init_params<float>(ModelShape::for_task(Task::qrs, 8, 16), 1);
    SynthConfig sc;
    sc.duration_s = 25;
    sc.fs_hz = 360;
    const auto r = evaluate_records(m, {synth(Task::qrs, sc, 2, "a"), synth(Task::qrs, sc, 3, "b")});
    EXPECT_EQ(r.per_record.size(), 2u);
    EXPECT_EQ(r.counts.tp + r.counts.fn, r.per_record[0].tp + r.per_record[0].fn + r.per_record[1].tp + r.per_record[1].fn);
    EXPECT_GT(r.counts.tp + r.counts.fn, 40);  // ~72 bpm over two 20 s windows
}
