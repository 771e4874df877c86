// Acceptance runner: `acceptance N` checks criterion N and prints one
// "CN PASS|FAIL ..." line. Exit status is 0 on PASS.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>

#include "cci/cci.hpp"

using namespace cci;
namespace fs = std::filesystem;

namespace {

struct Verdict {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... a) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, a...);
    return buf;
}

std::string round2(double v) { return fmt("%.2f", v); }

// --- 1: metric arithmetic against the MBCNN rows of the QRS comparison table
Verdict c1() {
    struct Row {
        const char* db;
        long tp, fp, fn;
        const char *se, *ppr, *er, *f1;
    };
    const Row rows[] = {
        {"CPSC2019", 42772, 394, 526, "98.79", "99.09", "2.10", "98.94"},
        {"MITDB", 217108, 1217, 1760, "99.20", "99.44", "1.35", "99.32"},
        {"INCART", 2090962, 18389, 13726, "99.35", "99.13", "1.51", "99.24"},
        {"QT", 141027, 138, 93, "99.93", "99.90", "0.16", "99.92"},
    };
    Verdict v{true, ""};
    int cells = 0, ok = 0;
    for (const auto& r : rows) {
        const auto m = metrics_from_counts(r.tp, r.fp, r.fn, 150.0);
        const std::pair<std::string, std::string> got[] = {
            {fmt2(m.se), r.se}, {fmt2(m.ppr), r.ppr}, {fmt2(m.er), r.er}, {fmt2(m.f1), r.f1}};
        const char* names[] = {"Se", "P+", "Er", "F1"};
        for (int k = 0; k < 4; ++k) {
            ++cells;
            if (got[k].first == got[k].second) {
                ++ok;
            } else {
                v.pass = false;
                v.detail += fmt(" %s %s computed %s vs printed %s;", r.db, names[k], got[k].first.c_str(), got[k].second.c_str());
            }
        }
    }
    v.detail = fmt("%d/%d cells match", ok, cells) + v.detail;
    return v;
}

// --- 2: vCCI on 1-D jointly Gaussian pairs after likelihood fitting of q
double fit_and_estimate(double rho, std::uint64_t seed) {
    const int N = 2048;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd;
    auto draw = [&](Mat<double>& z, Mat<double>& zdo) {
        z.resize(N, 1);
        zdo.resize(N, 1);
        for (Eigen::Index i = 0; i < N; ++i) {
            zdo(i, 0) = nd(rng);
            z(i, 0) = rho * zdo(i, 0) + std::sqrt(1 - rho * rho) * nd(rng);
        }
    };
    auto q = init_qnet<double>(1, 32, rng);
    Adam<double> opt(1e-2);
    Mat<double> z, zdo;
    for (int step = 0; step < 2000; ++step) {
        draw(z, zdo);
        auto g = q.zeros_like();
        qnet_ll(q, z, zdo, &g);
        std::vector<Mat<double>*> P, G;
        q.for_each_tensor([&](const std::string&, Mat<double>& t) { P.push_back(&t); });
        g.for_each_tensor([&](const std::string&, Mat<double>& t) { G.push_back(&t); });
        opt.step(P, G);
    }
    double acc = 0;
    const int reps = 20;
    for (int r = 0; r < reps; ++r) {
        draw(z, zdo);
        acc += vcci(q, z, zdo, rng);
    }
    return acc / reps;
}

Verdict c2() {
    Verdict v{true, ""};
    for (double rho : {0.5, 0.8, 0.95}) {
        const double mi = -0.5 * std::log(1 - rho * rho), est = fit_and_estimate(rho, 100 + static_cast<int>(rho * 100));
        const bool ok = est >= 0.9 * mi;
        v.pass = v.pass && ok;
        v.detail += fmt("rho=%.2f est %.4f vs 0.9*MI %.4f%s; ", rho, est, 0.9 * mi, ok ? "" : " (low)");
    }
    const double ind = fit_and_estimate(0.0, 7);
    v.pass = v.pass && std::abs(ind) <= 0.05;
    v.detail += fmt("independent est %.4f", ind);
    return v;
}

// --- 3: intervention algebra
Verdict c3() {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> nd;
    std::uniform_int_distribution<int> fl_d(1, 16), frames_d(1, 300);
    int bad = 0;
    for (int e = 0; e < 1000; ++e) {
        const int fl = fl_d(rng), frames = frames_d(rng);
        std::uniform_int_distribution<int> w_d(1, frames);
        const int w = w_d(rng);
        std::uniform_int_distribution<int> tau_d(0, frames - w);
        const int tau = tau_d(rng);
        std::vector<double> x(static_cast<std::size_t>(fl * frames));
        for (auto& s : x) s = nd(rng);
        const InterventionSpec inv{InterventionKind::invert_morph, tau, w, fl}, zr{InterventionKind::zero_rhythm, tau, w, fl};
        const auto a = apply_do(x, inv), z = apply_do(x, zr);
        if (apply_do(a, inv) != x) ++bad;
        if (apply_do(z, zr) != z) ++bad;
        for (std::size_t i = 0; i < x.size(); ++i) {
            const int f = static_cast<int>(i) / fl;
            const bool in = f >= tau && f < tau + w;
            if (!in && (a[i] != x[i] || z[i] != x[i])) ++bad;
            if (in && (a[i] != -x[i] || z[i] != 0.0)) ++bad;
        }
    }
    return {bad == 0, fmt("%d violations over 1000 random episodes", bad)};
}

// --- 4: shapes at full width
Verdict c4() {
    Verdict v{true, ""};
    for (Task t : {Task::qrs, Task::heartsound}) {
        auto m = init_params<float>(t, 4);
        const int L = t == Task::qrs ? 2500 : 4000;
        std::vector<float> x(static_cast<std::size_t>(L));
        std::mt19937_64 rng(1);
        std::normal_distribution<float> nd;
        for (auto& s : x) s = nd(rng);
        const auto [z, p] = m.infer(x);
        // QRS: one sigmoid column; heart sound: softmax over four states
        const long C = t == Task::qrs ? 1 : 4;
        bool probs = p.values.cols() == C && (p.values.array() >= 0).all() && (p.values.array() <= 1).all();
        if (t == Task::heartsound)
            for (Eigen::Index r = 0; r < p.values.rows(); ++r) probs = probs && std::abs(p.values.row(r).sum() - 1.0f) < 1e-5f;
        const long T = t == Task::qrs ? 625 : 250;
        const bool ok = z.values.rows() == T && z.values.cols() == 192 && p.values.rows() == T && probs;
        v.pass = v.pass && ok;
        v.detail += fmt("%s %d -> %ldx%ld, probs %s; ", std::string(to_string(t)).c_str(), L, static_cast<long>(z.values.rows()),
                        static_cast<long>(z.values.cols()), probs ? "valid" : "INVALID");
    }
    return v;
}

// --- 5: composite gradient vs central differences
Verdict c5() {
    ModelShape sh;
    sh.task = Task::qrs;
    sh.decoder_hidden = 6;
    sh.qnet_hidden = 8;
    sh.encoder.input_len = 64;
    sh.encoder.latent_dim = 8;
    sh.encoder.stages = {{{{5, 3, 1}, {3, 3, 1}}, {{5, 3, 2}, {3, 3, 2}}}, {{{3, 4, 1}}, {{3, 4, 2}}}};
    auto m = init_params<double>(sh, 3);
    std::mt19937_64 rng(5);
    std::normal_distribution<double> nd;
    m.for_each_tensor([&](const std::string&, Mat<double>& t) {
        for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] += 0.05 * nd(rng);
    });
    std::vector<Episode> eps(2);
    for (auto& e : eps) {
        e.frame_len_samples = 4;
        for (int t = 0; t < 16; ++t) {
            const bool pos = nd(rng) > 0;
            e.frame_labels.push_back(pos);
            for (int i = 0; i < 4; ++i) e.signal.push_back((pos ? 1.0 : -1.0) + 0.3 * nd(rng));
        }
    }
    std::vector<BatchItem> items{{&eps[0], {}}, {&eps[1], {}}};
    StepPlan plan;
    plan.w = 4;
    plan.groups.push_back({InterventionKind::invert_morph, {2, 7}, {1, 0, 0, 0, 1, 1, 0, 1}});
    plan.groups.push_back({InterventionKind::zero_rhythm, {5, 0}, {1, 1, 0, 1, 0, 0, 1, 0}});
    const StepWeights w{0.1, 1.0, true};
    auto g = m.zeros_like();
    auto cache = forward_step(m, items, plan, true);
    composite_backward(m, items, cache, plan, w, &g);
    auto loss = [&] {
        auto c = forward_step(m, items, plan, false);
        return composite_backward<double>(m, items, c, plan, w, nullptr).total;
    };
    std::vector<Mat<double>*> P, G;
    m.encoder->for_each_tensor([&](const std::string&, Mat<double>& t) { P.push_back(&t); });
    m.decoder.for_each_tensor([&](const std::string&, Mat<double>& t) { P.push_back(&t); });
    g.encoder->for_each_tensor([&](const std::string&, Mat<double>& t) { G.push_back(&t); });
    g.decoder.for_each_tensor([&](const std::string&, Mat<double>& t) { G.push_back(&t); });
    double worst = 0;
    long n = 0;
    for (std::size_t k = 0; k < P.size(); ++k)
        for (Eigen::Index i = 0; i < P[k]->size(); ++i, ++n) {
            double& p = P[k]->data()[i];
            const double o = p, h = 1e-6;
            p = o + h;
            const double a = loss();
            p = o - h;
            const double b = loss();
            p = o;
            const double num = (a - b) / (2 * h), an = G[k]->data()[i];
            worst = std::max(worst, std::abs(num - an) / std::max({std::abs(num), std::abs(an), 1e-6}));
        }
    return {worst < 1e-4, fmt("%ld parameters, worst relative error %.2e", n, worst)};
}

// --- 6: matching vs exhaustive optimum (bitmask DP over predictions)
long optimal_tp(const std::vector<double>& ref, const std::vector<double>& pred, double grace) {
    const std::size_t P = pred.size();
    std::vector<long> best(std::size_t{1} << P, -1);
    best[0] = 0;
    long ans = 0;
    for (std::size_t i = 0; i < ref.size(); ++i) {
        std::vector<long> nxt = best;  // reference i left unmatched
        for (std::size_t mask = 0; mask < best.size(); ++mask) {
            if (best[mask] < 0) continue;
            for (std::size_t j = 0; j < P; ++j)
                if (!(mask >> j & 1) && std::abs(pred[j] - ref[i]) <= grace)
                    nxt[mask | std::size_t{1} << j] = std::max(nxt[mask | std::size_t{1} << j], best[mask] + 1);
        }
        best = std::move(nxt);
    }
    for (long b : best) ans = std::max(ans, b);
    return ans;
}

Verdict c6() {
    std::mt19937_64 rng(6);
    std::uniform_int_distribution<int> n(0, 10);
    std::uniform_real_distribution<double> u(0, 3000);
    int bad = 0;
    for (int trial = 0; trial < 500; ++trial) {
        std::vector<double> r(static_cast<std::size_t>(n(rng))), p(static_cast<std::size_t>(n(rng)));
        for (auto& x : r) x = std::round(u(rng));
        for (auto& x : p) x = std::round(u(rng));
        std::sort(r.begin(), r.end());
        std::sort(p.begin(), p.end());
        EventList re, pe;
        for (double x : r) re.push_back({x, "beat"});
        for (double x : p) pe.push_back({x, "beat"});
        const auto c = match_events(re, pe, 150);
        const long tp = optimal_tp(r, p, 150);
        if (c.tp != tp || c.fn != static_cast<long>(r.size()) - tp || c.fp != static_cast<long>(p.size()) - tp) ++bad;
    }
    return {bad == 0, fmt("%d/500 instances differ from the exhaustive optimum", bad)};
}

// --- 7: desk-scale directional study
std::vector<SignalRecord> corpus(int n, std::uint64_t seed, const std::string& prefix) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> hr(55, 100);
    std::vector<SignalRecord> out;
    for (int i = 0; i < n; ++i) {
        SynthConfig sc;
        sc.duration_s = 101;  // ten 10 s episodes
        sc.fs_hz = 360;
        sc.heart_rate_bpm = hr(rng);
        sc.inverted_fraction = 0.1;
        out.push_back(synth(Task::qrs, sc, seed * 7919 + static_cast<std::uint64_t>(i), prefix + std::to_string(i)));
    }
    return out;
}

Verdict c7() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto train_recs = corpus(20, 71, "tr"), val_recs = corpus(4, 72, "va"), test_recs = corpus(10, 73, "te");
    const auto train_eps = prepare_episodes(train_recs), val_eps = prepare_episodes(val_recs);
    std::size_t test_eps = 0;
    for (const auto& r : test_recs) test_eps += episodes_of(preprocess_record(r)).size();
    dsp::NoiseSpec noise;
    noise.band = std::array<double, 2>{0.5, 50.0};

    int wins = 0;
    std::map<std::string, std::map<double, std::vector<double>>> er;
    std::string log;
    for (int s = 0; s < 5; ++s) {
        double f1[2] = {0, 0};
        for (int k = 0; k < 2; ++k) {
            TrainConfig cfg;
            cfg.mode = k == 0 ? TrainMode::baseline : TrainMode::cci;
            cfg.intervention_kinds = kinds_from_attr("both");
            cfg.channel_divisor = 4;
            cfg.latent_dim = 32;
            cfg.epochs_max = 30;
            cfg.patience = 10;
            cfg.seed = 1000 + static_cast<std::uint64_t>(s);
            const auto res = train_model<float>(cfg, train_eps, val_eps);
            const std::string mode(to_string(cfg.mode));
            for (double snr : {0.0, 5.0, 20.0}) {
                std::vector<SignalRecord> noisy;
                for (const auto& r : test_recs) noisy.push_back(contaminate(r, noise, snr, 500 + static_cast<std::uint64_t>(s)));
                const auto m = evaluate_records(res.model, noisy).aggregate;
                er[mode][snr].push_back(m.er.value_or(100.0));
                if (snr == 5.0) f1[k] = m.f1.value_or(0.0);
            }
        }
        if (f1[1] >= f1[0]) ++wins;
        log += fmt("seed %d F1@5dB base %.2f cci %.2f; ", s, f1[0], f1[1]);
        std::fprintf(stderr, "  [C7] %s\n", log.c_str());
    }
    auto mean = [](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); };
    bool b = true;
    for (const auto& [mode, by] : er) {
        const double e0 = mean(by.at(0.0)), e20 = mean(by.at(20.0));
        b = b && e0 >= e20;
        log += fmt("%s Er 0dB %.2f / 20dB %.2f; ", mode.c_str(), e0, e20);
    }
    const double mins = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60;
    return {wins >= 3 && b, fmt("(a) %d/5 seeds CCI>=baseline, (b) %s; %zu train/%zu test episodes, %.1f min; ", wins, b ? "holds" : "violated",
                               train_eps.size(), test_eps, mins) + log};
}

// --- 8: SNR mixing
Verdict c8() {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(0, 1), snr_d(-10, 30), amp(0.01, 100);
    std::normal_distribution<double> nd;
    double worst = 0;
    for (int t = 0; t < 100; ++t) {
        const std::size_t n = 200 + static_cast<std::size_t>(u(rng) * 5000);
        const double a = amp(rng), b = amp(rng), target = snr_d(rng);
        std::vector<double> x(n), z(n);
        for (std::size_t i = 0; i < n; ++i) {
            x[i] = a * std::sin(0.01 * static_cast<double>(i) * (1 + 10 * u(rng))) + 0.1 * a * nd(rng);
            z[i] = b * nd(rng) + b * 0.5;
        }
        const auto y = dsp::mix_at_snr(x, z, target);
        double ps = 0, pn = 0;
        for (std::size_t i = 0; i < n; ++i) {
            ps += x[i] * x[i];
            pn += (y[i] - x[i]) * (y[i] - x[i]);
        }
        worst = std::max(worst, std::abs(10 * std::log10(ps / pn) - target));
    }
    return {worst <= 0.1, fmt("worst |achieved - target| = %.2e dB over 100 triples", worst)};
}

// --- 9: KDE with Scott's bandwidth
Verdict c9() {
    std::mt19937_64 rng(9);
    std::normal_distribution<double> nd;
    double worst_h = 0, lo_mass = 1e9, hi_mass = 0;
    for (int trial = 0; trial < 6; ++trial) {
        // Anisotropic clouds well inside [-1.2, 1.2]^2, n from 64 to 2064.
        const int n = 64 + 400 * trial;
        const double sx = 0.1 + 0.04 * trial, sy = 0.3 - 0.03 * trial, cx = 0.1 * (trial - 2.5), cy = -0.05 * trial;
        MatD pts(n, 2);
        for (int i = 0; i < n; ++i) pts.row(i) << cx + sx * nd(rng), cy + sy * nd(rng);
        const auto dm = kde_scott(pts, 256);
        for (int j = 0; j < 2; ++j) {
            const double mu = pts.col(j).mean();
            const double sd = std::sqrt((pts.col(j).array() - mu).square().sum() / (n - 1));
            worst_h = std::max(worst_h, std::abs(dm.h[j] - std::pow(n, -1.0 / 6.0) * sd));
        }
        lo_mass = std::min(lo_mass, dm.mass());
        hi_mass = std::max(hi_mass, dm.mass());
    }
    return {worst_h <= 1e-9 && lo_mass >= 0.98 && hi_mass <= 1.02,
            fmt("bandwidth error %.1e, grid mass in [%.4f, %.4f]", worst_h, lo_mass, hi_mass)};
}

// --- 10: determinism of the CLI
std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

int sh(const std::string& cmd) { return std::system((cmd + " >/dev/null 2>&1").c_str()); }

Verdict c10() {
    const auto d = fs::temp_directory_path() / "cci_accept10";
    fs::remove_all(d);
    fs::create_directories(d);
    const std::string cli = CCI_CLI_PATH;
    for (const char* s : {"s1", "s2"})
        if (sh(cli + " synth --task qrs --n 6 --duration 22 --seed 7 --out " + (d / s).string()) != 0) return {false, "synth failed"};
    bool synth_same = true;
    for (const auto& e : fs::directory_iterator(d / "s1")) synth_same = synth_same && slurp(e.path()) == slurp(d / "s2" / e.path().filename());
    {
        std::ofstream os(d / "cfg.json");
        os << R"({"channel_divisor": 8, "latent_dim": 16, "batch_n": 4, "folds": 3, "epochs_max": 3, "mode": "cci"})";
    }
    for (const char* r : {"r1", "r2"})
        if (sh(cli + " train --seed 7 --fold 0 --config " + (d / "cfg.json").string() + " --records " + (d / "s1").string() + " --out " +
               (d / r).string()) != 0)
            return {false, "train failed"};
    const auto h1 = slurp(d / "r1" / "history_fold0.csv"), h2 = slurp(d / "r2" / "history_fold0.csv");
    const bool hist_same = !h1.empty() && h1 == h2;
    const bool ckpt_same = slurp(d / "r1" / "fold0.ckpt") == slurp(d / "r2" / "fold0.ckpt");
    return {synth_same && hist_same,
            fmt("synth bit-identical: %s; history identical: %s; checkpoint identical: %s", synth_same ? "yes" : "no",
                hist_same ? "yes" : "no", ckpt_same ? "yes" : "no")};
}

} // namespace

int main(int argc, char** argv) {
    if (argc != 2) {
        std::fprintf(stderr, "usage: acceptance N   (N = 1..10)\n");
        return 2;
    }
    const int n = std::atoi(argv[1]);
    const std::function<Verdict()> fns[] = {c1, c2, c3, c4, c5, c6, c7, c8, c9, c10};
    if (n < 1 || n > 10) {
        std::fprintf(stderr, "criterion must be 1..10\n");
        return 2;
    }
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
        v = fns[n - 1]();
    } catch (const std::exception& e) {
        v = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("C%d %s (%.1f s) %s\n", n, v.pass ? "PASS" : "FAIL", secs, v.detail.c_str());
    return v.pass ? 0 : 1;
}
