#pragma once

// Training driver: baseline, contrastive causal intervention (CCI) and
// intervention-augmented modes, k-fold splitting and early stopping.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "adam.hpp"
#include "common.hpp"
#include "intervene.hpp"
#include "network.hpp"
#include "objective.hpp"
#include "records.hpp"

namespace cci {

enum class TrainMode { baseline, cci, augment };

inline std::string_view to_string(TrainMode m) {
    switch (m) {
        case TrainMode::baseline: return "baseline";
        case TrainMode::cci: return "cci";
        case TrainMode::augment: return "augment";
    }
    return "?";
}

inline TrainMode train_mode_from_string(std::string_view s) {
    if (s == "baseline") return TrainMode::baseline;
    if (s == "cci") return TrainMode::cci;
    if (s == "augment") return TrainMode::augment;
    throw Error("unknown training mode '" + std::string(s) + "'");
}

/// "am" -> morphology, "ar" -> rhythm, "both" -> both.
inline std::vector<InterventionKind> kinds_from_attr(std::string_view attr) {
    if (attr == "am") return {InterventionKind::invert_morph};
    if (attr == "ar") return {InterventionKind::zero_rhythm};
    if (attr == "both") return {InterventionKind::invert_morph, InterventionKind::zero_rhythm};
    throw Error("unknown attribute '" + std::string(attr) + "' (expected am, ar or both)");
}

struct TrainConfig {
    Task task = Task::qrs;
    double alpha = 1e-3;  // q-network learning rate
    double beta = 1e-3;   // encoder / decoder learning rate
    double lambda1 = kDefaultLambda1;
    double lambda2 = kDefaultLambda2;
    int batch_n = 8;
    int frames_per_step = 1;  // 0 = exhaustive over every valid start frame
    std::vector<InterventionKind> intervention_kinds = {InterventionKind::invert_morph, InterventionKind::zero_rhythm};
    int intervention_w = 20;
    int epochs_max = 100;
    int patience = 20;
    int folds = 5;
    std::uint64_t seed = 0;
    TrainMode mode = TrainMode::baseline;
    bool encoder_gets_seg_grad = true;

    // Architecture.
    int channel_divisor = 1;
    int latent_dim = 192;
    int decoder_hidden = 64;
    int qnet_hidden = 0;

    void check() const {
        if (mode == TrainMode::cci && batch_n < 2) throw Error("cci mode requires batch_n >= 2");
        if (batch_n < 1) throw Error("batch_n must be positive");
        if (patience < 1) throw Error("patience must be >= 1");
        if (folds < 2) throw Error("folds must be >= 2");
        if (intervention_w < 1) throw Error("intervention_w must be >= 1");
        if (frames_per_step < 0) throw Error("frames_per_step must be >= 0");
        if (lambda1 < 0.0 || lambda2 < 0.0) throw Error("loss weights must be non-negative");
        if (epochs_max < 0) throw Error("epochs_max must be >= 0");
    }

    ModelShape model_shape() const {
        ModelShape m = ModelShape::for_task(task, channel_divisor, latent_dim);
        m.decoder_hidden = decoder_hidden;
        m.qnet_hidden = qnet_hidden;
        return m;
    }
};

inline nlohmann::json to_json(const TrainConfig& c) {
    nlohmann::ordered_json j;
    j["task"] = std::string(to_string(c.task));
    j["alpha"] = c.alpha;
    j["beta"] = c.beta;
    j["lambda1"] = c.lambda1;
    j["lambda2"] = c.lambda2;
    j["batch_n"] = c.batch_n;
    if (c.frames_per_step == 0)
        j["frames_per_step"] = "exhaustive";
    else
        j["frames_per_step"] = c.frames_per_step;
    auto kinds = nlohmann::json::array();
    for (auto k : c.intervention_kinds) kinds.push_back(std::string(to_string(k)));
    j["intervention_kinds"] = kinds;
    j["intervention_w"] = c.intervention_w;
    j["epochs_max"] = c.epochs_max;
    j["patience"] = c.patience;
    j["folds"] = c.folds;
    j["seed"] = c.seed;
    j["mode"] = std::string(to_string(c.mode));
    j["encoder_gets_seg_grad"] = c.encoder_gets_seg_grad;
    j["channel_divisor"] = c.channel_divisor;
    j["latent_dim"] = c.latent_dim;
    j["decoder_hidden"] = c.decoder_hidden;
    j["qnet_hidden"] = c.qnet_hidden;
    return j;
}

/// Missing fields keep their defaults; unknown fields are rejected.
inline TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c = {}) {
    static const std::set<std::string> known = {
        "task", "alpha", "beta", "lambda1", "lambda2", "batch_n", "frames_per_step", "intervention_kinds",
        "intervention_w", "epochs_max", "patience", "folds", "seed", "mode", "encoder_gets_seg_grad",
        "channel_divisor", "latent_dim", "decoder_hidden", "qnet_hidden"};
    for (const auto& [k, v] : j.items())
        if (!known.contains(k)) throw Error("unknown TrainConfig field '" + k + "'");
    try {
        if (j.contains("task")) c.task = task_from_string(j["task"].get<std::string>());
        if (j.contains("alpha")) c.alpha = j["alpha"].get<double>();
        if (j.contains("beta")) c.beta = j["beta"].get<double>();
        if (j.contains("lambda1")) c.lambda1 = j["lambda1"].get<double>();
        if (j.contains("lambda2")) c.lambda2 = j["lambda2"].get<double>();
        if (j.contains("batch_n")) c.batch_n = j["batch_n"].get<int>();
        if (j.contains("frames_per_step")) {
            const auto& f = j["frames_per_step"];
            if (f.is_string()) {
                if (f.get<std::string>() != "exhaustive") throw Error("frames_per_step must be an integer or \"exhaustive\"");
                c.frames_per_step = 0;
            } else {
                c.frames_per_step = f.get<int>();
            }
        }
        if (j.contains("intervention_kinds")) {
            c.intervention_kinds.clear();
            for (const auto& k : j["intervention_kinds"]) c.intervention_kinds.push_back(intervention_from_string(k.get<std::string>()));
        }
        if (j.contains("intervention_w")) c.intervention_w = j["intervention_w"].get<int>();
        if (j.contains("epochs_max")) c.epochs_max = j["epochs_max"].get<int>();
        if (j.contains("patience")) c.patience = j["patience"].get<int>();
        if (j.contains("folds")) c.folds = j["folds"].get<int>();
        if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
        if (j.contains("mode")) c.mode = train_mode_from_string(j["mode"].get<std::string>());
        if (j.contains("encoder_gets_seg_grad")) c.encoder_gets_seg_grad = j["encoder_gets_seg_grad"].get<bool>();
        if (j.contains("channel_divisor")) c.channel_divisor = j["channel_divisor"].get<int>();
        if (j.contains("latent_dim")) c.latent_dim = j["latent_dim"].get<int>();
        if (j.contains("decoder_hidden")) c.decoder_hidden = j["decoder_hidden"].get<int>();
        if (j.contains("qnet_hidden")) c.qnet_hidden = j["qnet_hidden"].get<int>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("invalid TrainConfig: ") + e.what());
    }
    return c;
}

inline std::uint64_t config_hash(const TrainConfig& c) { return fnv1a(to_json(c).dump()); }

// ---------------------------------------------------------------------------
// k-fold split grouped by source record
// ---------------------------------------------------------------------------

struct FoldSplit {
    std::vector<std::size_t> train_ids;
    std::vector<std::size_t> val_ids;
};

/// Source records are shuffled and assigned greedily to the currently
/// smallest fold, so no record straddles train and validation.
inline std::vector<FoldSplit> kfold_split(const std::vector<Episode>& episodes, int folds, std::uint64_t seed) {
    if (folds < 2) throw Error("kfold_split: folds must be >= 2");
    if (episodes.size() < static_cast<std::size_t>(folds)) throw Error("kfold_split: too few episodes for the fold count");

    std::map<std::string, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < episodes.size(); ++i) groups[episodes[i].source_id].push_back(i);
    std::vector<const std::vector<std::size_t>*> order;
    for (const auto& [id, members] : groups) order.push_back(&members);
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    // Larger groups first keeps fold sizes balanced; stable sort preserves the shuffle among equals.
    std::stable_sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->size() > b->size(); });

    std::vector<std::vector<std::size_t>> fold_members(static_cast<std::size_t>(folds));
    for (const auto* g : order) {
        auto it = std::min_element(fold_members.begin(), fold_members.end(),
                                   [](const auto& a, const auto& b) { return a.size() < b.size(); });
        it->insert(it->end(), g->begin(), g->end());
    }
    std::vector<FoldSplit> out(static_cast<std::size_t>(folds));
    for (int f = 0; f < folds; ++f) {
        auto& s = out[static_cast<std::size_t>(f)];
        s.val_ids = fold_members[static_cast<std::size_t>(f)];
        std::sort(s.val_ids.begin(), s.val_ids.end());
        for (int g = 0; g < folds; ++g)
            if (g != f) s.train_ids.insert(s.train_ids.end(), fold_members[static_cast<std::size_t>(g)].begin(),
                                           fold_members[static_cast<std::size_t>(g)].end());
        std::sort(s.train_ids.begin(), s.train_ids.end());
    }
    return out;
}

// ---------------------------------------------------------------------------
// One optimization step: forward caches, composite loss and gradients
// ---------------------------------------------------------------------------

/// One batch member: an episode, optionally replaced by a do-variant (augment).
struct BatchItem {
    const Episode* episode = nullptr;
    std::optional<InterventionSpec> augment;
};

/// Interventions applied to every batch member for one (start-frame draw, kind).
struct InterventionGroup {
    InterventionKind kind = InterventionKind::zero_rhythm;
    std::vector<int> tau;  // per batch item
    std::vector<int> neg;  // negative row per covered-pair row (slot-major: row = j*N + i)
};

struct StepPlan {
    int w = 1;
    std::vector<InterventionGroup> groups;
};

template <typename S>
struct StepCache {
    std::vector<std::vector<S>> x;
    std::vector<Mat<S>> z;
    std::vector<std::unique_ptr<EncoderTape>> tape;
    std::vector<Mat<S>> logits;
    std::vector<DecoderTape<S>> dtape;
    std::vector<std::vector<Mat<S>>> zdo;                          // [group][item]
    std::vector<std::vector<std::unique_ptr<EncoderTape>>> dotape;  // [group][item]
};

template <typename S>
std::vector<S> to_scalar(const std::vector<double>& v) {
    return std::vector<S>(v.begin(), v.end());
}

template <typename S>
StepCache<S> forward_step(const Model<S>& m, const std::vector<BatchItem>& items, const StepPlan& plan, bool tapes) {
    StepCache<S> c;
    const auto n = items.size();
    c.x.resize(n);
    c.z.resize(n);
    c.tape.resize(n);
    c.logits.resize(n);
    c.dtape.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        c.x[i] = to_scalar<S>(items[i].episode->signal);
        if (items[i].augment) c.x[i] = apply_do(c.x[i], *items[i].augment);
        c.z[i] = m.encoder->forward(c.x[i], tapes ? &c.tape[i] : nullptr);
        c.logits[i] = decode_logits(m.decoder, c.z[i], tapes ? &c.dtape[i] : nullptr);
    }
    const int fl = m.shape.encoder.downsample();
    c.zdo.resize(plan.groups.size());
    c.dotape.resize(plan.groups.size());
    for (std::size_t g = 0; g < plan.groups.size(); ++g) {
        const auto& grp = plan.groups[g];
        c.zdo[g].resize(n);
        c.dotape[g].resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            const InterventionSpec spec{grp.kind, grp.tau[i], plan.w, fl};
            const auto xdo = apply_do(c.x[i], spec);
            c.zdo[g][i] = m.encoder->forward(xdo, tapes ? &c.dotape[g][i] : nullptr);
        }
    }
    return c;
}

/// Covered-frame pairs of one group, slot-major (row = j*N + i).
template <typename S>
std::pair<Mat<S>, Mat<S>> covered_pairs(const StepCache<S>& c, const StepPlan& plan, std::size_t g) {
    const auto n = static_cast<Eigen::Index>(c.z.size());
    const Eigen::Index d = c.z.front().cols();
    Mat<S> z(plan.w * n, d), zdo(plan.w * n, d);
    for (int j = 0; j < plan.w; ++j)
        for (Eigen::Index i = 0; i < n; ++i) {
            const int t = plan.groups[g].tau[static_cast<std::size_t>(i)] + j;
            z.row(j * n + i) = c.z[static_cast<std::size_t>(i)].row(t);
            zdo.row(j * n + i) = c.zdo[g][static_cast<std::size_t>(i)].row(t);
        }
    return {std::move(z), std::move(zdo)};
}

struct StepWeights {
    double lambda1 = kDefaultLambda1;
    double lambda2 = kDefaultLambda2;
    bool encoder_gets_seg_grad = true;
};

/// Computes the composite loss and, when `grads` is given, accumulates
/// encoder gradients of  seg_flag*L_seg + lambda1*I_vCCI - lambda2*L_sim  and
/// decoder gradients of L_seg. The q-network is held fixed.
template <typename S>
LossBreakdown composite_backward(const Model<S>& m, const std::vector<BatchItem>& items, const StepCache<S>& c,
                                 const StepPlan& plan, const StepWeights& wts, Model<S>* grads) {
    const auto n = items.size();
    const Eigen::Index frames = c.z.front().rows();
    const double seg_scale = 1.0 / (static_cast<double>(n) * static_cast<double>(frames));

    std::vector<Mat<S>> dz(n);
    double seg_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        Mat<S> dlogits;
        seg_sum += seg_loss_from_logits(c.logits[i], items[i].episode->frame_labels, m.shape.task, seg_scale,
                                        grads ? &dlogits : nullptr);
        if (grads) {
            Mat<S> dzi = decoder_backward(m.decoder, c.dtape[i], dlogits, &grads->decoder);
            dz[i] = wts.encoder_gets_seg_grad ? dzi : Mat<S>(Mat<S>::Zero(dzi.rows(), dzi.cols()));
        }
    }
    const double l_seg = seg_sum * seg_scale;

    double vcci_total = 0.0, sim_total = 0.0;
    const auto G = plan.groups.size();
    std::vector<std::vector<Mat<S>>> dzdo(G);
    if (G > 0) {
        const auto N = static_cast<Eigen::Index>(n);
        const double gw = 1.0 / static_cast<double>(G);
        const Eigen::Index uncovered = frames - plan.w;
        for (std::size_t g = 0; g < G; ++g) {
            const auto& grp = plan.groups[g];
            auto [zc, zdoc] = covered_pairs(c, plan, g);
            const double vw = grads ? wts.lambda1 * gw : 0.0;
            auto vr = vcci_with_negatives(m.qnet, zc, zdoc, grp.neg, vw);
            vcci_total += vr.value * gw;

            if (grads) dzdo[g].resize(n);
            const double sim_scale = uncovered > 0 ? 1.0 / (static_cast<double>(N) * static_cast<double>(uncovered)) : 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const auto& zi = c.z[i];
                const auto& zdoi = c.zdo[g][i];
                const int tau = grp.tau[i];
                Mat<S>* da = nullptr;
                Mat<S>* db = nullptr;
                if (grads) {
                    dzdo[g][i] = Mat<S>::Zero(zdoi.rows(), zdoi.cols());
                    da = &dz[i];
                    db = &dzdo[g][i];
                    if (da->size() == 0) *da = Mat<S>::Zero(zi.rows(), zi.cols());
                }
                const double gs = grads ? -wts.lambda2 * gw * sim_scale : 0.0;
                double s = cosine_rows_with_grad(zi, zdoi, 0, tau, gs, da, db);
                s += cosine_rows_with_grad(zi, zdoi, tau + plan.w, frames, gs, da, db);
                sim_total += s * sim_scale * gw;
                if (grads && vw != 0.0) {
                    for (int j = 0; j < plan.w; ++j) {
                        const Eigen::Index r = j * N + static_cast<Eigen::Index>(i);
                        dz[i].row(tau + j) += vr.dz.row(r);
                        dzdo[g][i].row(tau + j) += vr.dzdo.row(r);
                    }
                }
            }
        }
    }

    if (grads) {
        for (std::size_t i = 0; i < n; ++i)
            if (dz[i].size() > 0) m.encoder->backward(*c.tape[i], dz[i], *grads->encoder);
        for (std::size_t g = 0; g < G; ++g)
            for (std::size_t i = 0; i < n; ++i) m.encoder->backward(*c.dotape[g][i], dzdo[g][i], *grads->encoder);
    }
    return total_loss(l_seg, vcci_total, sim_total, wts.lambda1, wts.lambda2);
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct EpochRecord {
    int epoch = 0;
    double l_seg = 0.0;
    double i_vcci = 0.0;
    double l_sim = 0.0;
    double val_metric = 0.0;
    std::size_t episodes_visited = 0;
};

template <typename S>
struct TrainResult {
    Model<S> model;
    std::vector<EpochRecord> history;
    std::vector<double> step_l_seg;  // per optimization step
    int best_epoch = 0;
    bool early_stopped = false;
};

inline void write_history_csv(const std::vector<EpochRecord>& h, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw Error("cannot write " + path);
    os << "epoch,l_seg,i_vcci,l_sim,val_metric\n";
    os.precision(10);
    for (const auto& r : h) os << r.epoch << ',' << r.l_seg << ',' << r.i_vcci << ',' << r.l_sim << ',' << r.val_metric << '\n';
}

template <typename S>
std::vector<Mat<S>*> tensors_of(Encoder<S>& e) {
    std::vector<Mat<S>*> v;
    e.for_each_tensor([&](const std::string&, Mat<S>& t) { v.push_back(&t); });
    return v;
}

template <typename S>
std::vector<Mat<S>*> tensors_of(DecoderParams<S>& d) {
    std::vector<Mat<S>*> v;
    d.for_each_tensor([&](const std::string&, Mat<S>& t) { v.push_back(&t); });
    return v;
}

template <typename S>
std::vector<Mat<S>*> tensors_of(QNetParams<S>& q) {
    std::vector<Mat<S>*> v;
    q.for_each_tensor([&](const std::string&, Mat<S>& t) { v.push_back(&t); });
    return v;
}

/// Fraction of validation frames whose thresholded / argmax prediction equals
/// the label.
template <typename S>
double frame_accuracy(const Model<S>& m, const std::vector<Episode>& eps) {
    std::size_t correct = 0, total = 0;
    for (const auto& e : eps) {
        const auto x = to_scalar<S>(e.signal);
        const auto [z, p] = m.infer(x);
        for (Eigen::Index t = 0; t < p.values.rows(); ++t) {
            int pred = 0;
            if (m.shape.task == Task::qrs) {
                pred = p.values(t, 0) > S(0.5) ? 1 : 0;
            } else {
                p.values.row(t).maxCoeff(&pred);
            }
            correct += pred == e.frame_labels[static_cast<std::size_t>(t)] ? 1 : 0;
            ++total;
        }
    }
    return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

using ProgressFn = std::function<void(const EpochRecord&)>;

/// Trains one model. Validation episodes drive early stopping on frame
/// accuracy; the returned model is the best-validation snapshot (or the last
/// one when no validation set is given).
template <typename S>
TrainResult<S> train_model(const TrainConfig& cfg, const std::vector<Episode>& train_eps, const std::vector<Episode>& val_eps,
                           const ProgressFn& progress = {}, std::optional<Model<S>> init = std::nullopt) {
    cfg.check();
    if (train_eps.empty()) throw Error("training set is empty");
    TrainResult<S> res;
    res.model = init ? std::move(*init) : init_params<S>(cfg.model_shape(), cfg.seed);
    Model<S>& m = res.model;
    const int frames = m.encoder->frames();
    const int fl = m.shape.encoder.downsample();
    for (const auto& e : train_eps)
        if (static_cast<int>(e.signal.size()) != m.encoder->input_len() || static_cast<int>(e.frames()) != frames)
            throw Error("training episode shape does not match the encoder");
    if (cfg.intervention_w > frames) throw Error("intervention_w exceeds frame count");

    std::mt19937_64 shuffle_rng(cfg.seed + 1);
    std::mt19937_64 do_rng(cfg.seed + 2);
    Adam<S> opt_enc(cfg.beta), opt_dec(cfg.beta), opt_q(cfg.alpha);

    Model<S> grads = m.zeros_like();
    auto enc_p = tensors_of(*m.encoder), dec_p = tensors_of(m.decoder), q_p = tensors_of(m.qnet);
    auto enc_g = tensors_of(*grads.encoder), dec_g = tensors_of(grads.decoder), q_g = tensors_of(grads.qnet);
    auto zero = [](std::vector<Mat<S>*>& v) {
        for (auto* t : v) t->setZero();
    };

    const bool use_cci = cfg.mode == TrainMode::cci && !cfg.intervention_kinds.empty();
    const bool use_aug = cfg.mode == TrainMode::augment && !cfg.intervention_kinds.empty();
    const int max_start = frames - cfg.intervention_w;
    std::uniform_int_distribution<int> tau_dist(0, max_start);
    const StepWeights wts{cfg.lambda1, cfg.lambda2, cfg.encoder_gets_seg_grad};

    double best_metric = -1.0;
    std::optional<Model<S>> best;
    for (int epoch = 1; epoch <= cfg.epochs_max; ++epoch) {
        std::vector<BatchItem> stream;
        for (const auto& e : train_eps) stream.push_back({&e, std::nullopt});
        if (use_aug) {
            std::uniform_int_distribution<std::size_t> kind_dist(0, cfg.intervention_kinds.size() - 1);
            for (const auto& e : train_eps) {
                const auto kind = cfg.intervention_kinds[kind_dist(do_rng)];
                stream.push_back({&e, InterventionSpec{kind, tau_dist(do_rng), cfg.intervention_w, fl}});
            }
        }
        std::shuffle(stream.begin(), stream.end(), shuffle_rng);

        EpochRecord rec;
        rec.epoch = epoch;
        rec.episodes_visited = stream.size();
        std::size_t steps = 0;
        for (std::size_t b0 = 0; b0 < stream.size(); b0 += static_cast<std::size_t>(cfg.batch_n)) {
            const auto b1 = std::min(stream.size(), b0 + static_cast<std::size_t>(cfg.batch_n));
            std::vector<BatchItem> items(stream.begin() + static_cast<std::ptrdiff_t>(b0), stream.begin() + static_cast<std::ptrdiff_t>(b1));
            const int N = static_cast<int>(items.size());

            StepPlan plan;
            plan.w = cfg.intervention_w;
            if (use_cci) {
                std::vector<std::vector<int>> draws;
                if (cfg.frames_per_step == 0) {
                    for (int t = 0; t <= max_start; ++t) draws.emplace_back(static_cast<std::size_t>(N), t);
                } else {
                    for (int f = 0; f < cfg.frames_per_step; ++f) {
                        std::vector<int> taus(static_cast<std::size_t>(N));
                        for (auto& t : taus) t = tau_dist(do_rng);
                        draws.push_back(std::move(taus));
                    }
                }
                for (const auto& taus : draws)
                    for (auto kind : cfg.intervention_kinds)
                        plan.groups.push_back({kind, taus, sample_negatives(plan.w * N, N, do_rng)});
            }

            auto cache = forward_step(m, items, plan, true);

            // q-network: ascend the likelihood of covered pairs (encodings detached).
            if (!plan.groups.empty()) {
                zero(q_g);
                for (std::size_t g = 0; g < plan.groups.size(); ++g) {
                    auto [zc, zdoc] = covered_pairs(cache, plan, g);
                    QNetParams<S> gq = m.qnet.zeros_like();
                    qnet_ll(m.qnet, zc, zdoc, &gq);
                    auto gq_t = tensors_of(gq);
                    for (std::size_t k = 0; k < q_g.size(); ++k)
                        *q_g[k] += *gq_t[k] * static_cast<S>(1.0 / static_cast<double>(plan.groups.size()));
                }
                opt_q.step(q_p, q_g);
            }

            zero(enc_g);
            zero(dec_g);
            const auto loss = composite_backward(m, items, cache, plan, wts, &grads);
            if (!std::isfinite(loss.total) || !std::isfinite(loss.l_seg) || !std::isfinite(loss.i_vcci) || !std::isfinite(loss.l_sim)) {
                std::ostringstream os;
                os << "training diverged at epoch " << epoch << " step " << steps << ": l_seg=" << loss.l_seg
                   << " i_vcci=" << loss.i_vcci << " l_sim=" << loss.l_sim;
                throw Error(os.str());
            }
            opt_enc.step(enc_p, enc_g);
            opt_dec.step(dec_p, dec_g);

            res.step_l_seg.push_back(loss.l_seg);
            rec.l_seg += loss.l_seg;
            rec.i_vcci += loss.i_vcci;
            rec.l_sim += loss.l_sim;
            ++steps;
        }
        if (steps) {
            rec.l_seg /= static_cast<double>(steps);
            rec.i_vcci /= static_cast<double>(steps);
            rec.l_sim /= static_cast<double>(steps);
        }

        if (!val_eps.empty()) {
            rec.val_metric = frame_accuracy(m, val_eps);
            if (rec.val_metric > best_metric) {
                best_metric = rec.val_metric;
                res.best_epoch = epoch;
                best = m;
            }
        } else {
            res.best_epoch = epoch;
        }
        res.history.push_back(rec);
        if (progress) progress(rec);
        if (!val_eps.empty() && epoch - res.best_epoch >= cfg.patience) {
            res.early_stopped = true;
            break;
        }
    }
    if (best) res.model = std::move(*best);
    return res;
}

} // namespace cci
