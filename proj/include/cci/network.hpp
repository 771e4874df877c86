#pragma once

// Multi-branch dilated CNN encoder (MBCNN), per-frame dense decoder heads and
// the Gaussian variational q-network.

#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "common.hpp"
#include "layers.hpp"

namespace cci {

using nn::Mat;

struct ConvSpec {
    int kernel = 3;
    int channels = 8;
    int dilation = 1;

    bool operator==(const ConvSpec&) const = default;
};

/// Architecture of a multi-branch encoder. `stages[s][b]` is the conv stack
/// of branch b in stage s; every stage ends with instance normalization and
/// MaxPool1D(2) applied per branch. The branch features are concatenated and
/// mixed by a linear kernel-1 convolution to `latent_dim` channels.
struct MbcnnSpec {
    int input_len = 2500;
    int latent_dim = 192;
    std::vector<std::vector<std::vector<ConvSpec>>> stages;

    int branches() const { return stages.empty() ? 0 : static_cast<int>(stages.front().size()); }
    int downsample() const { return 1 << stages.size(); }
    int frames() const { return input_len / downsample(); }

    int concat_channels() const {
        int c = 0;
        for (const auto& br : stages.back()) c += br.back().channels;
        return c;
    }

    void check() const {
        if (stages.empty() || branches() == 0) throw Error("MBCNN layout has no stages");
        for (const auto& st : stages) {
            if (static_cast<int>(st.size()) != branches()) throw Error("MBCNN stages disagree on branch count");
            for (const auto& br : st) {
                if (br.empty()) throw Error("MBCNN branch stage without convolutions");
                for (const auto& c : br)
                    if (c.kernel < 1 || c.kernel % 2 == 0 || c.channels < 1 || c.dilation < 1)
                        throw Error("MBCNN conv needs odd kernel, positive channels and dilation");
            }
        }
        if (input_len % downsample() != 0) throw Error("input length not divisible by the pooling factor");
        if (latent_dim < 1) throw Error("latent_dim must be positive");
    }

    /// Table layout for QRS location: 2500 samples -> 625 frames.
    /// `divisor` shrinks every branch channel count (reduced-width variant).
    static MbcnnSpec qrs(int divisor = 1, int latent_dim = 192) {
        auto c = [divisor](int k, int ch, int d) { return ConvSpec{k, std::max(1, ch / divisor), d}; };
        MbcnnSpec s;
        s.input_len = 2500;
        s.latent_dim = latent_dim;
        s.stages = {
            {{c(11, 16, 1), c(7, 32, 1), c(7, 32, 1)},
             {c(11, 16, 2), c(7, 32, 2), c(7, 32, 4)},
             {c(11, 16, 4), c(7, 32, 4), c(7, 32, 8)}},
            {{c(5, 64, 1), c(5, 64, 1), c(5, 64, 1)},
             {c(5, 64, 8), c(5, 64, 8), c(5, 64, 8)},
             {c(5, 64, 16), c(5, 64, 32), c(5, 64, 64)}},
        };
        return s;
    }

    /// Table layout for heart sound segmentation: 4000 samples -> 250 frames.
    static MbcnnSpec heartsound(int divisor = 1, int latent_dim = 192) {
        auto c = [divisor](int k, int ch, int d) { return ConvSpec{k, std::max(1, ch / divisor), d}; };
        auto triple = [&](int k, int ch, int d1, int d2, int d3) {
            return std::vector<std::vector<ConvSpec>>{{c(k, ch, d1), c(k, ch, d1), c(k, ch, d1)},
                                                      {c(k, ch, d2), c(k, ch, d2), c(k, ch, d2)},
                                                      {c(k, ch, d3), c(k, ch, d3), c(k, ch, d3)}};
        };
        MbcnnSpec s;
        s.input_len = 4000;
        s.latent_dim = latent_dim;
        s.stages = {triple(11, 8, 1, 2, 4), triple(7, 16, 1, 4, 8), triple(5, 32, 1, 8, 16), triple(3, 64, 1, 16, 32)};
        return s;
    }

    static MbcnnSpec for_task(Task t, int divisor = 1, int latent_dim = 192) {
        return t == Task::qrs ? qrs(divisor, latent_dim) : heartsound(divisor, latent_dim);
    }

    bool operator==(const MbcnnSpec&) const = default;
};

inline nlohmann::json to_json(const MbcnnSpec& s) {
    nlohmann::json j;
    j["input_len"] = s.input_len;
    j["latent_dim"] = s.latent_dim;
    auto& st = j["stages"] = nlohmann::json::array();
    for (const auto& stage : s.stages) {
        auto js = nlohmann::json::array();
        for (const auto& br : stage) {
            auto jb = nlohmann::json::array();
            for (const auto& c : br) jb.push_back({c.kernel, c.channels, c.dilation});
            js.push_back(jb);
        }
        st.push_back(js);
    }
    return j;
}

inline MbcnnSpec mbcnn_spec_from_json(const nlohmann::json& j) {
    MbcnnSpec s;
    s.input_len = j.at("input_len").get<int>();
    s.latent_dim = j.at("latent_dim").get<int>();
    for (const auto& js : j.at("stages")) {
        std::vector<std::vector<ConvSpec>> stage;
        for (const auto& jb : js) {
            std::vector<ConvSpec> br;
            for (const auto& c : jb) br.push_back({c.at(0).get<int>(), c.at(1).get<int>(), c.at(2).get<int>()});
            stage.push_back(br);
        }
        s.stages.push_back(stage);
    }
    s.check();
    return s;
}

/// Encoder output: row t is the d-dimensional latent frame z^t.
template <typename S>
struct LatentSequence {
    Mat<S> values;  // T x d
    double frame_ms = 16.0;

    Eigen::Index frames() const { return values.rows(); }
    Eigen::Index dim() const { return values.cols(); }
};

/// Per-frame class probabilities, T x C.
template <typename S>
struct FrameProbs {
    Mat<S> values;
    Task task = Task::qrs;
};

// ---------------------------------------------------------------------------
// Encoder interface
// ---------------------------------------------------------------------------

template <typename S>
using TensorVisitor = std::function<void(const std::string&, Mat<S>&)>;

struct EncoderTape {
    virtual ~EncoderTape() = default;
};

/// Pluggable backbone: signal -> T x d latent sequence, with a recorded tape
/// for reverse-mode gradients.
template <typename S>
class Encoder {
public:
    virtual ~Encoder() = default;

    virtual int input_len() const = 0;
    virtual int frames() const = 0;
    virtual int latent_dim() const = 0;

    virtual Mat<S> forward(std::span<const S> x, std::unique_ptr<EncoderTape>* tape) const = 0;
    /// Accumulates parameter gradients of dZ (T x d) into `grads`, an encoder
    /// of identical shape.
    virtual void backward(const EncoderTape& tape, const Mat<S>& dz, Encoder& grads) const = 0;

    virtual std::unique_ptr<Encoder> zeros_like() const = 0;
    virtual std::unique_ptr<Encoder> clone() const = 0;
    virtual void for_each_tensor(const TensorVisitor<S>& f) = 0;
    virtual std::string kind() const = 0;
};

// ---------------------------------------------------------------------------
// MBCNN
// ---------------------------------------------------------------------------

template <typename S>
struct EncoderParams {
    MbcnnSpec spec;
    std::vector<std::vector<nn::Linear<S>>> branch;  // [branch][layer over all stages]
    nn::Linear<S> head;                              // latent_dim x concat_channels
};

template <typename S>
class MbcnnEncoder final : public Encoder<S> {
public:
    explicit MbcnnEncoder(EncoderParams<S> p) : p_(std::move(p)) { p_.spec.check(); }

    const EncoderParams<S>& params() const { return p_; }
    EncoderParams<S>& params() { return p_; }

    int input_len() const override { return p_.spec.input_len; }
    int frames() const override { return p_.spec.frames(); }
    int latent_dim() const override { return p_.spec.latent_dim; }
    std::string kind() const override { return "mbcnn"; }

    struct Tape final : EncoderTape {
        std::vector<std::vector<nn::ConvTape<S>>> conv;  // [branch][layer]
        std::vector<std::vector<nn::NormTape<S>>> norm;  // [branch][stage]
        std::vector<std::vector<nn::PoolTape>> pool;     // [branch][stage]
        Mat<S> concat;
        std::vector<Eigen::Index> branch_rows;
    };

    Mat<S> forward(std::span<const S> x, std::unique_ptr<EncoderTape>* tape_out) const override {
        const auto& spec = p_.spec;
        if (static_cast<int>(x.size()) != spec.input_len)
            throw Error("encoder expects input length " + std::to_string(spec.input_len) + ", got " +
                        std::to_string(x.size()));
        std::unique_ptr<Tape> tape;
        if (tape_out) {
            tape = std::make_unique<Tape>();
            tape->conv.resize(static_cast<std::size_t>(spec.branches()));
            tape->norm.resize(static_cast<std::size_t>(spec.branches()));
            tape->pool.resize(static_cast<std::size_t>(spec.branches()));
        }
        Mat<S> input(1, spec.input_len);
        for (int i = 0; i < spec.input_len; ++i) input(0, i) = x[static_cast<std::size_t>(i)];

        std::vector<Mat<S>> feats;
        for (int b = 0; b < spec.branches(); ++b) {
            Mat<S> h = input;
            std::size_t layer = 0;
            for (const auto& stage : spec.stages) {
                for (const auto& cs : stage[static_cast<std::size_t>(b)]) {
                    nn::ConvTape<S>* ct = nullptr;
                    if (tape) ct = &tape->conv[static_cast<std::size_t>(b)].emplace_back();
                    h = nn::conv_forward(p_.branch[static_cast<std::size_t>(b)][layer++], h, cs.kernel, cs.dilation, true, ct);
                }
                nn::NormTape<S>* nt = tape ? &tape->norm[static_cast<std::size_t>(b)].emplace_back() : nullptr;
                h = nn::instance_norm_forward(h, nt);
                nn::PoolTape* pt = tape ? &tape->pool[static_cast<std::size_t>(b)].emplace_back() : nullptr;
                h = nn::maxpool2_forward(h, pt);
            }
            feats.push_back(std::move(h));
        }
        Eigen::Index rows = 0;
        for (const auto& f : feats) rows += f.rows();
        Mat<S> concat(rows, spec.frames());
        Eigen::Index r = 0;
        for (const auto& f : feats) {
            concat.middleRows(r, f.rows()) = f;
            if (tape) tape->branch_rows.push_back(f.rows());
            r += f.rows();
        }
        Mat<S> z = nn::conv_forward(p_.head, concat, 1, 1, false, nullptr);  // d x T
        if (tape) {
            tape->concat = std::move(concat);
            *tape_out = std::move(tape);
        }
        return z.transpose();
    }

    void backward(const EncoderTape& tape_base, const Mat<S>& dz, Encoder<S>& grads_base) const override {
        const auto& tape = dynamic_cast<const Tape&>(tape_base);
        auto& grads = dynamic_cast<MbcnnEncoder&>(grads_base).p_;
        const auto& spec = p_.spec;

        Mat<S> dzt = dz.transpose();  // d x T
        grads.head.W.noalias() += dzt * tape.concat.transpose();
        grads.head.b.col(0) += dzt.rowwise().sum();
        Mat<S> dconcat = p_.head.W.transpose() * dzt;

        Eigen::Index r = 0;
        for (int b = 0; b < spec.branches(); ++b) {
            const auto bi = static_cast<std::size_t>(b);
            Mat<S> dh = dconcat.middleRows(r, tape.branch_rows[bi]);
            r += tape.branch_rows[bi];
            std::size_t layer = p_.branch[bi].size();
            for (std::size_t s = spec.stages.size(); s-- > 0;) {
                dh = nn::maxpool2_backward(tape.pool[bi][s], dh);
                dh = nn::instance_norm_backward(tape.norm[bi][s], dh);
                const auto& convs = spec.stages[s][bi];
                for (std::size_t c = convs.size(); c-- > 0;) {
                    --layer;
                    const bool want_dx = layer > 0;
                    dh = nn::conv_backward(p_.branch[bi][layer], tape.conv[bi][layer], std::move(dh), convs[c].kernel,
                                           convs[c].dilation, true, grads.branch[bi][layer], want_dx);
                }
            }
        }
    }

    std::unique_ptr<Encoder<S>> zeros_like() const override {
        EncoderParams<S> z;
        z.spec = p_.spec;
        for (const auto& br : p_.branch) {
            auto& zb = z.branch.emplace_back();
            for (const auto& l : br) zb.push_back(nn::zeros_like(l));
        }
        z.head = nn::zeros_like(p_.head);
        return std::make_unique<MbcnnEncoder>(std::move(z));
    }

    std::unique_ptr<Encoder<S>> clone() const override { return std::make_unique<MbcnnEncoder>(p_); }

    void for_each_tensor(const TensorVisitor<S>& f) override {
        for (std::size_t b = 0; b < p_.branch.size(); ++b)
            for (std::size_t l = 0; l < p_.branch[b].size(); ++l) {
                const std::string base = "encoder.branch" + std::to_string(b) + ".conv" + std::to_string(l);
                f(base + ".weight", p_.branch[b][l].W);
                f(base + ".bias", p_.branch[b][l].b);
            }
        f("encoder.head.weight", p_.head.W);
        f("encoder.head.bias", p_.head.b);
    }

private:
    EncoderParams<S> p_;
};

template <typename S>
EncoderParams<S> init_encoder(const MbcnnSpec& spec, std::mt19937_64& rng) {
    spec.check();
    EncoderParams<S> p;
    p.spec = spec;
    p.branch.resize(static_cast<std::size_t>(spec.branches()));
    for (int b = 0; b < spec.branches(); ++b) {
        int cin = 1;
        for (const auto& stage : spec.stages)
            for (const auto& cs : stage[static_cast<std::size_t>(b)]) {
                p.branch[static_cast<std::size_t>(b)].push_back(
                    nn::make_linear<S>(cs.channels, static_cast<Eigen::Index>(cin) * cs.kernel, std::sqrt(2.0), rng));
                cin = cs.channels;
            }
    }
    p.head = nn::make_linear<S>(spec.latent_dim, spec.concat_channels(), 1.0, rng);
    return p;
}

/// Inference-only encode through the MBCNN parameters.
template <typename S>
LatentSequence<S> mbcnn_encode(const EncoderParams<S>& params, std::span<const S> x, double fs_hz = 0.0) {
    MbcnnEncoder<S> enc(params);
    LatentSequence<S> z;
    z.values = enc.forward(x, nullptr);
    z.frame_ms = fs_hz > 0.0 ? 1000.0 * params.spec.downsample() / fs_hz : 0.0;
    return z;
}

// ---------------------------------------------------------------------------
// Decoder: two dense layers applied per frame.
// ---------------------------------------------------------------------------

template <typename S>
struct DecoderParams {
    Task task = Task::qrs;
    nn::Linear<S> hidden;  // h x d
    nn::Linear<S> out;     // C x h

    void for_each_tensor(const TensorVisitor<S>& f) {
        f("decoder.hidden.weight", hidden.W);
        f("decoder.hidden.bias", hidden.b);
        f("decoder.out.weight", out.W);
        f("decoder.out.bias", out.b);
    }

    DecoderParams zeros_like() const { return {task, nn::zeros_like(hidden), nn::zeros_like(out)}; }
};

template <typename S>
struct DecoderTape {
    Mat<S> z;
    Mat<S> h;
};

template <typename S>
Mat<S> decode_logits(const DecoderParams<S>& p, const Mat<S>& z, std::type_identity_t<DecoderTape<S>>* tape) {
    if (z.cols() != p.hidden.W.cols())
        throw Error("decoder expects " + std::to_string(p.hidden.W.cols()) + "-dim frames, got " +
                    std::to_string(z.cols()));
    Mat<S> h = z * p.hidden.W.transpose();
    h.rowwise() += p.hidden.b.col(0).transpose();
    h = h.cwiseMax(S(0));
    Mat<S> logits = h * p.out.W.transpose();
    logits.rowwise() += p.out.b.col(0).transpose();
    if (tape) {
        tape->z = z;
        tape->h = std::move(h);
    }
    return logits;
}

template <typename S>
Mat<S> logits_to_probs(const Mat<S>& logits, Task task) {
    Mat<S> p(logits.rows(), logits.cols());
    if (task == Task::qrs) {
        p = (S(1) / (S(1) + (-logits.array()).exp())).matrix();
        return p;
    }
    for (Eigen::Index t = 0; t < logits.rows(); ++t) {
        const S m = logits.row(t).maxCoeff();
        auto e = (logits.row(t).array() - m).exp();
        p.row(t) = e / e.sum();
    }
    return p;
}

template <typename S>
FrameProbs<S> decode(const DecoderParams<S>& p, const LatentSequence<S>& z) {
    return {logits_to_probs(decode_logits(p, z.values, nullptr), p.task), p.task};
}

/// Returns dZ and accumulates parameter gradients given dLogits.
template <typename S>
Mat<S> decoder_backward(const DecoderParams<S>& p, const DecoderTape<S>& tape, const Mat<S>& dlogits,
                        DecoderParams<S>* grads) {
    Mat<S> dh = dlogits * p.out.W;
    dh = (tape.h.array() > S(0)).select(dh, S(0));
    if (grads) {
        grads->out.W.noalias() += dlogits.transpose() * tape.h;
        grads->out.b.col(0) += dlogits.colwise().sum().transpose();
        grads->hidden.W.noalias() += dh.transpose() * tape.z;
        grads->hidden.b.col(0) += dh.colwise().sum().transpose();
    }
    return dh * p.hidden.W;
}

template <typename S>
DecoderParams<S> init_decoder(Task task, int latent_dim, int hidden, std::mt19937_64& rng) {
    DecoderParams<S> p;
    p.task = task;
    p.hidden = nn::make_linear<S>(hidden, latent_dim, std::sqrt(2.0), rng);
    p.out = nn::make_linear<S>(num_classes(task), hidden, 0.1, rng);
    return p;
}

// ---------------------------------------------------------------------------
// q-network: q(z | z_do) = N(mu(z_do), diag(var(z_do))).
// ---------------------------------------------------------------------------

inline constexpr double kLogVarClamp = 7.0;

template <typename S>
struct QNetParams {
    nn::Linear<S> l1;      // h x d
    nn::Linear<S> l2;      // h x h
    nn::Linear<S> mu;      // d x h
    nn::Linear<S> logvar;  // d x h

    int dim() const { return static_cast<int>(l1.W.cols()); }

    void for_each_tensor(const TensorVisitor<S>& f) {
        f("qnet.l1.weight", l1.W);
        f("qnet.l1.bias", l1.b);
        f("qnet.l2.weight", l2.W);
        f("qnet.l2.bias", l2.b);
        f("qnet.mu.weight", mu.W);
        f("qnet.mu.bias", mu.b);
        f("qnet.logvar.weight", logvar.W);
        f("qnet.logvar.bias", logvar.b);
    }

    QNetParams zeros_like() const {
        return {nn::zeros_like(l1), nn::zeros_like(l2), nn::zeros_like(mu), nn::zeros_like(logvar)};
    }
};

/// Batched q-network outputs; row m belongs to input row m.
template <typename S>
struct QNetOutput {
    Mat<S> mu;
    Mat<S> logvar;  // clamped
    Mat<S> var;
};

template <typename S>
struct QNetTape {
    Mat<S> x, h1, h2, logvar_pre;
};

template <typename S>
QNetOutput<S> qnet_forward_batch(const QNetParams<S>& p, const Mat<S>& zdo, std::type_identity_t<QNetTape<S>>* tape) {
    if (zdo.cols() != p.l1.W.cols())
        throw Error("q-network expects dimension " + std::to_string(p.l1.W.cols()) + ", got " +
                    std::to_string(zdo.cols()));
    auto dense = [](const nn::Linear<S>& l, const Mat<S>& in) {
        Mat<S> o = in * l.W.transpose();
        o.rowwise() += l.b.col(0).transpose();
        return o;
    };
    Mat<S> h1 = dense(p.l1, zdo).cwiseMax(S(0));
    Mat<S> h2 = dense(p.l2, h1).cwiseMax(S(0));
    QNetOutput<S> out;
    out.mu = dense(p.mu, h2);
    Mat<S> pre = dense(p.logvar, h2);
    const S c = static_cast<S>(kLogVarClamp);
    out.logvar = pre.cwiseMax(-c).cwiseMin(c);
    out.var = out.logvar.array().exp().matrix();
    if (tape) {
        tape->x = zdo;
        tape->h1 = std::move(h1);
        tape->h2 = std::move(h2);
        tape->logvar_pre = std::move(pre);
    }
    return out;
}

/// Backward through the q-network; returns d(input). `grads` may be null when
/// parameters are frozen.
template <typename S>
Mat<S> qnet_backward(const QNetParams<S>& p, const QNetTape<S>& tape, const Mat<S>& dmu, const Mat<S>& dlogvar,
                     std::type_identity_t<QNetParams<S>>* grads) {
    const S c = static_cast<S>(kLogVarClamp);
    Mat<S> dpre = ((tape.logvar_pre.array() > -c) && (tape.logvar_pre.array() < c)).select(dlogvar, S(0));
    Mat<S> dh2 = dmu * p.mu.W + dpre * p.logvar.W;
    dh2 = (tape.h2.array() > S(0)).select(dh2, S(0));
    Mat<S> dh1 = dh2 * p.l2.W;
    dh1 = (tape.h1.array() > S(0)).select(dh1, S(0));
    if (grads) {
        grads->mu.W.noalias() += dmu.transpose() * tape.h2;
        grads->mu.b.col(0) += dmu.colwise().sum().transpose();
        grads->logvar.W.noalias() += dpre.transpose() * tape.h2;
        grads->logvar.b.col(0) += dpre.colwise().sum().transpose();
        grads->l2.W.noalias() += dh2.transpose() * tape.h1;
        grads->l2.b.col(0) += dh2.colwise().sum().transpose();
        grads->l1.W.noalias() += dh1.transpose() * tape.x;
        grads->l1.b.col(0) += dh1.colwise().sum().transpose();
    }
    return dh1 * p.l1.W;
}

/// Single-frame convenience form returning (mu, var).
template <typename S>
std::pair<std::vector<S>, std::vector<S>> qnet_forward(const QNetParams<S>& p, std::span<const S> zdo) {
    Mat<S> x(1, static_cast<Eigen::Index>(zdo.size()));
    for (std::size_t j = 0; j < zdo.size(); ++j) x(0, static_cast<Eigen::Index>(j)) = zdo[j];
    auto o = qnet_forward_batch(p, x, nullptr);
    return {std::vector<S>(o.mu.data(), o.mu.data() + o.mu.size()),
            std::vector<S>(o.var.data(), o.var.data() + o.var.size())};
}

template <typename S>
QNetParams<S> init_qnet(int dim, int hidden, std::mt19937_64& rng) {
    QNetParams<S> p;
    p.l1 = nn::make_linear<S>(hidden, dim, std::sqrt(2.0), rng);
    p.l2 = nn::make_linear<S>(hidden, hidden, std::sqrt(2.0), rng);
    p.mu = nn::make_linear<S>(dim, hidden, 1.0, rng);
    // Near-zero log-variance head so that var starts close to 1.
    p.logvar = nn::make_linear<S>(dim, hidden, 0.01, rng);
    return p;
}

// ---------------------------------------------------------------------------
// Full model.
// ---------------------------------------------------------------------------

struct ModelShape {
    Task task = Task::qrs;
    MbcnnSpec encoder = MbcnnSpec::qrs();
    int decoder_hidden = 64;
    int qnet_hidden = 0;  // 0 -> latent_dim

    int qnet_width() const { return qnet_hidden > 0 ? qnet_hidden : encoder.latent_dim; }

    static ModelShape for_task(Task t, int divisor = 1, int latent_dim = 192) {
        return {t, MbcnnSpec::for_task(t, divisor, latent_dim), 64, 0};
    }
};

inline nlohmann::json to_json(const ModelShape& m) {
    return {{"task", std::string(to_string(m.task))},
            {"encoder", to_json(m.encoder)},
            {"decoder_hidden", m.decoder_hidden},
            {"qnet_hidden", m.qnet_hidden}};
}

inline ModelShape model_shape_from_json(const nlohmann::json& j) {
    ModelShape m;
    m.task = task_from_string(j.at("task").get<std::string>());
    m.encoder = mbcnn_spec_from_json(j.at("encoder"));
    m.decoder_hidden = j.at("decoder_hidden").get<int>();
    m.qnet_hidden = j.at("qnet_hidden").get<int>();
    return m;
}

template <typename S>
struct Model {
    ModelShape shape;
    std::unique_ptr<Encoder<S>> encoder;
    DecoderParams<S> decoder;
    QNetParams<S> qnet;

    Model() = default;
    Model(const Model& o) : shape(o.shape), encoder(o.encoder ? o.encoder->clone() : nullptr), decoder(o.decoder), qnet(o.qnet) {}
    Model& operator=(const Model& o) {
        if (this != &o) {
            Model tmp(o);
            *this = std::move(tmp);
        }
        return *this;
    }
    Model(Model&&) noexcept = default;
    Model& operator=(Model&&) noexcept = default;

    /// Visits every tensor in a fixed order: encoder, decoder, q-network.
    void for_each_tensor(const TensorVisitor<S>& f) {
        encoder->for_each_tensor(f);
        decoder.for_each_tensor(f);
        qnet.for_each_tensor(f);
    }

    Model zeros_like() const {
        Model z;
        z.shape = shape;
        z.encoder = encoder->zeros_like();
        z.decoder = decoder.zeros_like();
        z.qnet = qnet.zeros_like();
        return z;
    }

    /// Inference: episode signal -> (latent, probabilities).
    std::pair<LatentSequence<S>, FrameProbs<S>> infer(std::span<const S> x) const {
        LatentSequence<S> z;
        z.values = encoder->forward(x, nullptr);
        z.frame_ms = 1000.0 * shape.encoder.downsample() / target_fs(shape.task);
        FrameProbs<S> p = decode(decoder, z);
        return {std::move(z), std::move(p)};
    }
};

/// Fan-in scaled random initialization, deterministic per seed.
template <typename S>
Model<S> init_params(const ModelShape& shape, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    Model<S> m;
    m.shape = shape;
    m.encoder = std::make_unique<MbcnnEncoder<S>>(init_encoder<S>(shape.encoder, rng));
    m.decoder = init_decoder<S>(shape.task, shape.encoder.latent_dim, shape.decoder_hidden, rng);
    m.qnet = init_qnet<S>(shape.encoder.latent_dim, shape.qnet_width(), rng);
    return m;
}

template <typename S>
Model<S> init_params(Task task, std::uint64_t seed) {
    return init_params<S>(ModelShape::for_task(task), seed);
}

/// Order-sensitive fingerprint of all parameter bytes.
template <typename S>
std::uint64_t param_hash(Model<S>& m) {
    std::uint64_t h = 1469598103934665603ULL;
    m.for_each_tensor([&](const std::string& name, Mat<S>& t) {
        h = fnv1a(name, h);
        h = fnv1a(std::string_view(reinterpret_cast<const char*>(t.data()), static_cast<std::size_t>(t.size()) * sizeof(S)), h);
    });
    return h;
}

/// Converts a model between scalar types.
template <typename To, typename From>
Model<To> cast_model(const Model<From>& src) {
    Model<To> dst = init_params<To>(src.shape, 0);
    Model<From>& s = const_cast<Model<From>&>(src);
    std::vector<Mat<From>*> from;
    s.for_each_tensor([&](const std::string&, Mat<From>& t) { from.push_back(&t); });
    std::size_t i = 0;
    dst.for_each_tensor([&](const std::string&, Mat<To>& t) { t = from[i++]->template cast<To>(); });
    return dst;
}

} // namespace cci
