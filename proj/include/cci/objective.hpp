#pragma once

// Segmentation cross-entropy, cosine alignment, diagonal Gaussian
// log-likelihood, the q-network likelihood objective and the cross-frame
// contrastive log-ratio MI upper-bound estimate.

#include <cmath>
#include <numbers>
#include <random>
#include <span>
#include <vector>

#include "common.hpp"
#include "network.hpp"

namespace cci {

struct LossBreakdown {
    double l_seg = 0.0;
    double i_vcci = 0.0;
    double l_sim = 0.0;
    double total = 0.0;
    double lambda1 = 0.1;
    double lambda2 = 1.0;
};

inline constexpr double kDefaultLambda1 = 0.1;
inline constexpr double kDefaultLambda2 = 1.0;

inline LossBreakdown total_loss(double l_seg, double i_vcci, double l_sim, double lambda1 = kDefaultLambda1,
                                double lambda2 = kDefaultLambda2) {
    if (lambda1 < 0.0 || lambda2 < 0.0) throw Error("loss weights must be non-negative");
    return {l_seg, i_vcci, l_sim, l_seg + lambda1 * i_vcci - lambda2 * l_sim, lambda1, lambda2};
}

// ---------------------------------------------------------------------------
// Segmentation loss
// ---------------------------------------------------------------------------

namespace detail {
inline constexpr double kProbFloor = 1e-12;
}

/// Mean per-frame cross-entropy. QRS probabilities are T x 1 (binary), heart
/// sound T x 4 (categorical).
template <typename S>
double seg_loss(const Mat<S>& probs, std::span<const int> labels) {
    if (static_cast<std::size_t>(probs.rows()) != labels.size()) throw Error("seg_loss: shape mismatch");
    if (probs.rows() == 0) throw Error("seg_loss: no frames");
    double sum = 0.0;
    for (Eigen::Index t = 0; t < probs.rows(); ++t) {
        for (Eigen::Index c = 0; c < probs.cols(); ++c) {
            const double p = static_cast<double>(probs(t, c));
            if (!(p >= 0.0 && p <= 1.0)) throw Error("seg_loss: probability outside [0, 1]");
        }
        const int y = labels[static_cast<std::size_t>(t)];
        if (probs.cols() == 1) {
            if (y != 0 && y != 1) throw Error("seg_loss: binary label must be 0 or 1");
            const double p = static_cast<double>(probs(t, 0));
            sum -= y == 1 ? std::log(std::max(p, detail::kProbFloor)) : std::log(std::max(1.0 - p, detail::kProbFloor));
        } else {
            if (y < 0 || y >= probs.cols()) throw Error("seg_loss: class label out of range");
            sum -= std::log(std::max(static_cast<double>(probs(t, y)), detail::kProbFloor));
        }
    }
    return sum / static_cast<double>(probs.rows());
}

template <typename S>
double seg_loss(const FrameProbs<S>& probs, std::span<const int> labels) {
    return seg_loss(probs.values, labels);
}

/// Cross-entropy from logits with gradient d(loss)/d(logits) scaled by `scale`
/// (the caller's 1/frame-count normalization). Returns the summed loss.
template <typename S>
double seg_loss_from_logits(const Mat<S>& logits, std::span<const int> labels, Task task, double scale, std::type_identity_t<Mat<S>>* dlogits) {
    const Mat<S> p = logits_to_probs(logits, task);
    double sum = 0.0;
    if (dlogits) dlogits->resize(logits.rows(), logits.cols());
    for (Eigen::Index t = 0; t < logits.rows(); ++t) {
        const int y = labels[static_cast<std::size_t>(t)];
        if (task == Task::qrs) {
            // log-sigmoid formulation for stability
            const double l = static_cast<double>(logits(t, 0));
            const double softplus = l > 0 ? l + std::log1p(std::exp(-l)) : std::log1p(std::exp(l));
            sum += y == 1 ? softplus - l : softplus;
            if (dlogits) (*dlogits)(t, 0) = static_cast<S>(scale * (static_cast<double>(p(t, 0)) - y));
        } else {
            const double m = static_cast<double>(logits.row(t).maxCoeff());
            double lse = 0.0;
            for (Eigen::Index c = 0; c < logits.cols(); ++c) lse += std::exp(static_cast<double>(logits(t, c)) - m);
            sum += m + std::log(lse) - static_cast<double>(logits(t, y));
            if (dlogits)
                for (Eigen::Index c = 0; c < logits.cols(); ++c)
                    (*dlogits)(t, c) = static_cast<S>(scale * (static_cast<double>(p(t, c)) - (c == y ? 1.0 : 0.0)));
        }
    }
    return sum;
}

// ---------------------------------------------------------------------------
// Cosine similarity
// ---------------------------------------------------------------------------

template <typename S>
double cosine_similarity(std::span<const S> a, std::span<const S> b) {
    if (a.size() != b.size()) throw Error("cosine_similarity: dimension mismatch");
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += static_cast<double>(a[i]) * static_cast<double>(b[i]);
        aa += static_cast<double>(a[i]) * static_cast<double>(a[i]);
        bb += static_cast<double>(b[i]) * static_cast<double>(b[i]);
    }
    if (aa == 0.0 || bb == 0.0) throw Error("undefined similarity: zero vector");
    return std::clamp(ab / std::sqrt(aa * bb), -1.0, 1.0);
}

template <typename S>
double cosine_similarity(const std::vector<S>& a, const std::vector<S>& b) {
    return cosine_similarity(std::span<const S>(a), std::span<const S>(b));
}

/// Sum over rows [r0, r1) of the row-wise cosine similarity, with gradients
/// scaled by `scale` accumulated into da/db. A tiny norm floor keeps the
/// gradient finite for degenerate latent frames.
template <typename S>
double cosine_rows_with_grad(const Mat<S>& a, const Mat<S>& b, Eigen::Index r0, Eigen::Index r1, double scale,
                             std::type_identity_t<Mat<S>>* da, std::type_identity_t<Mat<S>>* db) {
    double sum = 0.0;
    constexpr double eps = 1e-12;
    for (Eigen::Index r = r0; r < r1; ++r) {
        const double ab = static_cast<double>(a.row(r).dot(b.row(r)));
        const double na = std::max(static_cast<double>(a.row(r).norm()), eps);
        const double nb = std::max(static_cast<double>(b.row(r).norm()), eps);
        const double c = ab / (na * nb);
        sum += c;
        if (da) da->row(r) += (scale * (b.row(r).template cast<double>() / (na * nb) - c * a.row(r).template cast<double>() / (na * na))).template cast<S>();
        if (db) db->row(r) += (scale * (a.row(r).template cast<double>() / (na * nb) - c * b.row(r).template cast<double>() / (nb * nb))).template cast<S>();
    }
    return sum;
}

// ---------------------------------------------------------------------------
// Gaussian log-likelihood and q-network objectives
// ---------------------------------------------------------------------------

/// sum_j [-1/2 ln(2 pi var_j) - (z_j - mu_j)^2 / (2 var_j)]
template <typename S>
double gaussian_loglik(std::span<const S> z, std::span<const S> mu, std::span<const S> var) {
    if (z.size() != mu.size() || z.size() != var.size()) throw Error("gaussian_loglik: dimension mismatch");
    double ll = 0.0;
    for (std::size_t j = 0; j < z.size(); ++j) {
        const double v = static_cast<double>(var[j]);
        if (!(v > 0.0)) throw Error("gaussian_loglik: non-positive variance");
        const double d = static_cast<double>(z[j]) - static_cast<double>(mu[j]);
        ll += -0.5 * std::log(2.0 * std::numbers::pi * v) - d * d / (2.0 * v);
    }
    return ll;
}

template <typename S>
double gaussian_loglik(const std::vector<S>& z, const std::vector<S>& mu, const std::vector<S>& var) {
    return gaussian_loglik(std::span<const S>(z), std::span<const S>(mu), std::span<const S>(var));
}

namespace detail {

/// Log-likelihood of row `zr` of z under the q-output row `qr`, accumulating
/// `w`-weighted gradients into dz (row zr), dmu and dlogvar (row qr).
template <typename S>
double loglik_row(const Mat<S>& z, Eigen::Index zr, const QNetOutput<S>& q, Eigen::Index qr, double w, std::type_identity_t<Mat<S>>* dz,
                  std::type_identity_t<Mat<S>>* dmu, std::type_identity_t<Mat<S>>* dlv) {
    double ll = 0.0;
    const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
    for (Eigen::Index j = 0; j < z.cols(); ++j) {
        const double v = static_cast<double>(q.var(qr, j));
        const double d = static_cast<double>(z(zr, j)) - static_cast<double>(q.mu(qr, j));
        ll += -half_log_2pi - 0.5 * static_cast<double>(q.logvar(qr, j)) - d * d / (2.0 * v);
        if (w != 0.0) {
            if (dz) (*dz)(zr, j) += static_cast<S>(-w * d / v);
            if (dmu) (*dmu)(qr, j) += static_cast<S>(w * d / v);
            if (dlv) (*dlv)(qr, j) += static_cast<S>(w * (-0.5 + 0.5 * d * d / v));
        }
    }
    return ll;
}

} // namespace detail

/// Mean log q(z_m | zdo_m) over rows. When `grads` is given, the gradient of
/// the negated objective (a loss to descend) is accumulated into it.
template <typename S>
double qnet_ll(const QNetParams<S>& q, const Mat<S>& z, const Mat<S>& zdo, std::type_identity_t<QNetParams<S>>* grads = nullptr) {
    if (z.rows() == 0) throw Error("qnet_ll: empty batch");
    if (z.rows() != zdo.rows() || z.cols() != zdo.cols()) throw Error("qnet_ll: pair shape mismatch");
    QNetTape<S> tape;
    const auto out = qnet_forward_batch(q, zdo, grads ? &tape : nullptr);
    const double w = grads ? -1.0 / static_cast<double>(z.rows()) : 0.0;
    Mat<S> dmu, dlv;
    if (grads) {
        dmu = Mat<S>::Zero(z.rows(), z.cols());
        dlv = Mat<S>::Zero(z.rows(), z.cols());
    }
    double sum = 0.0;
    for (Eigen::Index m = 0; m < z.rows(); ++m)
        sum += detail::loglik_row(z, m, out, m, w, nullptr, grads ? &dmu : nullptr, grads ? &dlv : nullptr);
    if (grads) qnet_backward(q, tape, dmu, dlv, grads);
    return sum / static_cast<double>(z.rows());
}

/// Negative indices k'_i drawn uniformly within each consecutive group of
/// `group` rows (self-pairing allowed).
inline std::vector<int> sample_negatives(int rows, int group, std::mt19937_64& rng) {
    if (group <= 0 || rows % group != 0) throw Error("sample_negatives: rows not a multiple of group size");
    std::uniform_int_distribution<int> u(0, group - 1);
    std::vector<int> neg(static_cast<std::size_t>(rows));
    for (int r = 0; r < rows; ++r) neg[static_cast<std::size_t>(r)] = (r / group) * group + u(rng);
    return neg;
}

template <typename S>
struct VcciResult {
    double value = 0.0;
    Mat<S> dz;    // d(value)/dz, scaled by the caller's weight
    Mat<S> dzdo;  // d(value)/dzdo through the frozen q-network
};

/// Mean over rows of log q(z_i | zdo_i) - log q(z_{neg_i} | zdo_i). Gradients
/// with respect to z and zdo are produced when `weight` is non-zero; the
/// q-network parameters are treated as constants.
template <typename S>
VcciResult<S> vcci_with_negatives(const QNetParams<S>& q, const Mat<S>& z, const Mat<S>& zdo, std::span<const int> neg,
                                  double weight = 0.0) {
    if (z.rows() != zdo.rows() || z.cols() != zdo.cols()) throw Error("vcci: pair shape mismatch");
    if (static_cast<std::size_t>(z.rows()) != neg.size()) throw Error("vcci: negative index count mismatch");
    VcciResult<S> r;
    const auto rows = z.rows();
    if (rows == 0) return r;
    const bool grad = weight != 0.0;
    QNetTape<S> tape;
    const auto out = qnet_forward_batch(q, zdo, grad ? &tape : nullptr);
    Mat<S> dmu, dlv;
    if (grad) {
        r.dz = Mat<S>::Zero(rows, z.cols());
        dmu = Mat<S>::Zero(rows, z.cols());
        dlv = Mat<S>::Zero(rows, z.cols());
    }
    const double w = grad ? weight / static_cast<double>(rows) : 0.0;
    double sum = 0.0;
    for (Eigen::Index i = 0; i < rows; ++i) {
        const Eigen::Index k = neg[static_cast<std::size_t>(i)];
        if (k < 0 || k >= rows) throw Error("vcci: negative index out of range");
        if (k == i) continue;  // identical terms cancel exactly
        sum += detail::loglik_row(z, i, out, i, w, grad ? &r.dz : nullptr, grad ? &dmu : nullptr, grad ? &dlv : nullptr);
        sum -= detail::loglik_row(z, k, out, i, -w, grad ? &r.dz : nullptr, grad ? &dmu : nullptr, grad ? &dlv : nullptr);
    }
    r.value = sum / static_cast<double>(rows);
    if (grad) r.dzdo = qnet_backward(q, tape, dmu, dlv, nullptr);
    return r;
}

/// I_vCCI estimate over N positive pairs (rows of z / zdo) with negatives
/// sampled uniformly from the batch. N = 1 returns 0.
template <typename S>
double vcci(const QNetParams<S>& q, const Mat<S>& z, const Mat<S>& zdo, std::mt19937_64& rng) {
    if (z.rows() <= 1) return 0.0;
    const auto neg = sample_negatives(static_cast<int>(z.rows()), static_cast<int>(z.rows()), rng);
    return vcci_with_negatives(q, z, zdo, neg).value;
}

} // namespace cci
