#pragma once

// Layer primitives with explicit forward tapes and backward passes.
// Activations are channel-major: rows = channels, columns = time.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <type_traits>
#include <vector>

#include <Eigen/Dense>

#include "common.hpp"

namespace cci::nn {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename S>
struct Linear {
    Mat<S> W;  // out x in (for conv: out x in*kernel)
    Mat<S> b;  // out x 1
};

inline constexpr double kInstanceNormEps = 1e-5;

// ---------------------------------------------------------------------------
// Dilated 1-D convolution, same padding, odd kernel.
// ---------------------------------------------------------------------------

template <typename S>
void im2col(const Mat<S>& x, int kernel, int dilation, Mat<S>& cols) {
    const auto cin = x.rows();
    const auto len = x.cols();
    cols.resize(cin * kernel, len);
    for (Eigen::Index c = 0; c < cin; ++c) {
        for (int k = 0; k < kernel; ++k) {
            const Eigen::Index off = static_cast<Eigen::Index>(k - kernel / 2) * dilation;
            auto row = cols.row(c * kernel + k);
            const Eigen::Index t0 = std::max<Eigen::Index>(0, -off);
            const Eigen::Index t1 = std::min<Eigen::Index>(len, len - off);
            if (t1 <= t0) {
                row.setZero();
                continue;
            }
            if (t0 > 0) row.head(t0).setZero();
            if (t1 < len) row.tail(len - t1).setZero();
            row.segment(t0, t1 - t0) = x.row(c).segment(t0 + off, t1 - t0);
        }
    }
}

template <typename S>
void col2im_add(const Mat<S>& dcols, int kernel, int dilation, Mat<S>& dx) {
    const auto cin = dx.rows();
    const auto len = dx.cols();
    for (Eigen::Index c = 0; c < cin; ++c) {
        for (int k = 0; k < kernel; ++k) {
            const Eigen::Index off = static_cast<Eigen::Index>(k - kernel / 2) * dilation;
            const Eigen::Index t0 = std::max<Eigen::Index>(0, -off);
            const Eigen::Index t1 = std::min<Eigen::Index>(len, len - off);
            if (t1 <= t0) continue;
            dx.row(c).segment(t0 + off, t1 - t0) += dcols.row(c * kernel + k).segment(t0, t1 - t0);
        }
    }
}

template <typename S>
struct ConvTape {
    Mat<S> cols;
    Mat<S> out;  // post-activation
};

template <typename S>
Mat<S> conv_forward(const Linear<S>& p, const Mat<S>& x, int kernel, int dilation, bool relu, std::type_identity_t<ConvTape<S>>* tape) {
    Mat<S> local_cols;
    Mat<S>& cols = tape ? tape->cols : local_cols;
    if (kernel == 1) {
        cols = x;
    } else {
        im2col(x, kernel, dilation, cols);
    }
    Mat<S> out(p.W.rows(), x.cols());
    out.noalias() = p.W * cols;
    out.colwise() += p.b.col(0);
    if (relu) out = out.cwiseMax(S(0));
    if (tape) tape->out = out;
    return out;
}

/// Accumulates parameter gradients into `g`; returns d(input) when `want_dx`.
template <typename S>
Mat<S> conv_backward(const Linear<S>& p, const ConvTape<S>& tape, Mat<S> dout, int kernel, int dilation, bool relu,
                     Linear<S>& g, bool want_dx) {
    if (relu) dout = (tape.out.array() > S(0)).select(dout, S(0));
    g.W.noalias() += dout * tape.cols.transpose();
    g.b.col(0) += dout.rowwise().sum();
    if (!want_dx) return {};
    Mat<S> dcols(p.W.cols(), dout.cols());
    dcols.noalias() = p.W.transpose() * dout;
    if (kernel == 1) return dcols;
    Mat<S> dx = Mat<S>::Zero(p.W.cols() / kernel, dout.cols());
    col2im_add(dcols, kernel, dilation, dx);
    return dx;
}

// ---------------------------------------------------------------------------
// Instance normalization (per channel over time, no affine) and MaxPool1D(2).
// ---------------------------------------------------------------------------

template <typename S>
struct NormTape {
    Mat<S> y;
    Eigen::Matrix<S, Eigen::Dynamic, 1> inv_std;
};

template <typename S>
Mat<S> instance_norm_forward(const Mat<S>& x, std::type_identity_t<NormTape<S>>* tape) {
    Mat<S> y(x.rows(), x.cols());
    Eigen::Matrix<S, Eigen::Dynamic, 1> inv(x.rows());
    const S n = static_cast<S>(x.cols());
    for (Eigen::Index c = 0; c < x.rows(); ++c) {
        const S m = x.row(c).sum() / n;
        const S v = (x.row(c).array() - m).square().sum() / n;
        inv(c) = S(1) / std::sqrt(v + static_cast<S>(kInstanceNormEps));
        y.row(c) = (x.row(c).array() - m) * inv(c);
    }
    if (tape) {
        tape->y = y;
        tape->inv_std = inv;
    }
    return y;
}

template <typename S>
Mat<S> instance_norm_backward(const NormTape<S>& tape, const Mat<S>& dy) {
    Mat<S> dx(dy.rows(), dy.cols());
    const S n = static_cast<S>(dy.cols());
    for (Eigen::Index c = 0; c < dy.rows(); ++c) {
        const S mdy = dy.row(c).sum() / n;
        const S mdyy = dy.row(c).cwiseProduct(tape.y.row(c)).sum() / n;
        dx.row(c) = tape.inv_std(c) * (dy.row(c).array() - mdy - tape.y.row(c).array() * mdyy);
    }
    return dx;
}

struct PoolTape {
    std::vector<std::uint8_t> pick;  // 0 = left, 1 = right, per output element
    Eigen::Index in_cols = 0;
};

template <typename S>
Mat<S> maxpool2_forward(const Mat<S>& x, PoolTape* tape) {
    if (x.cols() % 2 != 0) throw Error("MaxPool1D(2) needs an even temporal length, got " + std::to_string(x.cols()));
    const Eigen::Index oc = x.cols() / 2;
    Mat<S> y(x.rows(), oc);
    if (tape) {
        tape->pick.resize(static_cast<std::size_t>(x.rows() * oc));
        tape->in_cols = x.cols();
    }
    for (Eigen::Index c = 0; c < x.rows(); ++c) {
        const S* in = x.row(c).data();
        S* out = y.row(c).data();
        for (Eigen::Index t = 0; t < oc; ++t) {
            const bool right = in[2 * t + 1] > in[2 * t];
            out[t] = right ? in[2 * t + 1] : in[2 * t];
            if (tape) tape->pick[static_cast<std::size_t>(c * oc + t)] = right ? 1 : 0;
        }
    }
    return y;
}

template <typename S>
Mat<S> maxpool2_backward(const PoolTape& tape, const Mat<S>& dy) {
    Mat<S> dx = Mat<S>::Zero(dy.rows(), tape.in_cols);
    const Eigen::Index oc = dy.cols();
    for (Eigen::Index c = 0; c < dy.rows(); ++c)
        for (Eigen::Index t = 0; t < oc; ++t)
            dx(c, 2 * t + tape.pick[static_cast<std::size_t>(c * oc + t)]) = dy(c, t);
    return dx;
}

// ---------------------------------------------------------------------------
// Initialization helpers.
// ---------------------------------------------------------------------------

/// Uniform(-a, a) with a = gain * sqrt(3 / fan_in); gain sqrt(2) gives He init.
template <typename S>
void init_uniform(Mat<S>& w, Eigen::Index fan_in, double gain, std::mt19937_64& rng) {
    const double a = gain * std::sqrt(3.0 / static_cast<double>(std::max<Eigen::Index>(1, fan_in)));
    std::uniform_real_distribution<double> u(-a, a);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<S>(u(rng));
}

template <typename S>
Linear<S> make_linear(Eigen::Index out, Eigen::Index in, double gain, std::mt19937_64& rng) {
    Linear<S> l;
    l.W.resize(out, in);
    init_uniform(l.W, in, gain, rng);
    l.b = Mat<S>::Zero(out, 1);
    return l;
}

template <typename S>
Linear<S> zeros_like(const Linear<S>& l) {
    return {Mat<S>::Zero(l.W.rows(), l.W.cols()), Mat<S>::Zero(l.b.rows(), 1)};
}

} // namespace cci::nn
