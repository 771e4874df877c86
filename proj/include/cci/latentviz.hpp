#pragma once

// Latent feature density maps: per-state frame collection, PCA to the unit
// circle and Gaussian KDE with Scott's bandwidth.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "common.hpp"
#include "network.hpp"
#include "records.hpp"

namespace cci {

using MatD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline std::vector<std::string> state_names(Task t) {
    if (t == Task::qrs) return {"non-QRS", "QRS"};
    return {kHeartStates.begin(), kHeartStates.end()};
}

/// Latent frames per grouping interval: 16 ms (1 frame) for QRS, 100 ms for heart sound.
inline int group_frames(Task t) {
    const double frame_ms = 1000.0 * default_frame_len(t) / target_fs(t);
    const double interval = t == Task::qrs ? 16.0 : 100.0;
    return static_cast<int>(std::lround(interval / frame_ms));
}

/// state index -> rows of latent vectors (n x d). Heart-sound groups are
/// averaged and keyed by their majority label (lowest state on ties).
template <typename S>
std::map<int, MatD> collect_state_frames(const Model<S>& m, const std::vector<Episode>& eps, Task task) {
    if (task != m.shape.task) throw Error("task mismatch between model and episodes");
    const int g = group_frames(task);
    const int C = task == Task::qrs ? 2 : 4;
    std::map<int, std::vector<Eigen::RowVectorXd>> acc;
    for (const auto& e : eps) {
        if (e.frame_labels.empty()) throw Error("unlabeled episode from " + e.source_id);
        const std::vector<S> x(e.signal.begin(), e.signal.end());
        const auto [z, p] = m.infer(x);
        const MatD zd = z.values.template cast<double>();
        if (static_cast<std::size_t>(zd.rows()) != e.frame_labels.size()) throw Error("episode labels do not match the frame grid");
        for (Eigen::Index t0 = 0; t0 + g <= zd.rows(); t0 += g) {
            std::vector<int> votes(static_cast<std::size_t>(C), 0);
            for (int k = 0; k < g; ++k) ++votes[static_cast<std::size_t>(e.frame_labels[static_cast<std::size_t>(t0 + k)])];
            const int st = static_cast<int>(std::max_element(votes.begin(), votes.end()) - votes.begin());
            acc[st].push_back(zd.middleRows(t0, g).colwise().mean());
        }
    }
    std::map<int, MatD> out;
    for (auto& [st, rows] : acc) {
        MatD M(static_cast<Eigen::Index>(rows.size()), rows.front().size());
        for (std::size_t i = 0; i < rows.size(); ++i) M.row(static_cast<Eigen::Index>(i)) = rows[i];
        out[st] = std::move(M);
    }
    return out;
}

struct Pca2 {
    Eigen::RowVectorXd mean;
    MatD components;  // d x 2
};

/// Top-2 principal directions; each is signed so its largest-magnitude loading is positive.
inline Pca2 fit_pca2(const MatD& X) {
    if (X.rows() < 3) throw Error("projection needs at least 3 vectors");
    if (X.cols() < 2) throw Error("projection needs vectors of dimension >= 2");
    Pca2 p;
    p.mean = X.colwise().mean();
    const MatD Xc = X.rowwise() - p.mean;
    const Eigen::MatrixXd cov = (Xc.transpose() * Xc) / static_cast<double>(X.rows() - 1);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    const auto d = X.cols();
    p.components.resize(d, 2);
    for (int k = 0; k < 2; ++k) {
        Eigen::VectorXd v = es.eigenvectors().col(d - 1 - k);
        Eigen::Index arg = 0;
        v.cwiseAbs().maxCoeff(&arg);
        if (v(arg) < 0) v = -v;
        p.components.col(k) = v;
    }
    return p;
}

struct UnitProjection {
    MatD points;  // n x 2, unit norm
    std::size_t dropped_zero = 0;
};

inline UnitProjection project_unit(const Pca2& p, const MatD& X) {
    const MatD Y = (X.rowwise() - p.mean) * p.components;
    UnitProjection u;
    std::vector<Eigen::Index> keep;
    for (Eigen::Index i = 0; i < Y.rows(); ++i) {
        if (Y.row(i).norm() > 1e-12 * std::max(1.0, X.row(i).norm()))
            keep.push_back(i);
        else
            ++u.dropped_zero;
    }
    u.points.resize(static_cast<Eigen::Index>(keep.size()), 2);
    for (std::size_t j = 0; j < keep.size(); ++j) u.points.row(static_cast<Eigen::Index>(j)) = Y.row(keep[j]).normalized();
    return u;
}

inline UnitProjection project_unit_2d(const MatD& X) { return project_unit(fit_pca2(X), X); }

// ---------------------------------------------------------------------------
// KDE
// ---------------------------------------------------------------------------

inline constexpr double kBandwidthFloor = 1e-3;

struct DensityMap {
    int resolution = 256;
    double extent = 1.2;  // grid spans [-extent, extent] on both axes
    double h[2] = {0.0, 0.0};
    std::vector<double> values;  // row-major, row = y index, col = x index

    double step() const { return 2.0 * extent / (resolution - 1); }
    double coord(int i) const { return -extent + step() * i; }
    double at(int iy, int ix) const { return values[static_cast<std::size_t>(iy) * resolution + ix]; }
    double mass() const {
        double s = 0.0;
        for (double v : values) s += v;
        return s * step() * step();
    }
};

/// Scott's rule in 2-D: h_j = n^(-1/6) * sigma_j (sample std), floored.
inline double scott_bandwidth(std::span<const double> v) {
    const auto n = static_cast<double>(v.size());
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= n;
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    const double sigma = std::sqrt(ss / (n - 1.0));
    const double h = std::pow(n, -1.0 / 6.0) * sigma;
    return h < kBandwidthFloor ? kBandwidthFloor : h;
}

inline DensityMap kde_scott(const MatD& pts, int resolution = 256, double extent = 1.2) {
    if (pts.rows() < 2) throw Error("KDE needs at least 2 points");
    if (pts.cols() != 2) throw Error("KDE expects 2-D points");
    if (resolution < 2) throw Error("KDE grid resolution must be >= 2");
    DensityMap dm;
    dm.resolution = resolution;
    dm.extent = extent;
    const Eigen::Index n = pts.rows();
    for (int j = 0; j < 2; ++j) {
        const Eigen::VectorXd col = pts.col(j);
        dm.h[j] = scott_bandwidth(std::span<const double>(col.data(), static_cast<std::size_t>(n)));
    }
    // The product kernel separates: density = Ky * Kx^T / n.
    MatD Ky(resolution, n), Kx(resolution, n);
    for (int g = 0; g < resolution; ++g) {
        const double c = dm.coord(g);
        for (Eigen::Index i = 0; i < n; ++i) {
            const double uy = (c - pts(i, 1)) / dm.h[1];
            const double ux = (c - pts(i, 0)) / dm.h[0];
            Ky(g, i) = std::exp(-0.5 * uy * uy);
            Kx(g, i) = std::exp(-0.5 * ux * ux);
        }
    }
    const double norm = 1.0 / (2.0 * std::numbers::pi * dm.h[0] * dm.h[1] * static_cast<double>(n));
    MatD D = (Ky * Kx.transpose()) * norm;
    dm.values.assign(D.data(), D.data() + D.size());
    return dm;
}

inline void write_density_csv(const std::filesystem::path& path, const DensityMap& dm) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw Error("cannot write " + path.string());
    os.precision(8);
    os << "# grid " << dm.resolution << 'x' << dm.resolution << " over [" << -dm.extent << ',' << dm.extent << "]^2, h=" << dm.h[0]
       << ',' << dm.h[1] << ", rows = y ascending\n";
    for (int iy = 0; iy < dm.resolution; ++iy) {
        for (int ix = 0; ix < dm.resolution; ++ix) os << (ix ? "," : "") << dm.at(iy, ix);
        os << '\n';
    }
}

namespace detail {

/// Maps density to a white-to-dark-blue ramp; y grows upward in the image.
inline void shade(const DensityMap& dm, double vmax, std::vector<std::uint8_t>& rgb, int stride, int x0) {
    for (int iy = 0; iy < dm.resolution; ++iy) {
        const int row = dm.resolution - 1 - iy;
        for (int ix = 0; ix < dm.resolution; ++ix) {
            const double a = vmax > 0 ? std::clamp(dm.at(iy, ix) / vmax, 0.0, 1.0) : 0.0;
            auto* px = &rgb[(static_cast<std::size_t>(row) * stride + x0 + ix) * 3];
            px[0] = static_cast<std::uint8_t>(255 * (1 - a) + 8 * a);
            px[1] = static_cast<std::uint8_t>(255 * (1 - a) + 48 * a);
            px[2] = static_cast<std::uint8_t>(255 * (1 - a) + 107 * a);
        }
    }
}

inline void write_ppm(const std::filesystem::path& path, int w, int h, const std::vector<std::uint8_t>& rgb) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw Error("cannot write " + path.string());
    os << "P6\n" << w << ' ' << h << "\n255\n";
    os.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
}

inline double vmax_of(const DensityMap& dm) { return *std::max_element(dm.values.begin(), dm.values.end()); }

} // namespace detail

inline void write_density_image(const std::filesystem::path& path, const DensityMap& dm) {
    std::vector<std::uint8_t> rgb(static_cast<std::size_t>(dm.resolution) * dm.resolution * 3);
    detail::shade(dm, detail::vmax_of(dm), rgb, dm.resolution, 0);
    detail::write_ppm(path, dm.resolution, dm.resolution, rgb);
}

/// All states side by side, each panel scaled to its own maximum, 8 px gutters.
inline void write_contact_sheet(const std::filesystem::path& path, const std::vector<DensityMap>& maps) {
    if (maps.empty()) throw Error("contact sheet needs at least one map");
    const int r = maps.front().resolution, gap = 8;
    const int w = static_cast<int>(maps.size()) * (r + gap) - gap;
    std::vector<std::uint8_t> rgb(static_cast<std::size_t>(w) * r * 3, 255);
    for (std::size_t k = 0; k < maps.size(); ++k) {
        if (maps[k].resolution != r) throw Error("contact sheet maps differ in resolution");
        detail::shade(maps[k], detail::vmax_of(maps[k]), rgb, w, static_cast<int>(k) * (r + gap));
    }
    detail::write_ppm(path, w, r, rgb);
}

} // namespace cci
