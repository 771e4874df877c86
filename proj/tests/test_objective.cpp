#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "cci/adam.hpp"
#include "cci/objective.hpp"

using namespace cci;

TEST(TotalLoss, Arithmetic) {
    const auto l = total_loss(0.7, 0.2, 0.9, 0.1, 1.0);
    EXPECT_NEAR(l.total, -0.18, 1e-12);
    EXPECT_EQ(total_loss(0.5, 3.0, 4.0, 0.0, 0.0).total, 0.5);
    EXPECT_THROW(total_loss(0, 0, 0, -1, 0), Error);
    EXPECT_EQ(kDefaultLambda1, 0.1);
    EXPECT_EQ(kDefaultLambda2, 1.0);
    // affine in each component
    const auto a = total_loss(1, 2, 3), b = total_loss(1, 3, 3), c = total_loss(1, 2, 4);
    EXPECT_NEAR(b.total - a.total, 0.1, 1e-12);
    EXPECT_NEAR(c.total - a.total, -1.0, 1e-12);
}

TEST(SegLoss, Values) {
    Mat<double> p(2, 1);
    p << 0.9, 0.2;
    const std::vector<int> y = {1, 0};
    EXPECT_NEAR(seg_loss(p, y), -(std::log(0.9) + std::log(0.8)) / 2, 1e-12);
    Mat<double> one_hot(2, 4);
    one_hot << 1, 0, 0, 0, 0, 0, 1, 0;
    EXPECT_NEAR(seg_loss(one_hot, std::vector<int>{0, 2}), 0.0, 1e-12);
    Mat<double> bad(1, 1);
    bad << 1.5;
    EXPECT_THROW(seg_loss(bad, std::vector<int>{1}), Error);
}

TEST(SegLoss, LogitGradientMatchesFiniteDifferences) {
    for (Task task : {Task::qrs, Task::heartsound}) {
        const int C = num_classes(task);
        Mat<double> logits = Mat<double>::Random(6, C) * 3;
        std::vector<int> y = {0, 1, 0, 1, 1, 0};
        if (C == 4) y = {0, 3, 2, 1, 2, 0};
        Mat<double> g;
        seg_loss_from_logits(logits, y, task, 1.0, &g);
        const double h = 1e-6;
        for (Eigen::Index i = 0; i < logits.size(); ++i) {
            Mat<double> a = logits, b = logits;
            a.data()[i] += h;
            b.data()[i] -= h;
            const double num = (seg_loss_from_logits<double>(a, y, task, 1.0, nullptr) -
                                seg_loss_from_logits<double>(b, y, task, 1.0, nullptr)) / (2 * h);
            EXPECT_NEAR(g.data()[i], num, 1e-4 * std::max(1.0, std::abs(num)));
        }
        // Summed from-logits loss agrees with the probability form.
        const auto probs = logits_to_probs(logits, task);
        EXPECT_NEAR(seg_loss_from_logits<double>(logits, y, task, 1.0, nullptr) / 6.0, seg_loss(probs, y), 1e-9);
    }
}

TEST(Cosine, Basics) {
    EXPECT_NEAR(cosine_similarity(std::vector<double>{1, 0}, std::vector<double>{1, 0}), 1.0, 1e-15);
    EXPECT_NEAR(cosine_similarity(std::vector<double>{1, 0}, std::vector<double>{0, 1}), 0.0, 1e-15);
    EXPECT_NEAR(cosine_similarity(std::vector<double>{1, 2}, std::vector<double>{-1, -2}), -1.0, 1e-15);
    EXPECT_NEAR(cosine_similarity(std::vector<double>{3, 1, 2}, std::vector<double>{1, 5, 2}),
                cosine_similarity(std::vector<double>{9, 3, 6}, std::vector<double>{1, 5, 2}), 1e-14);
    try {
        cosine_similarity(std::vector<double>{0, 0}, std::vector<double>{1, 0});
        FAIL();
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("undefined similarity: zero vector"), std::string::npos);
    }
}

TEST(Gaussian, LogLik) {
    EXPECT_NEAR(gaussian_loglik(std::vector<double>{0.3}, std::vector<double>{0.3}, std::vector<double>{1.0}),
                -0.5 * std::log(2 * std::numbers::pi), 1e-12);
    EXPECT_NEAR(-0.5 * std::log(2 * std::numbers::pi), -0.91894, 1e-5);
    EXPECT_THROW(gaussian_loglik(std::vector<double>{0}, std::vector<double>{0}, std::vector<double>{0}), Error);
    const double a = gaussian_loglik(std::vector<double>{0.1}, std::vector<double>{0}, std::vector<double>{1.0});
    const double b = gaussian_loglik(std::vector<double>{0.2}, std::vector<double>{0}, std::vector<double>{1.0});
    EXPECT_GT(a, b);
}

TEST(QnetLL, MeanSemanticsAndGradient) {
    std::mt19937_64 rng(1);
    auto q = init_qnet<double>(3, 4, rng);
    Mat<double> z = Mat<double>::Random(1, 3), zdo = Mat<double>::Random(1, 3);
    Mat<double> z2(2, 3), zdo2(2, 3);
    z2 << z, z;
    zdo2 << zdo, zdo;
    EXPECT_NEAR(qnet_ll(q, z, zdo), qnet_ll(q, z2, zdo2), 1e-12);

    Mat<double> zz = Mat<double>::Random(5, 3), dd = Mat<double>::Random(5, 3);
    // Zero biases put all-dead rows exactly on the ReLU kink; move them off it.
    q.l1.b = 0.1 * Mat<double>::Random(4, 1);
    q.l2.b = 0.1 * Mat<double>::Random(4, 1);
    auto g = q.zeros_like();
    qnet_ll(q, zz, dd, &g);
    std::vector<Mat<double>*> P, G;
    q.for_each_tensor([&](const std::string&, Mat<double>& t) { P.push_back(&t); });
    g.for_each_tensor([&](const std::string&, Mat<double>& t) { G.push_back(&t); });
    const double h = 1e-6;
    for (std::size_t k = 0; k < P.size(); ++k)
        for (Eigen::Index i = 0; i < P[k]->size(); ++i) {
            double& v = P[k]->data()[i];
            const double o = v;
            v = o + h;
            const double a = qnet_ll(q, zz, dd);
            v = o - h;
            const double b = qnet_ll(q, zz, dd);
            v = o;
            // accumulated gradient is of the negated objective
            EXPECT_NEAR(G[k]->data()[i], -(a - b) / (2 * h), 1e-6) << "tensor " << k << " entry " << i;
        }
}

TEST(Vcci, SingleRowAndSelfPairsAreZero) {
    std::mt19937_64 rng(2);
    auto q = init_qnet<double>(2, 4, rng);
    Mat<double> z = Mat<double>::Random(1, 2), zdo = Mat<double>::Random(1, 2);
    EXPECT_EQ(vcci(q, z, zdo, rng), 0.0);
    Mat<double> z3 = Mat<double>::Random(3, 2), d3 = Mat<double>::Random(3, 2);
    const std::vector<int> self = {0, 1, 2};
    EXPECT_EQ(vcci_with_negatives(q, z3, d3, self).value, 0.0);
}

TEST(Vcci, ConstantQHasZeroMean) {
    // q ignoring its input: zero out the input layer so mu and var are constant.
    std::mt19937_64 rng(3);
    auto q = init_qnet<double>(2, 4, rng);
    q.l1.W.setZero();
    std::normal_distribution<double> nd;
    double acc = 0;
    const int reps = 400;
    for (int r = 0; r < reps; ++r) {
        Mat<double> z(64, 2), zdo(64, 2);
        for (Eigen::Index i = 0; i < z.size(); ++i) {
            z.data()[i] = nd(rng);
            zdo.data()[i] = nd(rng);
        }
        acc += vcci(q, z, zdo, rng);
    }
    EXPECT_NEAR(acc / reps, 0.0, 0.02);
}

TEST(Vcci, NegativeSamplingStaysInGroup) {
    std::mt19937_64 rng(4);
    const auto neg = sample_negatives(12, 4, rng);
    for (int r = 0; r < 12; ++r) EXPECT_EQ(neg[static_cast<std::size_t>(r)] / 4, r / 4);
    EXPECT_THROW(sample_negatives(10, 4, rng), Error);
}

TEST(Vcci, InputGradientsMatchFiniteDifferences) {
    std::mt19937_64 rng(5);
    auto q = init_qnet<double>(3, 6, rng);
    Mat<double> z = Mat<double>::Random(4, 3), zdo = Mat<double>::Random(4, 3);
    const std::vector<int> neg = {2, 0, 3, 3};
    const auto r = vcci_with_negatives(q, z, zdo, neg, 1.0);
    const double h = 1e-6;
    for (Eigen::Index i = 0; i < z.size(); ++i) {
        Mat<double> a = z, b = z;
        a.data()[i] += h;
        b.data()[i] -= h;
        const double num = (vcci_with_negatives(q, a, zdo, neg).value - vcci_with_negatives(q, b, zdo, neg).value) / (2 * h);
        EXPECT_NEAR(r.dz.data()[i], num, 1e-6);
        Mat<double> c = zdo, d = zdo;
        c.data()[i] += h;
        d.data()[i] -= h;
        const double num2 = (vcci_with_negatives(q, z, c, neg).value - vcci_with_negatives(q, z, d, neg).value) / (2 * h);
        EXPECT_NEAR(r.dzdo.data()[i], num2, 1e-6);
    }
}

TEST(Vcci, TrueConditionalUpperBoundsMi) {
    // For 1-D Gaussian pairs with correlation rho, the exact conditional is
    // N(rho * x, 1 - rho^2). Build q to realize it: identity-like path into mu,
    // constant logvar.
    const double rho = 0.8, mi = -0.5 * std::log(1 - rho * rho);
    std::mt19937_64 rng(6);
    auto q = init_qnet<double>(1, 1, rng);
    q.l1.W.setConstant(1.0);
    q.l1.b.setConstant(10.0);  // keep ReLUs in their linear region
    q.l2.W.setConstant(1.0);
    q.l2.b.setZero();
    q.mu.W.setConstant(rho);
    q.mu.b.setConstant(-rho * 10.0);
    q.logvar.W.setZero();
    q.logvar.b.setConstant(std::log(1 - rho * rho));
    std::normal_distribution<double> nd;
    double acc = 0;
    const int reps = 30;
    for (int r = 0; r < reps; ++r) {
        Mat<double> z(2048, 1), zdo(2048, 1);
        for (Eigen::Index i = 0; i < 2048; ++i) {
            zdo(i, 0) = nd(rng);
            z(i, 0) = rho * zdo(i, 0) + std::sqrt(1 - rho * rho) * nd(rng);
        }
        acc += vcci(q, z, zdo, rng);
    }
    EXPECT_GE(acc / reps, mi - 0.05);
}

TEST(Adam, MinimizesQuadratic) {
    Mat<double> x = Mat<double>::Constant(1, 2, 5.0), g(1, 2);
    Adam<double> opt(0.1);
    for (int i = 0; i < 500; ++i) {
        g = 2 * x;
        opt.step({&x}, {&g});
    }
    EXPECT_LT(x.norm(), 1e-2);
    EXPECT_EQ(opt.steps(), 500);
}
