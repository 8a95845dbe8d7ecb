#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "pdeconv/simulate.hpp"
#include "pdeconv/solvers.hpp"
#include "test_support.hpp"

using namespace pdeconv;
namespace pt = pdeconv::testing;

namespace {

ConvKernel three_tap() { return ConvKernel(1, 0, {0.25, 0.5, 0.25}, true); }

ForwardModel spline_model_16() { return ForwardModel(make_inverse_quadratic_kernel_2d(), SplineDictionary(16, 16, 2)); }

/// Central difference of the MAP objective along coordinate i.  A is linear,
/// so A(c +- h e_i) = Ac +- h A e_i and each pixel's change is formed directly,
/// without subtracting two large objective values.
double fd_partial(const Image& g, const ForwardModel& m, const CoeffStack& c, double lambda, std::size_t i,
                  double h) {
    std::vector<double> e(c.size(), 0.0);
    e[i] = 1.0;
    const Image col = m.forward(CoeffStack(c.layout(), e));
    const Image ac = m.forward(c);
    double diff = lambda * (std::abs(c[i] + h) - std::abs(c[i] - h));
    for (std::size_t p = 0; p < g.size(); ++p) {
        const double r = h * col[p] / ac[p];
        diff += 2.0 * h * col[p] - g[p] * (std::log1p(r) - std::log1p(-r));
    }
    return diff / (2.0 * h);
}

}  // namespace

// --------------------------------------------------------------- objectives

TEST(Objective, Examples) {
    // g = 0: E = <1, Hf>.
    const Image f(3, 1, std::vector<double>{1, 2, 3});
    EXPECT_DOUBLE_EQ(ml_objective(Image(3, 1), three_tap(), f), 6.0);
    // Hf = 1 everywhere: E = 3 - sum(g) * log 1 = 3.
    EXPECT_DOUBLE_EQ(ml_objective(Image(3, 1, std::vector<double>{1, 2, 3}), three_tap(), Image::ones(3, 1)), 3.0);
    // g > 0 against a zero prediction is infinite.
    EXPECT_TRUE(std::isinf(ml_objective(Image::ones(3, 1), three_tap(), Image(3, 1))));
}

TEST(Objective, L1FormMatchesForNormalizedKernel) {
    Rng rng(1);
    const ConvKernel h = make_inverse_quadratic_kernel_2d();
    for (int t = 0; t < 10; ++t) {
        const Image f = pt::random_image(rng, 16, 16, 0.1, 5.0);
        const Image g = poisson_sample(conv_forward(h, f), rng);
        const double a = ml_objective(g, h, f), b = ml_objective_l1(g, h, f);
        EXPECT_NEAR(a, b, 1e-10 * std::abs(a));
    }
}

TEST(Objective, MapFormsAgreeAndReduceToMl) {
    Rng rng(2);
    const ForwardModel m = spline_model_16();
    for (int t = 0; t < 10; ++t) {
        const CoeffStack c = pt::random_coeffs(rng, m.layout(), 0.0, 2.0);
        const Image g = poisson_sample(m.forward(c), rng);
        for (double lambda : {0.0, 0.1, 2.5}) {
            const double a = map_objective(g, m, c, lambda), b = map_objective_weighted(g, m, c, lambda);
            EXPECT_NEAR(a, b, 1e-10 * std::abs(a));
        }
        EXPECT_NEAR(map_objective(g, m, c, 0.0), ml_objective(g, m.kernel(), m.synthesize(c)),
                    1e-12 * std::abs(map_objective(g, m, c, 0.0)));
    }
}

TEST(Objective, MapIsConvexAlongSegments) {
    Rng rng(3);
    const ForwardModel m = spline_model_16();
    const Image g = poisson_sample(m.forward(pt::random_coeffs(rng, m.layout(), 0.0, 2.0)), rng);
    for (int t = 0; t < 20; ++t) {
        const CoeffStack a = pt::random_coeffs(rng, m.layout(), 0.05, 2.0);
        const CoeffStack b = pt::random_coeffs(rng, m.layout(), 0.05, 2.0);
        const double s = rng.uniform();
        const CoeffStack mid = add(scalar_mul(a, s), scalar_mul(b, 1.0 - s));
        const double ea = map_objective(g, m, a, 0.2), eb = map_objective(g, m, b, 0.2);
        EXPECT_LE(map_objective(g, m, mid, 0.2), s * ea + (1.0 - s) * eb + 1e-9 * std::abs(ea));
    }
}

// ------------------------------------------------------------------ gradient

TEST(Gradient, MatchesCentralDifferences) {
    Rng rng(4);
    const ForwardModel m = spline_model_16();
    const Image g = poisson_sample(m.forward(pt::random_coeffs(rng, m.layout(), 0.1, 5.0)), rng);
    for (int t = 0; t < 3; ++t) {
        const CoeffStack c = pt::random_coeffs(rng, m.layout(), 0.1, 5.0);
        const auto grad = gradient_map(g, m, c, 0.3);
        for (std::size_t i = 0; i < c.size(); i += 7) {
            const double fd = fd_partial(g, m, c, 0.3, i, 1e-6 * std::max(1.0, c[i]));
            EXPECT_LT(std::abs(fd - grad[i]), 1e-5 * std::abs(grad[i])) << "coordinate " << i;
        }
    }
}

TEST(Gradient, VanishesOnExactData) {
    Rng rng(5);
    const ForwardModel m = spline_model_16();
    const CoeffStack c = pt::random_coeffs(rng, m.layout(), 0.1, 3.0);
    const Image g = m.forward(c);
    const auto grad = gradient_map(g, m, c, 0.0);
    EXPECT_LT(pt::max_abs(grad), 1e-12 * pt::max_abs(m.v().values()));
}

TEST(Gradient, SignOfZeroIsZero) {
    const ForwardModel m(ConvKernel::delta(), HaarDictionary(4, {0}));
    const Image g(4, 1, std::vector<double>{1, 1, 1, 1});
    const CoeffStack c(m.layout(), std::vector<double>{1, 0, 1, 1});
    const auto grad = gradient_map(g, m, c, 0.5);
    // v = 1, A*(g/Ac) = 1 where c = 1 and 1e12 where Ac = 0.
    EXPECT_DOUBLE_EQ(grad[0], 0.5);
    EXPECT_DOUBLE_EQ(grad[1], 1.0 - 1.0 / kDefaultEpsDiv);
}

TEST(Gradient, KktHoldsAtSrlFixedPoint) {
    Rng rng(6);
    const ForwardModel m(make_gaussian_kernel_1d(0.5 * std::numbers::pi), HaarDictionary(16, {0, 1}));
    const Image g = poisson_sample(m.forward(pt::random_coeffs(rng, m.layout(), 0.0, 20.0)), rng);
    SolverConfig cfg;
    cfg.lambda = 0.5;
    cfg.max_iters = 20000;
    cfg.epsilon_stop = 1e-13;
    const SolverResult r = run_srl(g, m, cfg);
    const CoeffStack& c = *r.coefficients;
    const auto grad = gradient_map(g, m, c, cfg.lambda);
    double vmax = 0.0;
    for (double x : m.v().values()) vmax = std::max(vmax, x + cfg.lambda);
    std::size_t active = 0;
    for (std::size_t i = 0; i < c.size(); ++i) {
        if (c[i] > 1e-3) {
            // Stationarity on the support.
            ++active;
            EXPECT_LE(std::abs(grad[i]), 1e-6 * vmax) << i;
        } else {
            // Collapsed coefficients may only have a nonnegative gradient.
            EXPECT_GT(grad[i], -1e-6 * vmax) << i;
        }
    }
    EXPECT_GT(active, 0u);
}

// ---------------------------------------------------------------------- RL

TEST(RichardsonLucy, StepExample) {
    // Delta kernel: one step maps any positive f onto g.
    const Image g(3, 1, std::vector<double>{4, 0, 2});
    const Image f(3, 1, std::vector<double>{1, 1, 1});
    EXPECT_EQ(rl_step(g, ConvKernel::delta(), f).vector(), g.vector());
}

TEST(RichardsonLucy, InvariantsOnRandomInstances) {
    Rng rng(7);
    for (int inst = 0; inst < 10; ++inst) {
        const ConvKernel h(2, 2, pt::random_values(rng, 25, 0.0, 1.0), false);
        const ConvKernel hn = ConvKernel::from_image(h.as_image(), true);
        const Image g = poisson_sample(conv_forward(hn, pt::random_image(rng, 16, 16, 0.0, 20.0)), rng);
        double mass = 0.0;
        for (double x : g.values()) mass += x;
        Image f = detail::flat_start(g);
        double prev = ml_objective(g, hn, f);
        for (int t = 0; t < 100; ++t) {
            f = rl_step(g, hn, f);
            double s = 0.0;
            for (double x : f.values()) {
                EXPECT_GE(x, 0.0);
                s += x;
            }
            EXPECT_NEAR(s, mass, 1e-8 * mass);
            const double e = ml_objective(g, hn, f);
            EXPECT_LE(e, prev + 1e-12 * std::abs(prev));
            prev = e;
        }
    }
}

TEST(RichardsonLucy, ConvergesToGridSearchMinimum) {
    // Three-pixel circular problem; the likelihood minimum is located by a
    // coarse-to-fine exhaustive grid search.
    const ConvKernel h = three_tap();
    const Image g(3, 1, std::vector<double>{4, 3, 3.5});
    auto energy = [&](double a, double b, double c) {
        const double y[3] = {0.5 * a + 0.25 * (c + b), 0.5 * b + 0.25 * (a + c), 0.5 * c + 0.25 * (b + a)};
        double e = 0.0;
        for (int i = 0; i < 3; ++i) e += y[i] - g[static_cast<std::size_t>(i)] * std::log(y[i]);
        return e;
    };
    double best[3] = {6, 6, 6}, span = 6.0;
    for (int round = 0; round < 8; ++round) {
        double cand[3] = {best[0], best[1], best[2]}, ebest = energy(best[0], best[1], best[2]);
        for (int i = -20; i <= 20; ++i)
            for (int j = -20; j <= 20; ++j)
                for (int k = -20; k <= 20; ++k) {
                    const double a = best[0] + span * i / 20.0, b = best[1] + span * j / 20.0, c = best[2] + span * k / 20.0;
                    if (a < 0 || b < 0 || c < 0) continue;
                    const double e = energy(a, b, c);
                    if (e < ebest) {
                        ebest = e;
                        cand[0] = a, cand[1] = b, cand[2] = c;
                    }
                }
        std::copy(cand, cand + 3, best);
        span /= 8.0;
    }
    SolverConfig cfg;
    cfg.max_iters = 20000;
    cfg.epsilon_stop = 1e-14;
    const SolverResult r = run_rl(g, h, cfg);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(r.estimate[i], best[i], 1e-5);
}

TEST(RichardsonLucy, ZerosStayZero) {
    const Image g(4, 1, std::vector<double>{1, 2, 3, 4});
    Image f(4, 1, std::vector<double>{1, 0, 2, 1});
    for (int t = 0; t < 20; ++t) f = rl_step(g, three_tap(), f);
    EXPECT_EQ(f[1], 0.0);
}

// --------------------------------------------------------------------- SRL

TEST(SparseRL, TwoCoefficientHandCalculation) {
    // Identity dictionary, delta kernel: v = 1, c+ = c * (g / c) / (1 + lambda) = g / (1 + lambda).
    const ForwardModel m(ConvKernel::delta(), HaarDictionary(2, {0}));
    const Image g(2, 1, std::vector<double>{3, 1});
    const CoeffStack c1 = srl_step(g, m, CoeffStack(m.layout(), 1.0), 1.0);
    EXPECT_DOUBLE_EQ(c1[0], 1.5);
    EXPECT_DOUBLE_EQ(c1[1], 0.5);
    const CoeffStack c2 = srl_step(g, m, c1, 1.0);
    EXPECT_DOUBLE_EQ(c2[0], 1.5);
    EXPECT_DOUBLE_EQ(c2[1], 0.5);
}

TEST(SparseRL, ReducesToRlWithIdentityDictionary) {
    Rng rng(8);
    for (const ConvKernel& h : {ConvKernel::delta(), make_gaussian_kernel_1d(0.3 * std::numbers::pi)}) {
        const ForwardModel m(h, HaarDictionary(32, {0}));
        const Image g = poisson_sample(pt::random_image(rng, 32, 1, 0.0, 30.0), rng);
        Image f = pt::random_image(rng, 32, 1, 0.5, 2.0);
        CoeffStack c(m.layout(), f.vector());
        for (int t = 0; t < 20; ++t) {
            f = rl_step(g, h, f);
            c = srl_step(g, m, c, 0.0);
            EXPECT_LT(pt::max_abs_diff(f.values(), c.values()), 1e-12 * pt::max_abs(f.values()));
        }
    }
}

TEST(SparseRL, ZeroCoefficientsStayExactlyZero) {
    Rng rng(9);
    const ForwardModel m = spline_model_16();
    const Image g = poisson_sample(m.forward(pt::random_coeffs(rng, m.layout(), 0.0, 3.0)), rng);
    std::vector<double> c0(layout_size(m.layout()), 1.0);
    for (std::size_t i = 0; i < c0.size(); i += 5) c0[i] = 0.0;
    SolverConfig cfg;
    cfg.lambda = 0.1;
    cfg.max_iters = 50;
    cfg.epsilon_stop = 1e-15;
    const SolverResult r = run_srl(g, m, CoeffStack(m.layout(), c0), cfg);
    for (std::size_t i = 0; i < c0.size(); i += 5) EXPECT_EQ((*r.coefficients)[i], 0.0);
}

TEST(SparseRL, ObjectiveDecreases) {
    Rng rng(10);
    const ForwardModel m = spline_model_16();
    const Image g = poisson_sample(m.forward(pt::random_coeffs(rng, m.layout(), 0.0, 3.0)), rng);
    SolverConfig cfg;
    cfg.lambda = 0.2;
    cfg.max_iters = 100;
    cfg.epsilon_stop = 1e-15;
    const SolverResult r = run_srl(g, m, cfg);
    for (std::size_t t = 1; t < r.trace.records.size(); ++t) {
        const double prev = r.trace.records[t - 1].objective;
        EXPECT_LE(r.trace.records[t].objective, prev + 1e-12 * std::abs(prev));
    }
}

// -------------------------------------------------------------------- RLTV

namespace {

/// Circular forward-difference matrices on an R x C grid.
std::pair<std::vector<double>, std::vector<double>> difference_matrices(std::size_t rows, std::size_t cols) {
    const std::size_t n = rows * cols;
    std::vector<double> dr(n * n, 0.0), dc(n * n, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) {
            const std::size_t p = r * cols + c;
            dr[p * n + p] -= 1.0;
            dr[p * n + ((r + 1) % rows) * cols + c] += 1.0;
            dc[p * n + p] -= 1.0;
            dc[p * n + r * cols + (c + 1) % cols] += 1.0;
        }
    return {dr, dc};
}

}  // namespace

TEST(TotalVariation, CurvatureMatchesDenseStencil) {
    Rng rng(11);
    const Image f = pt::random_image(rng, 8, 8, 0.0, 3.0);
    const auto [dr, dc] = difference_matrices(8, 8);
    const auto gx = pt::matvec(dr, 64, f.vector()), gy = pt::matvec(dc, 64, f.vector());
    std::vector<double> px(64), py(64);
    for (std::size_t i = 0; i < 64; ++i) {
        const double mag = std::max(std::hypot(gx[i], gy[i]), 1e-8);
        px[i] = gx[i] / mag;
        py[i] = gy[i] / mag;
    }
    // div = -(Dr^T px + Dc^T py), the negative adjoint of the gradient.
    const auto a = pt::matvec_t(dr, 64, px), b = pt::matvec_t(dc, 64, py);
    std::vector<double> want(64);
    for (std::size_t i = 0; i < 64; ++i) want[i] = -(a[i] + b[i]);
    EXPECT_LT(pt::max_abs_diff(tv_curvature(f, 1e-8), want), 1e-13);
}

TEST(TotalVariation, CurvatureIsMinusTvGradient) {
    Rng rng(12);
    const Image f = pt::random_image(rng, 8, 8, 0.0, 3.0);
    const auto curv = tv_curvature(f, 1e-8);
    for (std::size_t i = 0; i < 64; i += 3) {
        std::vector<double> up = f.vector(), dn = f.vector();
        up[i] += 1e-6;
        dn[i] -= 1e-6;
        const double fd = (total_variation(Image(8, 8, up)) - total_variation(Image(8, 8, dn))) / 2e-6;
        EXPECT_NEAR(fd, -curv[i], 1e-6);
    }
}

TEST(RlTv, ZeroWeightEqualsRlBitwise) {
    Rng rng(13);
    const ConvKernel h = make_inverse_quadratic_kernel_2d();
    const Image g = poisson_sample(pt::random_image(rng, 16, 16, 0.0, 50.0), rng);
    Image a = pt::random_image(rng, 16, 16, 0.5, 3.0), b = a;
    for (int t = 0; t < 10; ++t) {
        a = rl_step(g, h, a);
        b = rltv_step(g, h, b, 0.0);
        EXPECT_EQ(a.vector(), b.vector());
    }
}

TEST(RlTv, ConstantImageHasNoCurvature) {
    const ConvKernel h = make_inverse_quadratic_kernel_2d();
    Rng rng(14);
    const Image g = poisson_sample(Image(16, 16, 10.0), rng);
    const Image f(16, 16, 3.0);
    EXPECT_EQ(rl_step(g, h, f).vector(), rltv_step(g, h, f, 0.5).vector());
}

TEST(RlTv, DenominatorFloorKeepsUpdateFinite) {
    Image f(16, 16, 1.0);
    std::vector<double> v = f.vector();
    v[5 * 16 + 5] = 100.0;
    f = Image(16, 16, v);
    const Image g(16, 16, 1.0);
    const Image out = rltv_step(g, make_inverse_quadratic_kernel_2d(), f, 100.0);
    for (double x : out.values()) {
        EXPECT_TRUE(std::isfinite(x));
        EXPECT_GE(x, 0.0);
    }
}

// ------------------------------------------------------------------ driver

TEST(Driver, ConvergesAndStops) {
    const Image g(8, 1, std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8});
    SolverConfig cfg;
    const SolverResult r = run_rl(g, ConvKernel::delta(), cfg);
    EXPECT_EQ(r.trace.terminated_by, Termination::converged);
    EXPECT_EQ(r.trace.records.size(), 2u);
    EXPECT_EQ(r.estimate.vector(), g.vector());
}

TEST(Driver, OracleNeedsTruth) {
    const Image g(8, 1, 1.0);
    SolverConfig cfg;
    cfg.stop = StopRule::nmse_optimal;
    EXPECT_THROW(run_rl(g, ConvKernel::delta(), cfg), Error);
}

TEST(Driver, OracleSelectsBestIterate) {
    Rng rng(15);
    const ConvKernel h = make_gaussian_kernel_1d(0.2 * std::numbers::pi);
    const Image truth = pt::random_image(rng, 64, 1, 0.0, 50.0);
    const Image g = poisson_sample(conv_forward(h, truth), rng);
    SolverConfig cfg;
    cfg.stop = StopRule::nmse_optimal;
    cfg.max_iters = 200;
    const SolverResult r = run_rl(g, h, cfg, &truth);
    ASSERT_EQ(r.trace.records.size(), 200u);
    double best = 1e300;
    std::size_t arg = 0;
    for (const auto& rec : r.trace.records)
        if (*rec.nmse < best) best = *rec.nmse, arg = rec.iter;
    EXPECT_EQ(r.trace.selected_iter, arg);
    EXPECT_EQ(nmse(truth, r.estimate), best);
}

TEST(Driver, ValidatesConfig) {
    SolverConfig cfg;
    cfg.lambda = -1.0;
    EXPECT_THROW(cfg.validate(), Error);
    cfg = {};
    cfg.max_iters = 0;
    EXPECT_THROW(cfg.validate(), Error);
}

TEST(Driver, TraceCsvFormat) {
    SolverTrace t;
    t.records.push_back({1, 2.5, 0.125, std::nullopt});
    t.records.push_back({2, 2.0, 0.0625, 0.5});
    std::ostringstream out;
    write_trace_csv(out, t);
    EXPECT_EQ(out.str(),
              "iter,objective,rel_change,nmse\n"
              "1,2.500000000000e+00,1.250000000000e-01,\n"
              "2,2.000000000000e+00,6.250000000000e-02,5.000000000000e-01\n");
}
