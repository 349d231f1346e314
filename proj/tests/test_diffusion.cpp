#include <doctest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "amcr/diffusion.hpp"
#include "oracles.hpp"

using namespace amcr;

namespace {

GridD random_grid(oracle::Rng& rng, Eigen::Index rows, Eigen::Index cols) {
    GridD g(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) g(i, j) = rng.gaussian();
    return g;
}

LatentState latent(GridD grid, int step = 0) {
    LatentState z;
    z.grid = std::move(grid);
    z.step = step;
    return z;
}

double max_abs_diff(const GridD& a, const GridD& b) {
    return (a - b).abs().maxCoeff();
}

// v = 2 z_t, so the clean estimate collapses to (alpha - 2 sigma) z_t.
class DoublingPredictor : public VPredictor {
public:
    LatentState predict(const LatentState& z_t, int t, const Conditioning&) override {
        LatentState v;
        v.grid = 2.0 * z_t.grid;
        v.step = t;
        return v;
    }
    std::string id() const override { return "doubling"; }
};

class WrongShapePredictor : public VPredictor {
public:
    LatentState predict(const LatentState&, int, const Conditioning&) override {
        LatentState v;
        v.grid = GridD::Zero(2, 3);
        return v;
    }
    std::string id() const override { return "wrong-shape"; }
};

class FailingPredictor : public VPredictor {
public:
    LatentState predict(const LatentState&, int, const Conditioning&) override {
        throw ProviderUnavailable("predictor backend offline");
    }
    std::string id() const override { return "failing"; }
};

}  // namespace

TEST_SUITE("noise schedules") {
    TEST_CASE("cosine closed form") {
        auto one = make_schedule(1, ScheduleFamily::Cosine);
        CHECK(one.alpha_at(1) == doctest::Approx(std::cos(std::numbers::pi / 4))
                                     .epsilon(1e-15));
        CHECK(one.alpha_at(1) == doctest::Approx(one.sigma_at(1)).epsilon(1e-15));

        auto sched = make_schedule(10, ScheduleFamily::Cosine);
        for (int t = 1; t <= 10; ++t) {
            double theta = std::numbers::pi * t / 22.0;
            CHECK(sched.alpha_at(t) == doctest::Approx(std::cos(theta)).epsilon(1e-15));
            CHECK(sched.sigma_at(t) == doctest::Approx(std::sin(theta)).epsilon(1e-15));
        }
    }

    TEST_CASE("linear family pins sigma squared to t over T+1") {
        auto sched = make_schedule(10, ScheduleFamily::Linear);
        for (int t = 1; t <= 10; ++t) {
            double s2 = sched.sigma_at(t) * sched.sigma_at(t);
            CHECK(s2 == doctest::Approx(t / 11.0).epsilon(1e-14));
            double a2 = sched.alpha_at(t) * sched.alpha_at(t);
            CHECK(a2 == doctest::Approx(1.0 - t / 11.0).epsilon(1e-14));
        }
    }

    TEST_CASE("variance preservation and monotonicity across families and sizes") {
        for (auto family : {ScheduleFamily::Cosine, ScheduleFamily::Linear}) {
            for (int T : {1, 2, 5, 10, 50}) {
                CAPTURE(T);
                auto sched = make_schedule(T, family);
                CHECK_NOTHROW(sched.validate());
                for (int t = 1; t <= T; ++t) {
                    double a = sched.alpha_at(t), s = sched.sigma_at(t);
                    CHECK(std::abs(a * a + s * s - 1.0) <= 1e-12);
                    if (t > 1) {
                        CHECK(a <= sched.alpha_at(t - 1));
                        CHECK(s >= sched.sigma_at(t - 1));
                    }
                }
                CHECK(sched.alpha_at(T) > 0.0);
            }
        }
    }

    TEST_CASE("step zero is the exact no-noise endpoint") {
        auto sched = make_schedule(5, ScheduleFamily::Cosine);
        CHECK(sched.alpha_at(0) == 1.0);
        CHECK(sched.sigma_at(0) == 0.0);
    }

    TEST_CASE("bounds and bad sizes are rejected") {
        CHECK_THROWS_AS(make_schedule(0, ScheduleFamily::Cosine), ContractViolation);
        auto sched = make_schedule(3, ScheduleFamily::Cosine);
        CHECK_THROWS_AS(sched.alpha_at(-1), ContractViolation);
        CHECK_THROWS_AS(sched.alpha_at(4), ContractViolation);
        CHECK_THROWS_AS(sched.sigma_at(4), ContractViolation);
    }

    TEST_CASE("validate rejects tampered schedules") {
        auto vp_broken = make_schedule(3, ScheduleFamily::Cosine);
        vp_broken.alpha[0] = 2.0;
        CHECK_THROWS_AS(vp_broken.validate(), NumericError);

        auto non_monotone = make_schedule(3, ScheduleFamily::Cosine);
        std::swap(non_monotone.alpha[0], non_monotone.alpha[2]);
        std::swap(non_monotone.sigma[0], non_monotone.sigma[2]);
        CHECK_THROWS_AS(non_monotone.validate(), NumericError);

        auto short_arrays = make_schedule(3, ScheduleFamily::Cosine);
        short_arrays.T = 4;
        CHECK_THROWS_AS(short_arrays.validate(), ContractViolation);
    }

    TEST_CASE("family names round-trip") {
        for (auto f : {ScheduleFamily::Cosine, ScheduleFamily::Linear})
            CHECK(schedule_family_from_name(schedule_family_name(f)) == f);
        CHECK(schedule_family_name(ScheduleFamily::Cosine) == "cosine");
        CHECK_THROWS_AS(schedule_family_from_name("quadratic"), ValidationError);
    }
}

TEST_SUITE("forward diffusion") {
    TEST_CASE("step zero returns the clean latent bit-exactly") {
        oracle::Rng rng(11);
        auto sched = make_schedule(5, ScheduleFamily::Cosine);
        auto z0 = latent(random_grid(rng, 8, 8));
        auto eps = latent(random_grid(rng, 8, 8));
        auto z_t = forward_diffuse(z0, 0, sched, eps);
        CHECK((z_t.grid == z0.grid).all());
        CHECK(z_t.step == 0);
    }

    TEST_CASE("zero latent scales the noise alone") {
        oracle::Rng rng(12);
        auto sched = make_schedule(5, ScheduleFamily::Cosine);
        auto z0 = latent(GridD::Zero(4, 4));
        auto eps = latent(random_grid(rng, 4, 4));
        auto z_t = forward_diffuse(z0, 3, sched, eps);
        CHECK(max_abs_diff(z_t.grid, sched.sigma_at(3) * eps.grid) == 0.0);
    }

    TEST_CASE("matches an independent affine recomputation") {
        oracle::Rng rng(13);
        auto sched = make_schedule(10, ScheduleFamily::Linear);
        auto z0 = latent(random_grid(rng, 8, 8));
        auto eps = latent(random_grid(rng, 8, 8));
        int t = 5;
        auto z_t = forward_diffuse(z0, t, sched, eps);
        double a = std::sqrt(1.0 - 5.0 / 11.0);
        double s = std::sqrt(5.0 / 11.0);
        for (Eigen::Index i = 0; i < 8; ++i)
            for (Eigen::Index j = 0; j < 8; ++j)
                CHECK(z_t.grid(i, j) ==
                      doctest::Approx(a * z0.grid(i, j) + s * eps.grid(i, j))
                          .epsilon(1e-14));
        CHECK(z_t.step == t);
    }

    TEST_CASE("shape and finiteness preconditions") {
        oracle::Rng rng(14);
        auto sched = make_schedule(5, ScheduleFamily::Cosine);
        auto z0 = latent(random_grid(rng, 4, 4));
        auto eps_bad = latent(random_grid(rng, 4, 5));
        CHECK_THROWS_AS(forward_diffuse(z0, 2, sched, eps_bad), DimensionMismatch);

        auto z_nan = z0;
        z_nan.grid(1, 1) = std::nan("");
        auto eps = latent(random_grid(rng, 4, 4));
        CHECK_THROWS_AS(forward_diffuse(z_nan, 2, sched, eps), NumericError);
    }
}

TEST_SUITE("clean estimation") {
    TEST_CASE("oracle predictor reconstructs z0 exactly at every step") {
        oracle::Rng rng(21);
        for (auto family : {ScheduleFamily::Cosine, ScheduleFamily::Linear}) {
            auto sched = make_schedule(10, family);
            auto z0 = latent(random_grid(rng, 8, 8));
            OracleVPredictor oracle_v(z0, sched);
            NoiseStream noise(7, 8, 8);
            for (int t = 1; t <= 10; ++t) {
                auto z_t = forward_diffuse(z0, t, sched, noise.eps(t));
                auto z0_hat =
                    estimate_clean(z_t, t, sched, oracle_v, Conditioning::minimal());
                CHECK(max_abs_diff(z0_hat.grid, z0.grid) < 1e-9);
            }
        }
    }

    TEST_CASE("zero predictor leaves the scaled noisy latent") {
        oracle::Rng rng(22);
        auto sched = make_schedule(6, ScheduleFamily::Cosine);
        auto z_t = latent(random_grid(rng, 4, 4), 4);
        ZeroVPredictor zero;
        auto z0_hat = estimate_clean(z_t, 4, sched, zero, Conditioning::minimal());
        CHECK(max_abs_diff(z0_hat.grid, sched.alpha_at(4) * z_t.grid) == 0.0);
    }

    TEST_CASE("linear toy predictor matches the closed form") {
        oracle::Rng rng(23);
        auto sched = make_schedule(6, ScheduleFamily::Cosine);
        auto z_t = latent(random_grid(rng, 4, 4), 2);
        DoublingPredictor doubling;
        auto z0_hat = estimate_clean(z_t, 2, sched, doubling, Conditioning::minimal());
        double factor = sched.alpha_at(2) - 2.0 * sched.sigma_at(2);
        CHECK(max_abs_diff(z0_hat.grid, factor * z_t.grid) < 1e-14);
    }

    TEST_CASE("predictor contract violations surface") {
        oracle::Rng rng(24);
        auto sched = make_schedule(6, ScheduleFamily::Cosine);
        auto z_t = latent(random_grid(rng, 4, 4), 2);
        WrongShapePredictor wrong;
        CHECK_THROWS_AS(estimate_clean(z_t, 2, sched, wrong, Conditioning::minimal()),
                        DimensionMismatch);
        FailingPredictor failing;
        CHECK_THROWS_AS(
            estimate_clean(z_t, 2, sched, failing, Conditioning::minimal()),
            ProviderError);
    }

    TEST_CASE("conditioning variants are validated") {
        CHECK(Conditioning::minimal().tokens.empty());
        CHECK_THROWS_AS(Conditioning::prompt({}), ContractViolation);
        Conditioning bad;
        bad.tokens.push_back(VectorXd::Ones(4));
        CHECK_THROWS_AS(bad.validate(), ContractViolation);
        auto ok = Conditioning::prompt({VectorXd::Ones(4)});
        CHECK(ok.kind == Conditioning::Kind::Prompt);
    }
}

TEST_SUITE("noise streams") {
    TEST_CASE("draws depend only on seed and timestep") {
        NoiseStream a(5, 8, 8);
        NoiseStream b(5, 8, 8);
        CHECK((a.eps(3).grid == b.eps(3).grid).all());
        CHECK((a.eps(3).grid == a.eps(3).grid).all());
        CHECK_FALSE((a.eps(3).grid == a.eps(4).grid).all());
        NoiseStream other_seed(6, 8, 8);
        CHECK_FALSE((a.eps(3).grid == other_seed.eps(3).grid).all());
        CHECK(a.eps(2).step == 2);
        CHECK(a.eps(2).rows() == 8);
    }

    TEST_CASE("pooled draws look standard normal") {
        NoiseStream stream(99, 8, 8);
        double sum = 0.0, sq = 0.0;
        int n = 0;
        for (int t = 1; t <= 50; ++t) {
            auto e = stream.eps(t);
            sum += e.grid.sum();
            sq += (e.grid * e.grid).sum();
            n += static_cast<int>(e.grid.size());
        }
        double mean = sum / n;
        double var = sq / n - mean * mean;
        CHECK(std::abs(mean) < 0.06);
        CHECK(var == doctest::Approx(1.0).epsilon(0.1));
    }

    TEST_CASE("degenerate shapes are rejected") {
        CHECK_THROWS_AS(NoiseStream(0, 0, 8), ContractViolation);
        NoiseStream stream(0, 4, 4);
        CHECK_THROWS_AS(stream.eps(-1), ContractViolation);
    }
}

TEST_SUITE("trajectories") {
    TEST_CASE("oracle base predictor reproduces the reference at every step") {
        oracle::Rng rng(31);
        auto sched = make_schedule(10, ScheduleFamily::Cosine);
        auto z_ref = latent(random_grid(rng, 8, 8));
        OracleVPredictor base(z_ref, sched);
        NoiseStream noise(17, 8, 8);
        std::vector<int> steps = {1, 3, 7, 10};
        auto traj = reference_trajectory(z_ref, sched, base, steps, noise);
        REQUIRE(traj.size() == steps.size());
        for (std::size_t i = 0; i < steps.size(); ++i) {
            CHECK(traj[i].step == steps[i]);
            CHECK(max_abs_diff(traj[i].grid, z_ref.grid) < 1e-12);
        }
    }

    TEST_CASE("empty step list gives an empty trajectory") {
        oracle::Rng rng(32);
        auto sched = make_schedule(5, ScheduleFamily::Cosine);
        auto z_ref = latent(random_grid(rng, 4, 4));
        ZeroVPredictor zero;
        NoiseStream noise(1, 4, 4);
        CHECK(reference_trajectory(z_ref, sched, zero, {}, noise).empty());
    }

    TEST_CASE("zero base predictor composes the two closed forms") {
        oracle::Rng rng(33);
        auto sched = make_schedule(8, ScheduleFamily::Linear);
        auto z_ref = latent(random_grid(rng, 4, 4));
        ZeroVPredictor zero;
        NoiseStream noise(42, 4, 4);
        auto traj = reference_trajectory(z_ref, sched, zero, {8}, noise);
        REQUIRE(traj.size() == 1);
        double a = sched.alpha_at(8), s = sched.sigma_at(8);
        GridD expected = a * (a * z_ref.grid + s * noise.eps(8).grid);
        CHECK(max_abs_diff(traj[0].grid, expected) < 1e-14);
    }

    TEST_CASE("generation and reference share the noise draw at matched steps") {
        oracle::Rng rng(34);
        auto sched = make_schedule(10, ScheduleFamily::Cosine);
        auto z = latent(random_grid(rng, 8, 8));
        ZeroVPredictor zero;
        NoiseStream noise(55, 8, 8);
        auto cond = Conditioning::prompt({VectorXd::Ones(3)});
        auto gen = estimate_trajectory(z, sched, zero, {2, 5}, noise, cond);
        auto ref = reference_trajectory(z, sched, zero, {2, 5}, noise);
        REQUIRE(gen.size() == ref.size());
        for (std::size_t i = 0; i < gen.size(); ++i)
            CHECK((gen[i].grid == ref[i].grid).all());
    }

    TEST_CASE("identical seeds give bit-identical trajectories") {
        oracle::Rng rng(35);
        auto sched = make_schedule(10, ScheduleFamily::Cosine);
        auto z = latent(random_grid(rng, 8, 8));
        ZeroVPredictor zero;
        std::vector<int> steps = {1, 2, 3, 4, 4};
        auto a = reference_trajectory(z, sched, zero, steps, NoiseStream(9, 8, 8));
        auto b = reference_trajectory(z, sched, zero, steps, NoiseStream(9, 8, 8));
        REQUIRE(a.size() == 5);
        for (std::size_t i = 0; i < a.size(); ++i)
            CHECK((a[i].grid == b[i].grid).all());
        CHECK((a[3].grid == a[4].grid).all());  // duplicate steps repeat draws

        auto c = reference_trajectory(z, sched, zero, steps, NoiseStream(10, 8, 8));
        CHECK_FALSE((a[0].grid == c[0].grid).all());
    }

    TEST_CASE("steps outside the schedule are rejected") {
        oracle::Rng rng(36);
        auto sched = make_schedule(5, ScheduleFamily::Cosine);
        auto z = latent(random_grid(rng, 4, 4));
        ZeroVPredictor zero;
        NoiseStream noise(1, 4, 4);
        CHECK_THROWS_AS(reference_trajectory(z, sched, zero, {0}, noise),
                        ContractViolation);
        CHECK_THROWS_AS(reference_trajectory(z, sched, zero, {6}, noise),
                        ContractViolation);
    }
}
