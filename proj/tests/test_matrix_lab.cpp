#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "condlab/matrix_lab.hpp"
#include "condlab/rng.hpp"

using namespace condlab;

namespace {

Matrix unit_projector(std::size_t m, std::size_t i) {
    Matrix x(m, m);
    x(i, i) = 1.0;
    return x;
}

Matrix diag_matrix(const Vector& values, std::size_t m) {
    Matrix t(m, m);
    for (std::size_t i = 0; i < values.size(); ++i) t(i, i) = values[i];
    return t;
}

MatrixEffectiveState scalar_mc_state(double lambda, double a, double b, double c) {
    MatrixEffectiveState s;
    s.a_rows = {{a}};
    s.b = Matrix(1, 1);
    s.b(0, 0) = b;
    s.c_cols = {{c}};
    s.lambda = {lambda};
    s.retained = {static_cast<std::uint8_t>(lambda != 0.0 ? 1 : 0)};
    s.o = Matrix::identity(1);
    return s;
}

MatrixEffectiveState random_mc_state(std::size_t m, const Vector& lambda, double std,
                                     std::uint64_t seed) {
    Rng rng(seed);
    MatrixEffectiveState s;
    s.b = Matrix(m, m);
    s.lambda = lambda;
    s.o = Matrix::identity(m);
    s.retained.assign(m, 0);
    double lmax = 0.0;
    for (double l : lambda) lmax = std::max(lmax, std::abs(l));
    for (std::size_t i = 0; i < m; ++i) {
        Vector a(m), c(m);
        for (double& x : a) x = rng.gaussian(0.0, std);
        for (double& x : c) x = rng.gaussian(0.0, std);
        s.a_rows.push_back(a);
        s.c_cols.push_back(c);
        s.retained[i] = (lmax > 0.0 && std::abs(lambda[i]) >= 1e-12 * lmax) ? 1 : 0;
    }
    for (double& x : s.b.data) x = rng.gaussian(0.0, std);
    return s;
}

Matrix random_orthogonal(std::size_t m, std::uint64_t seed) {
    Rng rng(seed);
    Matrix sym(m, m);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = i; j < m; ++j) {
            const double x = rng.gaussian();
            sym(i, j) = x;
            sym(j, i) = x;
        }
    return symmetric_eigen(sym, 1e-9).o;
}

}  // namespace

TEST_CASE("build_v") {
    SECTION("single projector measurement") {
        SensingProblem p;
        p.measurements = {unit_projector(2, 0)};
        p.labels = {1.0};
        const Matrix v = build_v(p);
        CHECK(v(0, 0) == 1.0);
        CHECK(v(1, 1) == 0.0);
    }
    SECTION("zero labels give the zero matrix") {
        SensingProblem p;
        p.measurements = {unit_projector(2, 0), unit_projector(2, 1)};
        p.labels = {0.0, 0.0};
        CHECK(frobenius(build_v(p)) == 0.0);
    }
    SECTION("projector family on diag(1,-1,0,...)") {
        const Matrix target = diag_matrix({1.0, -1.0}, 4);
        const SensingProblem p = make_projector_problem(target);
        REQUIRE(p.measurements.size() == 4);
        CHECK(p.labels == Vector{1.0, -1.0, 0.0, 0.0});
        const Matrix v = build_v(p);
        CHECK(v(0, 0) == Catch::Approx(0.25));
        CHECK(v(1, 1) == Catch::Approx(-0.25));
        CHECK(v(2, 2) == 0.0);
        CHECK(max_pairwise_commutator(p) == 0.0);  // projectors commute
    }
    SECTION("symmetrized entry family is flagged non-commuting") {
        const SensingProblem p = make_symmetric_entry_problem(diag_matrix({1.0, -1.0}, 3));
        REQUIRE(p.measurements.size() == 6);
        CHECK(max_pairwise_commutator(p) > 1e-12);
    }
    SECTION("asymmetric measurements are rejected") {
        SensingProblem p;
        Matrix x(2, 2);
        x(0, 1) = 1.0;
        p.measurements = {x};
        p.labels = {0.0};
        CHECK_THROWS_AS(build_v(p), std::invalid_argument);
    }
}

TEST_CASE("diagonalize_and_transform") {
    SECTION("descending diagonal V with identity layers") {
        const Matrix v = diag_matrix({2.0, 1.0}, 2);
        DeepLinearNet net{Matrix::identity(2), Matrix::identity(2), Matrix::identity(2)};
        const MatrixEffectiveState s = diagonalize_and_transform(v, net);
        CHECK(s.lambda == Vector{2.0, 1.0});
        for (std::size_t i = 0; i < 2; ++i) {
            CHECK(s.retained[i] == 1);
            for (std::size_t j = 0; j < 2; ++j) {
                CHECK(s.a_rows[i][j] == Catch::Approx(i == j ? 1.0 : 0.0).margin(1e-14));
                CHECK(s.c_cols[i][j] == Catch::Approx(i == j ? 1.0 : 0.0).margin(1e-14));
            }
        }
        CHECK(frobenius(s.b) == Catch::Approx(std::sqrt(2.0)));
    }
    SECTION("transform round-trips through the orthogonal basis") {
        const Matrix q = random_orthogonal(4, 8);
        // V = Q diag Q^T with distinct eigenvalues
        Matrix v(4, 4);
        const Vector lam = {3.0, 1.5, -0.5, -2.0};
        for (std::size_t i = 0; i < 4; ++i)
            for (std::size_t j = 0; j < 4; ++j) {
                double sum = 0.0;
                for (std::size_t k = 0; k < 4; ++k) sum += q(i, k) * lam[k] * q(j, k);
                v(i, j) = sum;
            }
        Rng rng(91);
        DeepLinearNet net{Matrix(4, 4), Matrix(4, 4), Matrix(4, 4)};
        for (auto* w : {&net.w3, &net.w2, &net.w1})
            for (double& x : w->data) x = rng.gaussian();

        const MatrixEffectiveState s = diagonalize_and_transform(v, net);
        const DeepLinearNet back = inverse_transform(s);
        for (std::size_t k = 0; k < 16; ++k) {
            CHECK(back.w3.data[k] == Catch::Approx(net.w3.data[k]).margin(1e-10));
            CHECK(back.w2.data[k] == Catch::Approx(net.w2.data[k]).margin(1e-10));
            CHECK(back.w1.data[k] == Catch::Approx(net.w1.data[k]).margin(1e-10));
        }
    }
    SECTION("zero V neglects every index") {
        DeepLinearNet net{Matrix::identity(2), Matrix::identity(2), Matrix::identity(2)};
        const MatrixEffectiveState s = diagonalize_and_transform(Matrix(2, 2), net);
        CHECK(s.retained == std::vector<std::uint8_t>{0, 0});
        CHECK(mc_energy(s) == 0.0);
    }
}

TEST_CASE("mc_derivative") {
    SECTION("scalar case reduces to the vector system") {
        const MatrixStateDerivative d = mc_derivative(scalar_mc_state(1.0, 1.0, 1.0, 1.0));
        CHECK(d.da_rows[0][0] == 1.0);
        CHECK(d.db(0, 0) == 1.0);
        CHECK(d.dc_cols[0][0] == 1.0);
    }
    SECTION("all-neglected lambda freezes the state") {
        const MatrixStateDerivative d = mc_derivative(scalar_mc_state(0.0, 2.0, 3.0, 4.0));
        CHECK(d.da_rows[0][0] == 0.0);
        CHECK(d.db(0, 0) == 0.0);
        CHECK(d.dc_cols[0][0] == 0.0);
    }
    SECTION("m=2 identity-column case matches hand substitution") {
        MatrixEffectiveState s;
        s.a_rows = {{1, 0}, {0, 1}};
        s.b = Matrix::identity(2);
        s.c_cols = {{1, 0}, {0, 1}};
        s.lambda = {1.0, -1.0};
        s.retained = {1, 1};
        s.o = Matrix::identity(2);
        const MatrixStateDerivative d = mc_derivative(s);
        // da_i = lambda_i b c_i, db = sum lambda_i a_i c_i^T, dc_i = lambda_i b^T a_i
        CHECK(d.da_rows[0] == Vector{1, 0});
        CHECK(d.da_rows[1] == Vector{0, -1});
        CHECK(d.db(0, 0) == 1.0);
        CHECK(d.db(1, 1) == -1.0);
        CHECK(d.db(0, 1) == 0.0);
        CHECK(d.dc_cols[0] == Vector{1, 0});
        CHECK(d.dc_cols[1] == Vector{0, -1});
    }
}

TEST_CASE("mc_energy against a brute-force sum") {
    const MatrixEffectiveState s = random_mc_state(3, {1.5, -0.5, 0.25}, 0.8, 44);
    double brute = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
        double term = 0.0;
        for (std::size_t r = 0; r < 3; ++r)
            for (std::size_t k = 0; k < 3; ++k)
                term += s.a_rows[i][r] * s.b(r, k) * s.c_cols[i][k];
        brute += s.lambda[i] * term;
    }
    CHECK(mc_energy(s) == Catch::Approx(brute).epsilon(1e-13));
    CHECK(mc_energy(scalar_mc_state(1.0, 1.0, 1.0, 1.0)) == 1.0);
    CHECK(mc_energy(scalar_mc_state(0.0, 5.0, 5.0, 5.0)) == 0.0);
}

TEST_CASE("mc_integrate") {
    SECTION("scalar lambda=1 reproduces the vector-system trajectory") {
        IntegrateOptions opts;
        opts.t_end = 2.0;
        opts.energy_ceiling = 1e3;
        const McTrajectory mc = mc_integrate(scalar_mc_state(1.0, 1.0, 1.0, 1.0), opts);

        EffectiveState es;
        es.a = {1.0};
        es.b = Matrix(1, 1);
        es.b(0, 0) = 1.0;
        es.c = {1.0};
        const Trajectory ref = integrate(es, opts);

        REQUIRE(mc.stop_reason == StopReason::energy_ceiling);
        REQUIRE(mc.snapshots.size() == ref.snapshots.size());
        CHECK(mc.snapshots.back().t == ref.snapshots.back().t);
        CHECK(mc.energies.back() == ref.energies.back());
    }
    SECTION("neglected-lambda state is constant") {
        IntegrateOptions opts;
        opts.t_end = 1.0;
        const McTrajectory traj = mc_integrate(scalar_mc_state(0.0, 2.0, 3.0, 4.0), opts);
        CHECK(traj.stop_reason == StopReason::reached_t_end);
        CHECK(traj.snapshots.back().a_rows[0][0] == 2.0);
        CHECK(traj.snapshots.back().b(0, 0) == 3.0);
        CHECK(traj.snapshots.back().c_cols[0][0] == 4.0);
    }
    SECTION("energy grows monotonically (gradient ascent)") {
        const MatrixEffectiveState s0 = random_mc_state(3, {0.4, 0.2, -0.4}, 0.5, 7);
        IntegrateOptions opts;
        opts.t_end = 1e4;
        opts.energy_ceiling = 1e6;
        const McTrajectory traj = mc_integrate(s0, opts);
        for (std::size_t i = 1; i < traj.energies.size(); ++i)
            CHECK(traj.energies[i] >=
                  traj.energies[i - 1] - 1e-9 * std::max(1.0, std::abs(traj.energies[i - 1])));
    }
    SECTION("per-index conservation ||a_i||^2 - ||c_i||^2 is preserved") {
        const MatrixEffectiveState s0 = random_mc_state(3, {0.5, -0.3, 0.1}, 0.5, 15);
        Vector ref(3);
        for (std::size_t i = 0; i < 3; ++i)
            ref[i] = dot(s0.a_rows[i], s0.a_rows[i]) - dot(s0.c_cols[i], s0.c_cols[i]);
        IntegrateOptions opts;
        opts.t_end = 1e4;
        opts.energy_ceiling = 1e6;
        opts.rel_tol = 1e-10;
        const McTrajectory traj = mc_integrate(s0, opts);
        REQUIRE(traj.stop_reason == StopReason::energy_ceiling);
        for (const MatrixEffectiveState& s : traj.snapshots)
            for (std::size_t i = 0; i < 3; ++i) {
                const double q = dot(s.a_rows[i], s.a_rows[i]) - dot(s.c_cols[i], s.c_cols[i]);
                CHECK(std::abs(q - ref[i]) <= 1e-8 * (1.0 + std::abs(ref[i])));
            }
    }
}

TEST_CASE("check_mc_fsc") {
    SECTION("scalar positive case holds") {
        const McFscReport r = check_mc_fsc(scalar_mc_state(1.0, 1.0, 1.0, 1.0));
        CHECK(r.holds);
        CHECK(r.cond_counts[0] == 2);
        CHECK(r.cond_counts[1] == 2);
        CHECK(r.cond_counts[2] == 1);
    }
    SECTION("zero state fails") {
        CHECK_FALSE(check_mc_fsc(scalar_mc_state(1.0, 0.0, 0.0, 0.0)).holds);
    }
    SECTION("sign-flipped c fails through condition 1") {
        const McFscReport r = check_mc_fsc(scalar_mc_state(1.0, 1.0, 1.0, -1.0));
        CHECK_FALSE(r.holds);
        CHECK(r.min_margin < 0.0);
    }
    SECTION("neglected indices are excluded from the maxima") {
        const McFscReport r = check_mc_fsc(scalar_mc_state(0.0, 1.0, 1.0, 1.0));
        CHECK(r.cond_maxima[0] == 0);
        CHECK_FALSE(r.holds);  // no retained index means the condition is vacuous-false
    }
}

TEST_CASE("mc_fsc_persistence") {
    SECTION("scalar case holds from the start and is never violated") {
        IntegrateOptions opts;
        opts.t_end = 2.0;
        opts.energy_ceiling = 1e6;
        const McTrajectory traj = mc_integrate(scalar_mc_state(1.0, 1.0, 1.0, 1.0), opts);
        const McFscPersistence p = mc_fsc_persistence(traj);
        REQUIRE(p.first_hold_t.has_value());
        CHECK(*p.first_hold_t == traj.snapshots.front().t);
        CHECK_FALSE(p.violated_after);
    }
    SECTION("non-blow-up decay never reaches the condition") {
        IntegrateOptions opts;
        opts.t_end = 10.0;
        const McTrajectory traj = mc_integrate(scalar_mc_state(1.0, 1.0, 1.0, -1.0), opts);
        const McFscPersistence p = mc_fsc_persistence(traj);
        CHECK_FALSE(p.first_hold_t.has_value());
    }
    SECTION("random runs: once reached, never violated") {
        std::size_t found = 0;
        for (std::uint64_t seed = 0; found < 10 && seed < 40; ++seed) {
            const MatrixEffectiveState s0 =
                random_mc_state(4, {0.5, 0.25, -0.25, -0.5}, 0.5, derive_seed(17, seed));
            IntegrateOptions opts;
            opts.t_end = 1e4;
            opts.energy_ceiling = 1e7;
            const McTrajectory traj = mc_integrate(s0, opts);
            if (traj.stop_reason != StopReason::energy_ceiling) continue;
            const McFscPersistence p = mc_fsc_persistence(traj, 1e-9);
            if (!p.first_hold_t) continue;
            ++found;
            CHECK_FALSE(p.violated_after);
        }
        CHECK(found == 10);
    }
}

TEST_CASE("condition-3 products stay positive along FSC-holding trajectories") {
    std::size_t found = 0;
    for (std::uint64_t seed = 0; found < 5 && seed < 40; ++seed) {
        const MatrixEffectiveState s0 =
            random_mc_state(3, {0.5, 0.25, -0.5}, 0.5, derive_seed(23, seed));
        IntegrateOptions opts;
        opts.t_end = 1e4;
        opts.energy_ceiling = 1e7;
        const McTrajectory traj = mc_integrate(s0, opts);
        if (traj.stop_reason != StopReason::energy_ceiling) continue;
        const McFscPersistence p = mc_fsc_persistence(traj, 1e-9);
        if (!p.first_hold_t) continue;
        ++found;
        for (const MatrixEffectiveState& s : traj.snapshots) {
            if (s.t < *p.first_hold_t) continue;
            for (std::size_t i = 0; i < 3; ++i)
                for (std::size_t j = 0; j < 3; ++j)
                    for (std::size_t k = 0; k < 3; ++k)
                        for (std::size_t l = 0; l < 3; ++l) {
                            const double v = s.lambda[i] * s.lambda[j] * s.a_rows[i][k] *
                                             s.a_rows[j][k] * s.c_cols[i][l] * s.c_cols[j][l];
                            CHECK(v > 0.0);
                        }
        }
    }
    CHECK(found == 5);
}

TEST_CASE("deep linear training") {
    SECTION("zero target from zero init never moves") {
        const SensingProblem p = make_projector_problem(Matrix(3, 3));
        DeepLinearNet net{Matrix(3, 3), Matrix(3, 3), Matrix(3, 3)};
        DeepTrainOptions opts;
        opts.iters = 50;
        opts.log_every = 10;
        const DeepTrainLog log = train_deep_linear(net, p, opts);
        for (double l : log.losses) CHECK(l == 0.0);
    }
    SECTION("gradient matches central finite differences on a random instance") {
        const std::size_t m = 4;
        Rng rng(3141);
        Matrix target(m, m);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = i; j < m; ++j) {
                const double x = rng.gaussian();
                target(i, j) = x;
                target(j, i) = x;
            }
        const SensingProblem p = make_symmetric_entry_problem(target);
        DeepLinearNet net = make_deep_linear_net(m, 0.4, 2718);
        const DeepNetGradient g = sensing_gradient(net, p);
        const double h = 1e-6;
        auto check_block = [&](Matrix& w, const Matrix& grad) {
            for (std::size_t k = 0; k < m * m; ++k) {
                const double orig = w.data[k];
                w.data[k] = orig + h;
                const double up = sensing_risk(net, p);
                w.data[k] = orig - h;
                const double down = sensing_risk(net, p);
                w.data[k] = orig;
                const double fd = (up - down) / (2.0 * h);
                CHECK(std::abs(grad.data[k] - fd) <= 1e-6 * std::max(1.0, std::abs(fd)) + 1e-8);
            }
        };
        check_block(net.w3, g.g3);
        check_block(net.w2, g.g2);
        check_block(net.w1, g.g1);
    }
    SECTION("loss trajectory is invariant under orthogonal conjugation") {
        const std::size_t m = 4;
        const Matrix target = diag_matrix({1.0, -1.0}, m);
        const SensingProblem p = make_projector_problem(target);
        const Matrix q = random_orthogonal(m, 5150);

        auto conjugate = [&](const Matrix& w) {
            return matmul(q, matmul(w, transpose(q)));
        };
        SensingProblem pq;
        for (const Matrix& x : p.measurements) pq.measurements.push_back(conjugate(x));
        pq.labels = p.labels;
        pq.target = conjugate(target);

        DeepLinearNet net = make_deep_linear_net(m, 1e-2, 1234);
        DeepLinearNet netq{conjugate(net.w3), conjugate(net.w2), conjugate(net.w1)};

        DeepTrainOptions opts;
        opts.lr = 0.2;
        opts.iters = 200;
        opts.log_every = 20;
        const DeepTrainLog log = train_deep_linear(net, p, opts);
        const DeepTrainLog logq = train_deep_linear(netq, pq, opts);
        REQUIRE(log.losses.size() == logq.losses.size());
        for (std::size_t i = 0; i < log.losses.size(); ++i)
            CHECK(std::abs(log.losses[i] - logq.losses[i]) <= 1e-10);
    }
}
