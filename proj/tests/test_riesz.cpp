#include "gmt/riesz.hpp"

#include <doctest.h>

#include <random>

using namespace gmt;

namespace {

DiscreteMeasure atoms(std::initializer_list<std::pair<double, double>> xy, int n = 1)
{
    Points p(2, static_cast<Index>(xy.size()));
    Index i = 0;
    for (auto [x, y] : xy) p.col(i++) << x, y;
    return DiscreteMeasure(p, Eigen::VectorXd::Ones(p.cols()), n);
}

DiscreteMeasure random_cloud(int N, unsigned seed)
{
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Points p(2, N);
    Eigen::VectorXd w(N);
    for (int i = 0; i < N; ++i) {
        p.col(i) << u(rng), u(rng);
        w(i) = 0.5 + u(rng);
    }
    return DiscreteMeasure(p, w);
}

AtomField random_field(Index N, int m, unsigned seed)
{
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g;
    AtomField f(N, m);
    for (Index i = 0; i < N; ++i)
        for (int k = 0; k < m; ++k) f(i, k) = g(rng);
    return f;
}

}  // namespace

TEST_CASE("truncated riesz: kernel arithmetic")
{
    DiscreteMeasure sym = atoms({{-1, 0}, {1, 0}});
    CHECK(truncated_riesz(sym, Eigen::Vector2d(0, 0), 0.1).norm() == doctest::Approx(0.0));

    const double d = 0.37;
    DiscreteMeasure one = atoms({{d, 0}});
    Eigen::VectorXd v = truncated_riesz(one, Eigen::Vector2d(0, 0), 0.01);
    CHECK(v(0) == doctest::Approx(-1.0 / d));
    CHECK(v(1) == doctest::Approx(0.0));
    CHECK(truncated_riesz(one, Eigen::Vector2d(0, 0), 0.5).norm() == 0.0);
}

TEST_CASE("truncated riesz on a segment against a reversed-order sum")
{
    DiscreteMeasure mu = generate("segment", 10);
    const Index a = 300;
    const Eigen::VectorXd x = mu.point(a);
    const double eps = 0.5 / 1024;
    Eigen::VectorXd v = truncated_riesz(mu, x, eps);
    // reversed loop order, pairing terms left and right of x
    double sx = 0.0;
    for (Index j = mu.size() - 1; j >= 0; --j) {
        const double u = x(0) - mu.point(j)(0);
        if (std::abs(u) > eps) sx += mu.weight(j) / u;
    }
    CHECK(std::abs(v(0) - sx) <= 1e-12 * std::max(1.0, std::abs(sx)));
    CHECK(std::abs(v(1)) <= 1e-15);
}

TEST_CASE("principal value at atoms")
{
    DiscreteMeasure three = atoms({{0, 0}, {1, 0}, {2, 0}});
    AtomField pv = pv_riesz_at_atoms(three);
    CHECK(pv.row(1).norm() == doctest::Approx(0.0));

    // corner of the first 4-corner generation: three terms by hand
    DiscreteMeasure c = generate("cantor4corner", 1);
    const double s = (c.point(1) - c.point(0)).norm();
    const double w = c.weight(0);
    const double expect = w * (1.0 / s + 1.0 / (2.0 * s)) * std::sqrt(2.0);
    AtomField pc = pv_riesz_at_atoms(c);
    for (Index i = 0; i < 4; ++i) CHECK(pc.row(i).norm() == doctest::Approx(expect));

    CHECK(pv_riesz_at_atoms(atoms({{0.3, 0.3}})).norm() == 0.0);
    CHECK_THROWS_AS(pv_riesz_at_atoms(atoms({{0.3, 0.3}, {0.3, 0.3}})), std::invalid_argument);
}

TEST_CASE("principal value is antisymmetric")
{
    for (const char* kind : {"segment", "cantor4corner", "plane_patch", "lipschitz_graph"}) {
        DiscreteMeasure mu = generate(kind, 4);
        AtomField pv = pv_riesz_at_atoms(mu);
        const Eigen::RowVectorXd total = mu.weights().transpose() * pv;
        const double scale = mu.total_mass() * pv.rowwise().norm().maxCoeff();
        CHECK(total.norm() <= 1e-10 * scale);
    }
}

TEST_CASE("maximal riesz: grid is a lower bound of the breakpoint sup")
{
    DiscreteMeasure mu = random_cloud(120, 4);
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int t = 0; t < 20; ++t) {
        Eigen::Vector2d x(u(rng), u(rng));
        std::vector<double> grid;
        for (double e = 1.0; e > 1e-3; e /= 2) grid.push_back(e);
        const double exact = maximal_riesz_exact(mu, x);
        CHECK(maximal_riesz(mu, x, grid) <= exact * (1 + 1e-12));
        // brute force over every breakpoint
        double brute = 0.0;
        for (Index j = 0; j < mu.size(); ++j) {
            const double r = (x - mu.point(j)).norm();
            brute = std::max(brute, truncated_riesz(mu, x, r * (1 - 1e-13)).norm());
        }
        CHECK(exact == doctest::Approx(brute).epsilon(1e-10));
    }
    CHECK(maximal_riesz_exact(atoms({{0.5, 0.5}}), Eigen::Vector2d(0.5, 0.5)) == 0.0);
    CHECK_THROWS(maximal_riesz(mu, Eigen::Vector2d(0, 0), {}));
}

TEST_CASE("suppressed kernel identities")
{
    Eigen::Vector2d x(0.2, 0.1), y(1.2, 0.1);
    CHECK((suppressed_kernel(x, y, 0.0, 0.0, 1) - riesz_kernel(x, y, 1)).norm() == 0.0);
    CHECK(suppressed_kernel(x, y, 1.0, 1.0, 1).norm() == doctest::Approx(0.5));
    CHECK(suppressed_kernel(x, x, 1.0, 1.0, 1).norm() == 0.0);
}

TEST_CASE("suppressed kernel envelope and analytic gradient")
{
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int n : {1, 2}) {
        const int d = n + 1;
        double cfit = 0.0, gfit = 0.0, worst = 0.0;
        for (int t = 0; t < 10000; ++t) {
            Eigen::VectorXd c(d), x(d), y(d);
            for (int k = 0; k < d; ++k) {
                c(k) = u(rng);
                x(k) = u(rng);
                y(k) = u(rng);
            }
            SuppressionFn phi = SuppressionFn::smooth_distance(c, 0.5 + 0.5 * std::abs(u(rng)), 0.05 + std::abs(u(rng)));
            const double px = phi(x), py = phi(y);
            const double D = (x - y).norm() + px + py;
            cfit = std::max(cfit, suppressed_kernel(x, y, px, py, n).norm() * std::pow(D, n));

            auto [jx, jy] = suppressed_kernel_jacobians<double>(x, y, px, py, phi.grad(x), phi.grad(y), n);
            gfit = std::max(gfit, (jx.norm() + jy.norm()) * std::pow(D, n + 1));
            const double h = 1e-6;
            for (int k = 0; k < d; ++k) {
                Eigen::VectorXd e = Eigen::VectorXd::Unit(d, k) * h;
                const Eigen::VectorXd fx = (suppressed_kernel(Eigen::VectorXd(x + e), y, phi(x + e), py, n) -
                                            suppressed_kernel(Eigen::VectorXd(x - e), y, phi(x - e), py, n)) /
                                           (2 * h);
                const Eigen::VectorXd fy = (suppressed_kernel(x, Eigen::VectorXd(y + e), px, phi(y + e), n) -
                                            suppressed_kernel(x, Eigen::VectorXd(y - e), px, phi(y - e), n)) /
                                           (2 * h);
                const double scale = std::max(1.0, jx.norm() + jy.norm());
                worst = std::max(worst, (fx - jx.col(k)).norm() / scale);
                worst = std::max(worst, (fy - jy.col(k)).norm() / scale);
            }
        }
        MESSAGE("n=" << n << " fitted |K| constant " << cfit << ", gradient constant " << gfit);
        CHECK(cfit <= std::pow(3.0, n));
        CHECK(std::isfinite(gfit));
        CHECK(worst <= 1e-6);
    }
}

TEST_CASE("suppressed riesz")
{
    DiscreteMeasure mu = random_cloud(60, 2);
    AtomField pv = pv_riesz_at_atoms(mu);
    const SuppressionFn zero = SuppressionFn::constant(0.0);
    for (Index i = 0; i < 5; ++i)
        CHECK((suppressed_riesz(mu, mu.point(i), zero) - pv.row(i).transpose()).norm() <= 1e-12 * pv.row(i).norm());
    CHECK(suppressed_riesz(atoms({{0.1, 0.2}}), Eigen::Vector2d(0.1, 0.2), SuppressionFn::constant(0.3)).norm() == 0.0);

    // comparison with the eps-truncation at eps = Phi(x)
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double cfit = 0.0;
    for (int t = 0; t < 200; ++t) {
        Eigen::Vector2d x(u(rng), u(rng)), c(u(rng), u(rng));
        SuppressionFn phi = SuppressionFn::smooth_distance(c, 1.0, 0.01 + 0.2 * u(rng));
        const double px = phi(x);
        const double diff = (truncated_riesz(mu, x, px) - suppressed_riesz(mu, x, phi)).norm();
        double sup = 0.0;
        for (double r = px * (1 + 1e-9); r < 4.0; r *= 1.05) sup = std::max(sup, mu.index().mass_in_ball(x, r) / r);
        if (sup > 0) cfit = std::max(cfit, diff / sup);
    }
    MESSAGE("fitted truncation comparison constant " << cfit);
    CHECK(cfit < 20.0);
}

TEST_CASE("suppression certificate")
{
    DiscreteMeasure mu = random_cloud(50, 6);
    SuppressionFn phi = SuppressionFn::smooth_distance(Eigen::Vector2d(0.5, 0.5), 0.8, 0.1);
    const double c = phi.certify(mu.points());
    CHECK(c <= 0.8 + 1e-12);
    CHECK(c > 0.0);
}

TEST_CASE("w energy")
{
    CHECK(w_energy(atoms({{0, 0}, {1, 0}}), {0, 1}) == doctest::Approx(2.0));
    CHECK(w_energy(atoms({{0, 0}}), {0}) == 0.0);
    DiscreteMeasure mu = random_cloud(100, 12);
    std::vector<Index> all(100);
    for (Index i = 0; i < 100; ++i) all[i] = i;
    double diam = 0.0, s = 0.0;
    for (Index a = 0; a < 100; ++a)
        for (Index b = 0; b < 100; ++b) diam = std::max(diam, (mu.point(a) - mu.point(b)).norm());
    for (Index a = 0; a < 100; ++a)
        for (Index b = 0; b < 100; ++b)
            if (a != b) s += mu.weight(a) * mu.weight(b);  // n = 1: |x-y|^0 = 1
    CHECK(w_energy(mu, all) == doctest::Approx(s / diam).epsilon(1e-12));
}

TEST_CASE("cotlar sides")
{
    DiscreteMeasure one = atoms({{0.5, 0.5}});
    CotlarSides s1 = cotlar_sides(one, pv_riesz_at_atoms(one), Eigen::Vector2d(0.5, 0.5), 0.01, 1.0);
    CHECK(s1.lhs == 0.0);

    for (auto [kind, depth] : {std::pair<const char*, int>{"segment", 8}, {"cantor4corner", 3}}) {
        DiscreteMeasure mu = generate(kind, depth);
        AtomField pv = pv_riesz_at_atoms(mu);
        const double r0 = 4 * min_gap(mu);
        double fit = 0.0;
        for (Index i = 0; i < mu.size(); i += 7) {
            CotlarSides s = cotlar_sides(mu, pv, mu.point(i), r0, 4.0);
            CHECK(s.lhs >= 0.0);
            CHECK(s.rhs >= 4.0);
            if (s.hypotheses_met) fit = std::max(fit, s.lhs / s.rhs);
        }
        MESSAGE(std::string(kind) << " fitted Cotlar constant " << fit);
        CHECK(std::isfinite(fit));
    }
}

TEST_CASE("haar differences")
{
    Lattice lat = build_lattice(generate("cantor4corner", 3), Params{}, 4);
    const DiscreteMeasure& mu = lat.measure();
    const Index N = mu.size();
    CHECK(haar_delta(lat, AtomField::Constant(N, 2, 3.0), lat.root()).norm() <= 1e-14);

    // f = indicator of one child S0 of the root
    const Cube& root = lat.cube(lat.root());
    REQUIRE(root.children.size() >= 2);
    const CubeId s0 = root.children.front();
    AtomField f = AtomField::Zero(N, 1);
    for (Index a : lat.cube(s0).atoms) f(a, 0) = 1.0;
    AtomField dq = haar_delta(lat, f, lat.root());
    const double frac = lat.cube(s0).mass / root.mass;
    for (Index a = 0; a < N; ++a) {
        const double expect = (lat.cell_of(a, lat.k0() + 1) == s0 ? 1.0 : 0.0) - frac;
        CHECK(dq(a, 0) == doctest::Approx(expect));
    }

    // full Gram matrix of the differences of a random field
    AtomField g = random_field(N, 2, 3);
    std::vector<AtomField> parts;
    for (CubeId q = 0; q < static_cast<CubeId>(lat.size()); ++q)
        if (!lat.cube(q).children.empty()) parts.push_back(haar_delta(lat, g, q));
    for (std::size_t i = 0; i < parts.size(); ++i)
        for (std::size_t j = i + 1; j < parts.size(); ++j) {
            const double scale = std::sqrt(l2_inner(mu, parts[i], parts[i]) * l2_inner(mu, parts[j], parts[j]));
            CHECK(std::abs(l2_inner(mu, parts[i], parts[j])) <= 1e-10 * std::max(scale, 1e-300));
        }
}

TEST_CASE("haar energy identity")
{
    for (const char* kind : {"segment", "lipschitz_graph", "cantor4corner"}) {
        Lattice lat = build_lattice(generate(kind, kind[0] == 'c' ? 3 : 7), Params{}, 4);
        for (int m : {1, 2}) {
            AtomField f = random_field(lat.measure().size(), m, 5 + m);
            HaarEnergy e = haar_energy(lat, f);
            CHECK(std::abs(e.haar_sum + e.residual - e.centered_norm) <= 1e-9 * e.centered_norm);
            // against the explicit differences
            double direct = 0.0;
            for (CubeId q = 0; q < static_cast<CubeId>(lat.size()); ++q) {
                AtomField d = haar_delta(lat, f, q);
                direct += l2_inner(lat.measure(), d, d);
            }
            CHECK(e.haar_sum == doctest::Approx(direct).epsilon(1e-10));
        }
        CHECK(haar_energy(lat, AtomField::Ones(lat.measure().size(), 2)).haar_sum <= 1e-20);
    }
}

TEST_CASE("coarse haar")
{
    Lattice lat = build_lattice(generate("segment", 7), Params{}, 4);
    const DiscreteMeasure& mu = lat.measure();
    const CubeId q = lat.generation(lat.k0() + 2)[1];
    const CubeId s = lat.cube(q).children.front();
    CHECK(coarse_haar(lat, AtomField::Constant(mu.size(), 1, 2.0), q, {s}).norm() <= 1e-14);
    CHECK(coarse_haar(lat, random_field(mu.size(), 1, 1), q, {}).norm() == 0.0);

    AtomField f = random_field(mu.size(), 1, 2);
    double ms = 0.0, ws = 0.0, m2 = 0.0, w2 = 0.0;
    for (Index a : lat.cube(s).atoms) {
        ms += mu.weight(a) * f(a, 0);
        ws += mu.weight(a);
    }
    for (Index a : lambda_dilate(lat, q, 2.0).atoms) {
        m2 += mu.weight(a) * f(a, 0);
        w2 += mu.weight(a);
    }
    AtomField out = coarse_haar(lat, f, q, {s});
    for (Index a : lat.cube(s).atoms) CHECK(out(a, 0) == doctest::Approx(ms / ws - m2 / w2));
    CHECK(out.cwiseAbs().sum() == doctest::Approx(std::abs(ms / ws - m2 / w2) * lat.cube(s).atoms.size()));
}

TEST_CASE("localized riesz")
{
    Lattice lat = build_lattice(generate("cantor4corner", 3), Params{}, 4);
    const DiscreteMeasure& mu = lat.measure();
    const CubeId r = lat.root();
    CHECK(localized_riesz(lat, {r}, r).norm() == 0.0);
    CHECK(localized_riesz(lat, {}, r).norm() == 0.0);

    const auto& g = lat.generation(lat.k0() + 2);
    REQUIRE(g.size() >= 2);
    const std::vector<CubeId> fam{g.front(), g.back()};
    AtomField out = localized_riesz(lat, fam, r);
    const Dilate two_r = lambda_dilate(lat, r, 2.0);
    for (CubeId q : fam) {
        const Dilate two_q = lambda_dilate(lat, q, 2.0);
        for (Index a : lat.cube(q).atoms) {
            Eigen::Vector2d s = Eigen::Vector2d::Zero();
            for (Index y : two_r.atoms) {
                if (std::binary_search(two_q.atoms.begin(), two_q.atoms.end(), y)) continue;
                const Eigen::Vector2d u = mu.point(a) - mu.point(y);
                s += mu.weight(y) * u / u.squaredNorm();
            }
            CHECK((out.row(a).transpose() - s).norm() <= 1e-12 * std::max(1.0, s.norm()));
        }
    }
    CHECK_THROWS_AS(localized_riesz(lat, {r, g.front()}, r), std::invalid_argument);
}

TEST_CASE("tree backend")
{
    DiscreteMeasure mu = random_cloud(10000, 21);
    std::vector<Index> self(mu.size());
    for (Index i = 0; i < mu.size(); ++i) self[i] = i;
    AtomField direct = riesz_field(mu, mu.points(), self, Backend::direct, 1e-3);
    for (double acc : {1e-2, 1e-3}) {
        AtomField tree = riesz_field(mu, mu.points(), self, Backend::tree, acc);
        CHECK((tree - direct).norm() <= acc * direct.norm());
    }

    // one atom: exact
    DiscreteMeasure one = atoms({{0.2, 0.4}});
    Points t(2, 1);
    t << 3.0, -1.0;
    AtomField a = riesz_field(one, t, {}, Backend::tree, 1e-3);
    AtomField b = riesz_field(one, t, {}, Backend::direct, 1e-3);
    CHECK((a - b).norm() <= 1e-15 * b.norm());

    // a far cluster behaves like its mass at the center of mass, with a
    // second-order remainder
    Points cl(2, 50);
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(-0.01, 0.01);
    for (Index i = 0; i < 50; ++i) cl.col(i) << 0.5 + u(rng), 0.5 + u(rng);
    DiscreteMeasure cluster(cl, Eigen::VectorXd::Constant(50, 0.02));
    const Eigen::Vector2d com = cl.rowwise().mean();
    for (double dist : {1.0, 10.0}) {
        Points x(2, 1);
        x << 0.5 + dist, 0.5;
        AtomField exact = riesz_field(cluster, x, {}, Backend::direct, 1e-3);
        const Eigen::Vector2d mono = riesz_kernel(x.col(0), com, 1);
        const double rel = (exact.row(0).transpose() - mono).norm() / mono.norm();
        CHECK(rel <= 3.0 * std::pow(0.02 / dist, 2));
    }
    CHECK_THROWS(riesz_field(mu, mu.points(), self, Backend::tree, 0.5));
}
