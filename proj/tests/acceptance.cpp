// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.
#include "gmt/approx.hpp"
#include "gmt/harness.hpp"

#include <Eigen/SVD>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <vector>

using namespace gmt;

namespace {

using Clock = std::chrono::steady_clock;
double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Instance {
    std::string name;
    Lattice lat;
    CoeffTable c;
    CoronaForest f;
    Instance(std::string nm, const DiscreteMeasure& mu)
        : name(std::move(nm)), lat(build_lattice(mu, Params{}, 20)), c(compute_coeffs(lat)), f(build_top(c))
    {
    }
    Instance(const Instance&) = delete;
};

// The measures every harness-wide criterion runs on.
const std::vector<std::pair<std::string, int>> kHarness = {
    {"segment", 7}, {"lipschitz_graph", 7}, {"plane_patch", 4}, {"cantor4corner", 6}, {"cantor_line", 6}};

std::vector<std::unique_ptr<Instance>> harness_instances()
{
    std::vector<std::unique_ptr<Instance>> out;
    for (const auto& [k, d] : kHarness)
        out.push_back(std::make_unique<Instance>(k + "_d" + std::to_string(d), generate(k, d)));
    return out;
}

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(double x)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", x);
    return buf;
}

// Weighted total least squares through the thin SVD of the sqrt-weighted cloud.
double beta2_svd(const Points& pts, const Eigen::VectorXd& w, double r, int n)
{
    const Eigen::VectorXd c = pts * w / w.sum();
    Mat<double> A(pts.cols(), pts.rows());
    for (Index i = 0; i < pts.cols(); ++i) A.row(i) = std::sqrt(w(i)) * (pts.col(i) - c).transpose();
    const Eigen::VectorXd s = Eigen::JacobiSVD<Mat<double>>(A).singularValues();
    double resid = 0.0;
    for (Index k = n; k < s.size(); ++k) resid += s(k) * s(k);
    return std::sqrt(resid / std::pow(r, n + 2));
}

double l2_norm(const DiscreteMeasure& mu, const AtomField& f) { return std::sqrt(l2_inner(mu, f, f)); }

Outcome lattice_invariants()
{
    std::vector<std::pair<std::string, int>> runs;
    for (int d = 1; d <= 7; ++d) runs.push_back({"segment", d});
    for (int d = 1; d <= 4; ++d) runs.push_back({"plane_patch", d});
    for (int d = 1; d <= 6; ++d) runs.push_back({"cantor4corner", d});
    long bad = 0;
    double slowest = 0.0;
    for (const auto& [k, d] : runs) {
        const auto t = Clock::now();
        const Lattice lat = build_lattice(generate(k, d), Params{}, 20);
        const LatticeCheck ck = check_lattice(lat);
        slowest = std::max(slowest, seconds_since(t));
        if (!ck.ok()) ++bad;
    }
    return {bad == 0 && slowest < 30.0, std::to_string(runs.size()) + " instances, " + std::to_string(bad) +
                                            " with violations, slowest " + fmt(slowest) + " s (limit 30)"};
}

Outcome beta_oracle()
{
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double worst = 0.0;
    int balls = 0;
    // fewer than d + 1 atoms lie exactly on an n-plane and have no relative error
    // to measure; such balls are redrawn
    for (int cloud = 0; cloud < 20; ++cloud) {
        const int d = 2 + cloud % 2, m = 50 + 450 * cloud / 19;
        Points p(d, m);
        Eigen::VectorXd w(m);
        for (int i = 0; i < m; ++i) {
            for (int k = 0; k < d; ++k) p(k, i) = u(rng);
            w(i) = 0.1 + u(rng);
        }
        const DiscreteMeasure mu(p, w, d - 1);
        for (int b = 0; b < 50;) {
            Eigen::VectorXd x(d);
            for (int k = 0; k < d; ++k) x(k) = u(rng);
            const double r = 0.15 + 0.6 * u(rng);
            std::vector<Index> in;
            for (Index i = 0; i < m; ++i)
                if ((p.col(i) - x).norm() <= r) in.push_back(i);
            if (static_cast<int>(in.size()) <= d) continue;
            Points q(d, in.size());
            Eigen::VectorXd wq(in.size());
            for (std::size_t i = 0; i < in.size(); ++i) {
                q.col(i) = p.col(in[i]);
                wq(i) = w(in[i]);
            }
            const double ref = beta2_svd(q, wq, r, d - 1);
            worst = std::max(worst, std::abs(beta2(mu, Ball<>{x, r}) - ref) / ref);
            ++b;
            ++balls;
        }
    }
    return {worst <= 1e-10, std::to_string(balls) + " balls, max relative error " + fmt(worst) + " (limit 1e-10)"};
}

Outcome flat_null()
{
    double worst_beta = 0.0, worst_sum = 0.0;
    for (const auto& [k, d] : std::vector<std::pair<std::string, int>>{{"segment", 7}, {"plane_patch", 4}}) {
        const Lattice lat = build_lattice(generate(k, d), Params{}, 20);
        const CoeffTable c = compute_coeffs(lat);
        std::vector<CubeId> all(lat.size());
        for (CubeId q = 0; q < static_cast<CubeId>(lat.size()); ++q) {
            all[q] = q;
            worst_beta = std::max(worst_beta, c[q].beta2_2B);
        }
        worst_sum = std::max(worst_sum, beta_wolff_sum(c) / c.sigma(all));
    }
    return {worst_beta <= 1e-10 && worst_sum <= 1e-8,
            "max beta2(2B) " + fmt(worst_beta) + " (limit 1e-10), beta-Wolff sum / sigma " + fmt(worst_sum) +
                " (limit 1e-8)"};
}

Outcome haar_orthogonality(const std::vector<std::unique_ptr<Instance>>& inst)
{
    std::mt19937_64 rng(4);
    std::normal_distribution<double> g;
    double worst_id = 0.0, worst_c = 0.0;
    int fields = 0;
    for (const auto& in : inst) {
        const DiscreteMeasure& mu = in->lat.measure();
        std::vector<std::pair<CubeId, std::vector<CubeId>>> fam;
        for (CubeId q = 0; q < static_cast<CubeId>(in->lat.size()); ++q)
            if (in->c[q].is_pdoubling) fam.push_back({q, parent_neighbors(in->lat, q)});
        for (int t = 0; t < 10; ++t, ++fields) {
            AtomField f(mu.size(), t % 2 ? 1 : mu.dim());
            for (Index i = 0; i < f.size(); ++i) f.data()[i] = g(rng);
            const HaarEnergy he = haar_energy(in->lat, f);
            worst_id = std::max(worst_id, std::abs(he.haar_sum + he.residual - he.centered_norm) / he.centered_norm);
            double s = 0.0;
            for (const auto& [q, A] : fam) {
                const double v = l2_norm(mu, coarse_haar(in->lat, f, q, A));
                s += v * v;
            }
            const double nf = l2_norm(mu, f);
            worst_c = std::max(worst_c, s / (nf * nf));
        }
    }
    return {worst_id <= 1e-9 && worst_c <= 100.0, std::to_string(fields) + " fields, identity error " + fmt(worst_id) +
                                                       " (limit 1e-9), coarse constant " + fmt(worst_c) +
                                                       " (limit 100)"};
}

Outcome antisymmetry(const std::vector<std::unique_ptr<Instance>>& inst)
{
    double worst = 0.0;
    for (const auto& in : inst) {
        const DiscreteMeasure& mu = in->lat.measure();
        const AtomField f = pv_riesz_at_atoms(mu);
        const double drift = (mu.weights().transpose() * f).norm();
        const double scale = mu.total_mass() * std::sqrt(f.rowwise().squaredNorm().maxCoeff());
        worst = std::max(worst, drift / scale);
    }
    return {worst <= 1e-10, "max |sum w R| / (sum w max|R|) " + fmt(worst) + " (limit 1e-10)"};
}

Outcome suppressed_envelopes()
{
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::ostringstream log;
    bool finite = true;
    double worst = 0.0;
    for (int n : {1, 2}) {
        const int d = n + 1;
        double cfit = 0.0, gfit = 0.0;
        for (int t = 0; t < 10000; ++t) {
            Eigen::VectorXd c(d), x(d), y(d);
            for (int k = 0; k < d; ++k) {
                c(k) = u(rng);
                x(k) = u(rng);
                y(k) = u(rng);
            }
            const SuppressionFn phi =
                SuppressionFn::smooth_distance(c, 0.5 + 0.5 * std::abs(u(rng)), 0.05 + std::abs(u(rng)));
            const double px = phi(x), py = phi(y);
            const double D = (x - y).norm() + px + py;
            cfit = std::max(cfit, suppressed_kernel(x, y, px, py, n).norm() * std::pow(D, n));
            const auto [jx, jy] = suppressed_kernel_jacobians<double>(x, y, px, py, phi.grad(x), phi.grad(y), n);
            gfit = std::max(gfit, (jx.norm() + jy.norm()) * std::pow(D, n + 1));
            const double h = 1e-6, scale = std::max(1.0, jx.norm() + jy.norm());
            for (int k = 0; k < d; ++k) {
                const Eigen::VectorXd e = Eigen::VectorXd::Unit(d, k) * h;
                const Eigen::VectorXd xp = x + e, xm = x - e, yp = y + e, ym = y - e;
                const Eigen::VectorXd fx =
                    (suppressed_kernel(xp, y, phi(xp), py, n) - suppressed_kernel(xm, y, phi(xm), py, n)) / (2 * h);
                const Eigen::VectorXd fy =
                    (suppressed_kernel(x, yp, px, phi(yp), n) - suppressed_kernel(x, ym, px, phi(ym), n)) / (2 * h);
                worst = std::max({worst, (fx - jx.col(k)).norm() / scale, (fy - jy.col(k)).norm() / scale});
            }
        }
        finite = finite && std::isfinite(cfit) && std::isfinite(gfit);
        log << "n=" << n << " |K| constant " << fmt(cfit) << ", |grad K| constant " << fmt(gfit) << "; ";
    }
    return {finite && worst <= 1e-6, log.str() + "gradient error " + fmt(worst) + " (limit 1e-6)"};
}

// Unit segment of m atoms: weight 1 on [lo, hi) of the index range, light elsewhere.
DiscreteMeasure weighted_segment(int m, int lo, int hi, double light)
{
    Points p = Points::Zero(2, m);
    Eigen::VectorXd w(m);
    for (int i = 0; i < m; ++i) {
        p(0, i) = (i + 0.5) / m;
        w(i) = i >= lo && i < hi ? 1.0 : light;
    }
    return DiscreteMeasure(p, w, 1);
}

// The generators are P-doubling everywhere, so two segments with a heavy
// core and a light remainder supply the non-P-doubling chains.
std::vector<std::unique_ptr<Instance>> chain_witnesses()
{
    std::vector<std::unique_ptr<Instance>> out;
    out.push_back(std::make_unique<Instance>("heavy_end", weighted_segment(256, 0, 32, 1e-6)));
    out.push_back(std::make_unique<Instance>("heavy_core", weighted_segment(512, 240, 272, 1e-5)));
    return out;
}

Outcome chain_decay(const std::vector<std::unique_ptr<Instance>>& inst)
{
    const auto witnesses = chain_witnesses();
    std::ostringstream log;
    long bad = 0;
    auto scan = [&](const Instance& in) {
        const double A0 = in.lat.params().A0;
        long links = 0;
        for (CubeId q0 = 0; q0 < static_cast<CubeId>(in.lat.size()); ++q0) {
            std::vector<std::pair<CubeId, int>> stack;
            for (CubeId s : in.lat.cube(q0).children)
                if (!in.c[s].is_pdoubling) stack.push_back({s, 1});
            while (!stack.empty()) {
                const auto [q, m] = stack.back();
                stack.pop_back();
                ++links;
                if (in.c[q].theta2B > in.c[q0].P * std::pow(A0, -m / 2.0) * (1 + 1e-12)) ++bad;
                for (CubeId s : in.lat.cube(q).children)
                    if (!in.c[s].is_pdoubling) stack.push_back({s, m + 1});
            }
        }
        return links;
    };
    long harness = 0;
    for (const auto& in : inst) harness += scan(*in);
    log << harness << " chain links on the generators";
    for (const auto& in : witnesses) log << ", " << scan(*in) << " on " << in->name;
    return {bad == 0, log.str() + ", " + std::to_string(bad) + " violations"};
}

bool pairwise_disjoint(const std::vector<CubeBall>& b)
{
    for (std::size_t i = 0; i < b.size(); ++i)
        for (std::size_t j = i + 1; j < b.size(); ++j)
            if (!balls_disjoint(b[i], b[j])) return false;
    return true;
}

Outcome corona_coverage(const std::vector<std::unique_ptr<Instance>>& inst)
{
    long uncovered = 0, overlap = 0, families = 0, bad_families = 0;
    for (const auto& in : inst) {
        const CoverageCheck ck = check_coverage(in->f);
        uncovered += ck.uncovered;
        overlap += ck.bad_overlap;
        const Lattice& lat = in->lat;
        for (CubeId R : in->f.top()) {
            if (!in->f.annotation(R).is_mdw) continue;
            for (const auto& [q, gh] : gh_and_generations(in->f, R, 3).gh) {
                std::vector<CubeBall> b;
                for (CubeId p : gh) b.push_back({p, lat.cube(p).center, enlarged_radius(lat, p, select_h(in->f, p).h, 2)});
                ++families;
                if (!pairwise_disjoint(b)) ++bad_families;
            }
        }
        for (const Layer& L : layers(in->f)) {
            std::vector<CubeBall> b;
            for (CubeId p : L.L) b.push_back({p, lat.cube(p).center, enlarged_radius(lat, p, in->f.annotation(p).h, 4)});
            ++families;
            if (!pairwise_disjoint(b)) ++bad_families;
        }
    }
    return {uncovered + overlap + bad_families == 0,
            "uncovered " + std::to_string(uncovered) + ", bad overlaps " + std::to_string(overlap) + ", " +
                std::to_string(bad_families) + " of " + std::to_string(families) + " GH/layer families intersecting"};
}

Outcome spread_conservation(const std::vector<std::unique_ptr<Instance>>& inst)
{
    long trees = 0, range = 0;
    double cover = 0.0, mass = 0.0;
    for (const auto& in : inst)
        for (CubeId R : in->f.top()) {
            const SpreadTree t = build_spread_tree(in->f, in->lat.root(), R);
            const SpreadCheck ck = check_spread_tree(in->lat, t, 100, 1000 + trees++);
            range += ck.range_violations;
            cover = std::max(cover, ck.max_cover_error);
            const double mu_r = in->lat.cube(R).mass;
            mass = std::max(mass, std::abs(eta_disks(in->lat, t).total_mass() - mu_r) / mu_r);
        }
    return {range == 0 && cover <= 1e-12 && mass <= 1e-12,
            std::to_string(trees) + " trees, cover error " + fmt(cover) + " (limit 1e-12), s-range violations " +
                std::to_string(range) + ", disk-eta mass error " + fmt(mass) + " (limit 1e-12)"};
}

Outcome ad_regularity(const std::vector<std::unique_ptr<Instance>>& inst)
{
    double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
    std::ostringstream log;
    for (const auto& in : inst) {
        const CubeId R0 = in->lat.root();
        for (CubeId R : in->f.top()) {
            const ApproxMeasure eta = eta_disks(in->lat, build_spread_tree(in->f, R0, R));
            const AdRatios ad = check_ad_regular(eta, in->c[R0].BigTheta);
            lo = std::min(lo, ad.c_low);
            hi = std::max(hi, ad.c_high);
            if (R == R0) log << in->name << " [" << fmt(ad.c_low) << ", " << fmt(ad.c_high) << "] ";
        }
    }
    return {lo > 0.01 && hi < 100.0,
            log.str() + "; c_low " + fmt(lo) + " (limit > 0.01), c_high " + fmt(hi) + " (limit < 100)"};
}

// Coefficient of determination of the least-squares line through (x, y).
std::pair<double, double> linear_fit(const Eigen::VectorXd& x, const Eigen::VectorXd& y)
{
    Mat<double> A(x.size(), 2);
    A << x, Eigen::VectorXd::Ones(x.size());
    const Eigen::Vector2d coef = A.colPivHouseholderQr().solve(y);
    const double ss_res = (A * coef - y).squaredNorm();
    const double ss_tot = (y.array() - y.mean()).square().sum();
    return {coef(0), 1.0 - ss_res / ss_tot};
}

Outcome equivalence_scaling()
{
    const auto t0 = Clock::now();
    RunOptions opt;
    opt.backend = Backend::tree;
    double C = 1.0, plateau = 0.0, r2 = 1.0, slope = std::numeric_limits<double>::infinity();
    bool ok = true;
    auto band = [&](const ExperimentReport& r) {
        ok = ok && r.ok();
        C = std::max({C, r.ratio_haar, 1.0 / r.ratio_haar});
    };
    for (const char* kind : {"segment", "lipschitz_graph"}) {
        std::vector<ExperimentReport> reps;
        for (int d = 4; d <= 7; ++d) band(reps.emplace_back(verify_equivalence(kind, d, opt)));
        plateau = std::max({plateau, reps[3].lhs_haar / reps[2].lhs_haar, reps[3].rhs_cubes / reps[2].rhs_cubes});
    }
    Eigen::VectorXd k(5), lhs(5), rhs(5);
    for (int d = 2; d <= 6; ++d) {
        const ExperimentReport r = verify_equivalence("cantor4corner", d, opt);
        band(r);
        k(d - 2) = d;
        lhs(d - 2) = r.lhs_haar;
        rhs(d - 2) = r.rhs_cubes;
    }
    for (const Eigen::VectorXd* y : {&lhs, &rhs}) {
        const auto [s, q] = linear_fit(k, *y);
        slope = std::min(slope, s);
        r2 = std::min(r2, q);
    }
    const double secs = seconds_since(t0);
    return {ok && C <= 50 && plateau <= 1.25 && r2 >= 0.95 && slope > 0 && secs <= 300,
            "band C " + fmt(C) + " (limit 50), plateau " + fmt(plateau) + " (limit 1.25), cantor R^2 " + fmt(r2) +
                " (limit 0.95), min slope " + fmt(slope) + ", " + fmt(secs) + " s (limit 300)"};
}

Outcome tree_performance()
{
    const Index N = 100000, S = 1000;
    std::mt19937_64 rng(12);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Points p(2, N);
    Eigen::VectorXd w(N);
    for (Index i = 0; i < N; ++i) {
        p.col(i) << u(rng), u(rng);
        w(i) = (0.5 + u(rng)) / N;
    }
    const DiscreteMeasure mu(p, w, 1);
    std::vector<Index> all(N), sample(S);
    for (Index i = 0; i < N; ++i) all[i] = i;
    std::uniform_int_distribution<Index> pick(0, N - 1);
    Points targets(2, S);
    for (Index s = 0; s < S; ++s) {
        sample[s] = pick(rng);
        targets.col(s) = p.col(sample[s]);
    }

    auto t = Clock::now();
    const AtomField tree = riesz_field(mu, p, all, Backend::tree, 1e-3);
    const double t_tree = seconds_since(t);
    t = Clock::now();
    const AtomField direct = riesz_field(mu, targets, sample, Backend::direct, 1e-3);
    // direct cost is the same for every target, so the full run scales linearly
    const double t_direct = seconds_since(t) * static_cast<double>(N) / S;

    AtomField tree_s(S, tree.cols());
    for (Index s = 0; s < S; ++s) tree_s.row(s) = tree.row(sample[s]);
    const double err = (tree_s - direct).norm() / direct.norm();
    const double speedup = t_direct / t_tree;
    return {err <= 1e-3 && speedup >= 10.0, "relative l2 error " + fmt(err) + " (limit 1e-3), tree " + fmt(t_tree) +
                                                " s, direct " + fmt(t_direct) + " s, speedup " + fmt(speedup) +
                                                " (limit 10)"};
}

}  // namespace

int main()
{
    const auto inst = harness_instances();
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"lattice invariants", lattice_invariants},
        {"beta2 oracle", beta_oracle},
        {"flat null", flat_null},
        {"haar orthogonality", [&] { return haar_orthogonality(inst); }},
        {"riesz antisymmetry", [&] { return antisymmetry(inst); }},
        {"suppressed kernel envelopes", suppressed_envelopes},
        {"chain decay", [&] { return chain_decay(inst); }},
        {"corona coverage", [&] { return corona_coverage(inst); }},
        {"spread tree conservation", [&] { return spread_conservation(inst); }},
        {"disk-eta AD regularity", [&] { return ad_regularity(inst); }},
        {"equivalence scaling", equivalence_scaling},
        {"tree backend performance", tree_performance},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        if (!o.pass) ++failed;
        std::printf("%s %2zu %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(), o.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
    return failed ? 1 : 0;
}
