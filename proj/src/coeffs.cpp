#include "gmt/coeffs.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <sstream>

namespace gmt {

double theta(const DiscreteMeasure& mu, const Ball<>& b)
{
    return mass_in_ball(mu, b) / std::pow(b.radius, mu.n());
}

double beta2(const DiscreteMeasure& mu, const Ball<>& b)
{
    std::vector<Index> idx = mu.index().indices_in_ball(b.center, b.radius);
    if (idx.empty()) return 0.0;
    Points pts(mu.dim(), static_cast<Index>(idx.size()));
    Eigen::VectorXd w(static_cast<Index>(idx.size()));
    for (std::size_t i = 0; i < idx.size(); ++i) {
        pts.col(i) = mu.point(idx[i]);
        w(i) = mu.weight(idx[i]);
    }
    return beta2_cloud(pts, w, b.radius, mu.n());
}

int theta_bucket(double t, double A0, int n)
{
    const double base = std::pow(A0, n);
    int e = static_cast<int>(std::floor(std::log(t) / std::log(base)));
    while (std::pow(base, e + 1) <= t) ++e;
    while (std::pow(base, e) > t) --e;
    return e;
}

double p_coeff(const Lattice& lat, CubeId q)
{
    const int n = lat.n();
    const double lq = lat.side(q);
    double sum = 0.0;
    for (CubeId r = q; r >= 0; r = lat.cube(r).parent) {
        const double m2 = lat.measure().index().mass_in_ball(lat.cube(r).center, lat.radius_2BQ(r));
        sum += lq / std::pow(lat.side(r), n + 1) * m2;
    }
    return sum;
}

bool is_p_doubling(const Lattice& lat, CubeId q)
{
    const double m2 = lat.measure().index().mass_in_ball(lat.cube(q).center, lat.radius_2BQ(q));
    return p_coeff(lat, q) <= lat.params().cd(lat.n()) * m2 / std::pow(lat.side(q), lat.n());
}

double CoeffTable::sigma(const std::vector<CubeId>& family, double p) const
{
    double s = 0.0;
    for (CubeId q : family) s += std::pow(rec_[q].BigTheta, p) * lat_->cube(q).mass;
    return s;
}

CoeffTable compute_coeffs(const Lattice& lat)
{
    const DiscreteMeasure& mu = lat.measure();
    const Params& p = lat.params();
    const int n = lat.n();
    const double alpha = p.alpha;
    std::vector<CubeCoeffs> rec(lat.size());
    std::vector<double> ancestor_sum(lat.size(), 0.0);

    // Cubes are numbered generation by generation, so parents precede children.
    for (CubeId q = 0; q < static_cast<CubeId>(lat.size()); ++q) {
        const Cube& c = lat.cube(q);
        CubeCoeffs& r = rec[q];
        const double l = lat.side(q);
        const double m2 = mu.index().mass_in_ball(c.center, lat.radius_2BQ(q));
        r.theta2B = m2 / std::pow(l, n);
        r.theta_exp = theta_bucket(r.theta2B, p.A0, n);
        r.BigTheta = std::pow(p.A0, r.theta_exp * n);
        ancestor_sum[q] = m2 / std::pow(l, n + 1) + (c.parent >= 0 ? ancestor_sum[c.parent] : 0.0);
        r.P = l * ancestor_sum[q];
        r.is_db = c.is_db;
        r.is_pdoubling = r.P <= p.cd(n) * r.theta2B;
        r.beta2_2B = beta2(mu, Ball<>{c.center, lat.radius_2BQ(q)});
    }

    std::vector<double> sub(lat.size(), 0.0);
    for (CubeId q = static_cast<CubeId>(lat.size()) - 1; q >= 0; --q) {
        const Cube& c = lat.cube(q);
        sub[q] += std::pow(lat.side(q), alpha) * rec[q].BigTheta * rec[q].BigTheta * c.mass;
        if (c.parent >= 0) sub[c.parent] += sub[q];
    }
    CoeffTable table(lat, std::move(rec), std::move(sub));

    std::vector<CubeCoeffs> filled(lat.size());
    for (CubeId q = 0; q < static_cast<CubeId>(lat.size()); ++q) filled[q] = table[q];
    for (CubeId q = 0; q < static_cast<CubeId>(lat.size()); ++q) {
        filled[q].E4Q = wolff_energy_cube(table, q, 4.0, alpha);
        filled[q].is_HE = filled[q].E4Q >= p.M0 * p.M0 * filled[q].BigTheta * filled[q].BigTheta * lat.cube(q).mass;
    }
    std::vector<double> sub_copy(lat.size());
    for (CubeId q = 0; q < static_cast<CubeId>(lat.size()); ++q) sub_copy[q] = table.subtree_energy(q);
    return CoeffTable(lat, std::move(filled), std::move(sub_copy));
}

std::vector<CubeId> maximal_family(const Lattice& lat, const std::vector<CubeId>& tops,
                                   const std::function<bool(CubeId)>& pred)
{
    std::vector<CubeId> out;
    std::vector<CubeId> stack(tops.rbegin(), tops.rend());
    while (!stack.empty()) {
        CubeId q = stack.back();
        stack.pop_back();
        if (pred(q)) {
            out.push_back(q);
            continue;
        }
        const auto& ch = lat.cube(q).children;
        for (auto it = ch.rbegin(); it != ch.rend(); ++it) stack.push_back(*it);
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<CubeId> hd_k(const CoeffTable& c, CubeId q, int k)
{
    const Lattice& lat = c.lattice();
    const int g = lat.cube(q).gen;
    if (g >= lat.kmax()) return {};
    const int thr = c[q].theta_exp + k;
    return maximal_family(lat, lat.generation(g + 1), [&](CubeId p) { return c[p].theta_exp >= thr; });
}

namespace {

DiscreteMeasure restrict_to(const DiscreteMeasure& mu, const Ball<>& b)
{
    std::vector<Index> idx = mu.index().indices_in_ball(b.center, b.radius);
    Points pts(mu.dim(), static_cast<Index>(idx.size()));
    Eigen::VectorXd w(static_cast<Index>(idx.size()));
    for (std::size_t i = 0; i < idx.size(); ++i) {
        pts.col(i) = mu.point(idx[i]);
        w(i) = mu.weight(idx[i]);
    }
    return DiscreteMeasure(std::move(pts), std::move(w), mu.n());
}

double full_diameter(const DiscreteMeasure& mu)
{
    std::vector<Index> all(mu.size());
    for (Index i = 0; i < mu.size(); ++i) all[i] = i;
    return diameter(mu, all);
}

}  // namespace

double wolff_energy_ball(const DiscreteMeasure& mu, const Ball<>& b, double alpha)
{
    const DiscreteMeasure sub = restrict_to(mu, b);
    if (sub.size() < 2) return 0.0;
    const double gap = min_gap(sub);
    if (!std::isfinite(gap)) return 0.0;
    const double diam = full_diameter(sub);
    const int n = mu.n();
    // m(r)^2 r^{beta-1} integrates in closed form between consecutive distances.
    const double beta = alpha - 2.0 * n;
    auto prim = [&](double r) { return std::pow(r, beta) / beta; };
    double e = 0.0;
    std::vector<std::pair<double, double>> dw(sub.size());
    for (Index x = 0; x < sub.size(); ++x) {
        for (Index y = 0; y < sub.size(); ++y) dw[y] = {(sub.point(x) - sub.point(y)).norm(), sub.weight(y)};
        std::sort(dw.begin(), dw.end());
        double m = 0.0, inner = 0.0;
        std::size_t k = 0;
        for (; k < dw.size() && dw[k].first <= gap; ++k) m += dw[k].second;
        double lo = gap;
        while (lo < diam) {
            const double hi = k < dw.size() ? std::min(dw[k].first, diam) : diam;
            if (hi > lo) inner += m * m * (prim(hi) - prim(lo));
            lo = hi;
            for (; k < dw.size() && dw[k].first <= lo; ++k) m += dw[k].second;
        }
        e += sub.weight(x) * inner;
    }
    return e;
}

double wolff_energy_ball_dyadic(const DiscreteMeasure& mu, const Ball<>& b, double alpha, double ratio)
{
    const DiscreteMeasure sub = restrict_to(mu, b);
    if (sub.size() < 2) return 0.0;
    const double gap = min_gap(sub);
    if (!std::isfinite(gap)) return 0.0;
    const double diam = full_diameter(sub);
    const int n = mu.n();
    std::vector<double> radii;
    for (double r = diam; r >= gap; r /= ratio) radii.push_back(r);
    double e = 0.0;
    for (Index x = 0; x < sub.size(); ++x) {
        double inner = 0.0;
        for (double r : radii) {
            const double th = sub.index().mass_in_ball(sub.point(x), r) / std::pow(r, n);
            inner += std::pow(r, alpha) * th * th;
        }
        e += sub.weight(x) * inner;
    }
    return e * std::log(ratio);
}

double wolff_energy_cube(const CoeffTable& c, CubeId q, double lambda, double alpha)
{
    const Lattice& lat = c.lattice();
    const Dilate d = lambda_dilate(lat, q, lambda);
    double s = 0.0;
    if (alpha == lat.params().alpha) {
        for (CubeId p : d.cells) s += c.subtree_energy(p);
        return s / std::pow(lat.side(q), alpha);
    }
    for (CubeId p : descendants_of(lat, d.cells))
        s += std::pow(lat.side(p) / lat.side(q), alpha) * c[p].BigTheta * c[p].BigTheta * lat.cube(p).mass;
    return s;
}

bool is_high_energy(const CoeffTable& c, CubeId q)
{
    const double M0 = c.lattice().params().M0;
    return c[q].E4Q >= M0 * M0 * c[q].BigTheta * c[q].BigTheta * c.lattice().cube(q).mass;
}

double q_reg_coeff(const Lattice& lat, const std::vector<CubeId>& family, CubeId q)
{
    const int n = lat.n();
    double s = 0.0;
    for (CubeId p : family) {
        const double D = lat.side(p) + cube_distance(lat, p, q) + lat.side(q);
        s += lat.side(p) / std::pow(D, n + 1) * lat.cube(p).mass;
    }
    return s;
}

double beta_wolff_sum(const CoeffTable& c, int max_gen)
{
    const Lattice& lat = c.lattice();
    double s = 0.0;
    for (CubeId q = 0; q < static_cast<CubeId>(lat.size()); ++q) {
        if (max_gen >= 0 && lat.cube(q).gen > max_gen) continue;
        s += c[q].beta2_2B * c[q].beta2_2B * c[q].BigTheta * lat.cube(q).mass;
    }
    return s;
}

void write_coeffs_csv(const CoeffTable& c, std::ostream& out)
{
    const Lattice& lat = c.lattice();
    std::ostringstream s;
    s.precision(17);
    s << "id,gen,n_atoms,mass,r,side,theta2B,BigTheta,P,beta2_2B,E4Q,is_db,is_pdoubling,is_HE\n";
    for (CubeId q = 0; q < static_cast<CubeId>(lat.size()); ++q) {
        const Cube& cb = lat.cube(q);
        const CubeCoeffs& r = c[q];
        s << q << ',' << cb.gen << ',' << cb.atoms.size() << ',' << cb.mass << ',' << cb.r << ',' << lat.side(q)
          << ',' << r.theta2B << ',' << r.BigTheta << ',' << r.P << ',' << r.beta2_2B << ',' << r.E4Q << ','
          << r.is_db << ',' << r.is_pdoubling << ',' << r.is_HE << '\n';
    }
    out << s.str();
}

}  // namespace gmt
