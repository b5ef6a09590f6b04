#include "gmt/lattice.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace gmt {

Lattice::Lattice(std::shared_ptr<const DiscreteMeasure> mu, Params p)
    : mu_(std::move(mu)), params_(std::move(p))
{
}

void Lattice::set_generations(int k0, std::vector<Cube> cubes, std::vector<std::vector<CubeId>> gens)
{
    k0_ = k0;
    cubes_ = std::move(cubes);
    gens_ = std::move(gens);
    member_.assign(gens_.size(), std::vector<CubeId>(mu_->size(), -1));
    for (std::size_t g = 0; g < gens_.size(); ++g)
        for (CubeId q : gens_[g])
            for (Index a : cubes_[q].atoms) member_[g][a] = q;
}

int Lattice::finest_resolved_gen() const
{
    for (int k = k0(); k <= kmax(); ++k) {
        bool all = true;
        for (CubeId q : generation(k))
            if (cubes_[q].atoms.size() != 1) all = false;
        if (all) return k;
    }
    return kmax();
}

CubeId Lattice::ancestor(CubeId q, int k) const
{
    while (q >= 0 && cubes_[q].gen > k) q = cubes_[q].parent;
    return (q >= 0 && cubes_[q].gen == k) ? q : -1;
}

bool Lattice::contains(CubeId a, CubeId b) const
{
    if (cubes_[a].gen > cubes_[b].gen) return false;
    return ancestor(b, cubes_[a].gen) == a;
}

namespace {

struct KeyHash {
    std::size_t operator()(const std::vector<long long>& v) const
    {
        std::size_t h = 1469598103934665603ull;
        for (long long x : v) h = (h ^ static_cast<std::size_t>(x)) * 1099511628211ull;
        return h;
    }
};

// Uniform bucket grid over a small set of center points.
class CenterGrid {
public:
    CenterGrid(double h, int dim) : h_(h), dim_(dim) {}

    void insert(int id, const Eigen::Ref<const Eigen::VectorXd>& p) { cells_[key(p)].push_back(id); }

    template<typename F>
    void query(const Eigen::Ref<const Eigen::VectorXd>& p, double radius, F&& f) const
    {
        std::vector<long long> lo(dim_), hi(dim_), cur(dim_);
        for (int k = 0; k < dim_; ++k) {
            lo[k] = static_cast<long long>(std::floor((p(k) - radius) / h_));
            hi[k] = static_cast<long long>(std::floor((p(k) + radius) / h_));
        }
        cur = lo;
        while (true) {
            auto it = cells_.find(cur);
            if (it != cells_.end())
                for (int id : it->second) f(id);
            int k = 0;
            while (k < dim_ && ++cur[k] > hi[k]) {
                cur[k] = lo[k];
                ++k;
            }
            if (k == dim_) break;
        }
    }

private:
    std::vector<long long> key(const Eigen::Ref<const Eigen::VectorXd>& p) const
    {
        std::vector<long long> k(dim_);
        for (int i = 0; i < dim_; ++i) k[i] = static_cast<long long>(std::floor(p(i) / h_));
        return k;
    }

    double h_;
    int dim_;
    std::unordered_map<std::vector<long long>, std::vector<int>, KeyHash> cells_;
};

struct Center {
    Index atom;
    double r, r1, r2;
    bool is_db;
    double mass90;
};

struct Unit {
    std::vector<Index> atoms;
    Index center_atom;
    double radius;  // max distance from the center atom
    CubeId cube;    // -1 for bare atoms
};

class Builder {
public:
    Builder(const DiscreteMeasure& mu, const Params& p) : mu_(mu), p_(p), n_(mu.n()) {}

    double scale(int k) const { return std::pow(p_.A0, -k); }

    // Preferred radius: the first 100^l s (100^l <= C0) whose ball is (100,C0)-doubling.
    std::pair<double, bool> radius_at(Index x, int k) const
    {
        const double s = scale(k);
        for (double f = 1.0; f <= p_.C0; f *= 100.0) {
            double big = mu_.index().mass_in_ball(mu_.point(x), 100.0 * f * s);
            double small = mu_.index().mass_in_ball(mu_.point(x), f * s);
            if (big <= p_.C0 * small) return {f * s, true};
        }
        double r = s;
        bool db = mu_.index().mass_in_ball(mu_.point(x), 100.0 * r) <=
                  p_.C0 * mu_.index().mass_in_ball(mu_.point(x), r);
        return {r, db};
    }

    void prepare_energy(int k0, int kmax)
    {
        k0_ = k0;
        kmax_ = kmax;
        theta_sq_.assign(kmax - k0 + 2, Eigen::VectorXd());
        for (int m = k0 + 1; m <= kmax + 1; ++m) {
            const double rho = 112.0 * p_.C0 * scale(m);
            Eigen::VectorXd t(mu_.size());
            for (Index y = 0; y < mu_.size(); ++y) {
                double th = mu_.index().mass_in_ball(mu_.point(y), rho) / std::pow(rho, n_);
                t(y) = th * th;
            }
            theta_sq_[m - k0] = std::move(t);
        }
    }

    // Multi-scale energy density of atom y seen from generation k.
    double energy_density(Index y, int k) const
    {
        double e = 0.0;
        for (int m = k + 1; m <= kmax_ + 1; ++m)
            e += std::pow(p_.A0, -p_.gamma * (m - k)) * theta_sq_[m - k0_](y);
        return e;
    }

    // Grid argmin over (lo, hi) r of thin-boundary + boundary-energy functionals.
    double search_radius(Index x, int k, double r, double lo, double hi, double ref_factor,
                         const std::vector<double>& taus)
    {
        const double delta = 300.0 * p_.C0 * scale(k + 1);
        const double reach = hi * r + delta;
        struct Hit {
            double d, w, we;
        };
        std::vector<Hit> hits;
        mu_.index().for_each_in_ball(mu_.point(x), reach, [&](Index y) {
            hits.push_back({(mu_.point(y) - mu_.point(x)).norm(), mu_.weight(y), 0.0});
            hits.back().we = hits.back().w * energy_density(y, k);
        });
        std::sort(hits.begin(), hits.end(), [](const Hit& a, const Hit& b) { return a.d < b.d; });
        std::vector<double> d(hits.size()), cw(hits.size() + 1, 0.0), ce(hits.size() + 1, 0.0);
        for (std::size_t i = 0; i < hits.size(); ++i) {
            d[i] = hits[i].d;
            cw[i + 1] = cw[i] + hits[i].w;
            ce[i + 1] = ce[i] + hits[i].we;
        }
        auto band = [&](const std::vector<double>& c, double a, double b) {
            auto i0 = std::lower_bound(d.begin(), d.end(), a) - d.begin();
            auto i1 = std::upper_bound(d.begin(), d.end(), b) - d.begin();
            return c[i1] - c[i0];
        };
        const double ref_mass = mu_.index().mass_in_ball(mu_.point(x), ref_factor * r);
        const double e_total = ce.back();
        const int G = p_.radius_grid;
        double best_t = 0.0, best_v = std::numeric_limits<double>::infinity();
        for (int i = 0; i < G; ++i) {
            double t = r * (lo + (hi - lo) * (i + 0.5) / G);
            double thin = 0.0;
            for (double tau : taus) {
                double m = band(cw, t - tau * r, t + tau * r);
                if (ref_mass > 0.0) thin = std::max(thin, m / (tau * ref_mass));
            }
            double energy = e_total > 0.0 ? band(ce, t - delta, t + delta) / e_total : 0.0;
            double v = thin + energy;
            if (v < best_v) {
                best_v = v;
                best_t = t;
            }
        }
        return best_t;
    }

    Center make_center(Index x, int k)
    {
        auto [r, db] = radius_at(x, k);
        Center c{x, r, 0.0, 0.0, db, mu_.index().mass_in_ball(mu_.point(x), 90.0 * r)};
        c.r1 = search_radius(x, k, r, 1.1, 1.2, 1.3, {0.005, 0.01, 0.02, 0.04});
        c.r2 = search_radius(x, k, r, 25.0, 26.0, 27.0, {0.05, 0.1, 0.2, 0.4});
        return c;
    }

    // Vitali selection: closed balls 5B pairwise disjoint, every atom within 10 r of a center.
    std::vector<Center> select_centers(int k)
    {
        const Index N = mu_.size();
        std::vector<double> rad(N), m90(N);
        for (Index x = 0; x < N; ++x) {
            rad[x] = radius_at(x, k).first;
            m90[x] = mu_.index().mass_in_ball(mu_.point(x), 90.0 * rad[x]);
        }
        std::vector<Index> order(N);
        std::iota(order.begin(), order.end(), Index(0));
        std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
            if (rad[a] != rad[b]) return rad[a] > rad[b];
            if (m90[a] != m90[b]) return m90[a] > m90[b];
            return a < b;
        });
        const double rmax = p_.C0 * scale(k);
        CenterGrid grid(10.0 * rmax, mu_.dim());
        std::vector<Index> chosen;
        for (Index x : order) {
            bool free = true;
            grid.query(mu_.point(x), 5.0 * (rad[x] + rmax), [&](int id) {
                Index y = chosen[id];
                if ((mu_.point(x) - mu_.point(y)).norm() <= 5.0 * (rad[x] + rad[y])) free = false;
            });
            if (!free) continue;
            grid.insert(static_cast<int>(chosen.size()), mu_.point(x));
            chosen.push_back(x);
        }
        std::vector<Center> centers;
        centers.reserve(chosen.size());
        for (Index x : chosen) centers.push_back(make_center(x, k));
        // Priority: larger mass of B(x, 90 r) first.
        std::stable_sort(centers.begin(), centers.end(), [](const Center& a, const Center& b) {
            if (a.mass90 != b.mass90) return a.mass90 > b.mass90;
            return a.atom < b.atom;
        });
        return centers;
    }

    // Groups units (next-generation cells or atoms) under generation-k centers.
    std::vector<std::vector<int>> assign(const std::vector<Center>& centers, const std::vector<Unit>& units,
                                         int k)
    {
        const double rmax = p_.C0 * scale(k);
        CenterGrid grid(28.0 * rmax, mu_.dim());
        for (std::size_t c = 0; c < centers.size(); ++c) grid.insert(static_cast<int>(c), mu_.point(centers[c].atom));

        auto inside28 = [&](const Center& c, const Unit& u) {
            double dc = (mu_.point(c.atom) - mu_.point(u.center_atom)).norm();
            double R = 28.0 * c.r;
            if (dc + u.radius <= R) return true;
            if (dc - u.radius > R) return false;
            for (Index a : u.atoms)
                if ((mu_.point(a) - mu_.point(c.atom)).norm() > R) return false;
            return true;
        };

        std::vector<std::vector<int>> groups(centers.size());
        for (std::size_t ui = 0; ui < units.size(); ++ui) {
            const Unit& u = units[ui];
            int forced = -1;
            for (Index a : u.atoms) {
                grid.query(mu_.point(a), 1.2 * rmax, [&](int c) {
                    if ((mu_.point(a) - mu_.point(centers[c].atom)).norm() <= centers[c].r1)
                        if (forced < 0 || c < forced) forced = c;
                });
            }
            int pick = forced;
            if (pick < 0) {
                const auto xs = mu_.point(u.center_atom);
                double best_near = std::numeric_limits<double>::infinity(), best_any = best_near;
                int near = -1, any = -1;
                grid.query(xs, 28.0 * rmax, [&](int c) {
                    double dc = (xs - mu_.point(centers[c].atom)).norm();
                    if (!inside28(centers[c], u)) return;
                    if (dc <= centers[c].r2 && (dc < best_near || (dc == best_near && c < near))) {
                        best_near = dc;
                        near = c;
                    }
                    if (dc < best_any || (dc == best_any && c < any)) {
                        best_any = dc;
                        any = c;
                    }
                });
                pick = near >= 0 ? near : any;
                if (pick < 0) {
                    double best = std::numeric_limits<double>::infinity();
                    for (std::size_t c = 0; c < centers.size(); ++c) {
                        double dc = (xs - mu_.point(centers[c].atom)).norm();
                        if (dc < best) {
                            best = dc;
                            pick = static_cast<int>(c);
                        }
                    }
                }
            }
            groups[pick].push_back(static_cast<int>(ui));
        }
        return groups;
    }

private:
    const DiscreteMeasure& mu_;
    const Params& p_;
    int n_;
    int k0_ = 0, kmax_ = 0;
    std::vector<Eigen::VectorXd> theta_sq_;
};

}  // namespace

Lattice build_lattice(const DiscreteMeasure& mu, const Params& p, int max_depth)
{
    return build_lattice(std::make_shared<const DiscreteMeasure>(mu), p, max_depth);
}

Lattice build_lattice(std::shared_ptr<const DiscreteMeasure> mup, const Params& p, int max_depth)
{
    if (!mup || mup->size() < 1) throw std::invalid_argument("empty measure");
    if (max_depth < 0) throw std::invalid_argument("max_depth must be >= 0");
    p.validate(mup->n());
    const DiscreteMeasure& mu = *mup;
    Lattice lat(mup, p);
    Builder b(mu, p);

    // Root: the atom nearest the bounding-box midpoint, at the finest scale
    // whose 25-fold ball still covers the support.
    const Eigen::VectorXd mid = 0.5 * (mu.points().rowwise().minCoeff() + mu.points().rowwise().maxCoeff());
    Index root_atom = 0;
    double best = std::numeric_limits<double>::infinity();
    for (Index i = 0; i < mu.size(); ++i) {
        double d = (mu.point(i) - mid).squaredNorm();
        if (d < best) {
            best = d;
            root_atom = i;
        }
    }
    double reach = 0.0;
    for (Index i = 0; i < mu.size(); ++i) reach = std::max(reach, (mu.point(i) - mu.point(root_atom)).norm());
    int k0 = 0;
    if (reach > 0.0) {
        k0 = static_cast<int>(std::floor(std::log(25.0 / reach) / std::log(p.A0)));
        while (25.0 * std::pow(p.A0, -(k0 + 1)) >= reach) ++k0;
        while (25.0 * std::pow(p.A0, -k0) < reach) --k0;
    }

    // Below this generation every atom is its own Vitali center.
    int kmax = k0 + max_depth;
    const double gap = min_gap(mu);
    if (std::isfinite(gap)) {
        int ksep = k0;
        while (10.0 * p.C0 * std::pow(p.A0, -ksep) >= gap) ++ksep;
        if (kmax > ksep + 2) kmax = ksep + 2;
    }
    b.prepare_energy(k0, kmax);

    std::vector<Cube> cubes;
    std::vector<std::vector<CubeId>> gens(kmax - k0 + 1);
    std::vector<Unit> units(mu.size());
    for (Index a = 0; a < mu.size(); ++a) units[a] = Unit{{a}, a, 0.0, -1};

    auto finish_cube = [&](Cube& c) {
        std::sort(c.atoms.begin(), c.atoms.end());
        c.mass = mu.mass_of(c.atoms);
    };

    for (int k = kmax; k >= k0; --k) {
        std::vector<Center> centers;
        if (k == k0) {
            Center c = b.make_center(root_atom, k0);
            centers.push_back(c);
        } else {
            centers = b.select_centers(k);
        }
        auto groups = centers.size() == 1 ? std::vector<std::vector<int>>{[&] {
            std::vector<int> all(units.size());
            std::iota(all.begin(), all.end(), 0);
            return all;
        }()}
                                           : b.assign(centers, units, k);
        std::vector<Unit> next;
        for (std::size_t c = 0; c < centers.size(); ++c) {
            if (groups[c].empty()) continue;
            Cube q;
            q.gen = k;
            q.center_atom = centers[c].atom;
            q.center = mu.point(centers[c].atom);
            q.r = centers[c].r;
            q.r1 = centers[c].r1;
            q.r2 = centers[c].r2;
            q.is_db = centers[c].is_db;
            const CubeId id = static_cast<CubeId>(cubes.size());
            for (int ui : groups[c]) {
                const Unit& u = units[ui];
                q.atoms.insert(q.atoms.end(), u.atoms.begin(), u.atoms.end());
                if (u.cube >= 0) {
                    q.children.push_back(u.cube);
                    cubes[u.cube].parent = id;
                }
            }
            finish_cube(q);
            double rad = 0.0;
            for (Index a : q.atoms) rad = std::max(rad, (mu.point(a) - q.center).norm());
            next.push_back(Unit{q.atoms, q.center_atom, rad, id});
            cubes.push_back(std::move(q));
            gens[k - k0].push_back(id);
        }
        units = std::move(next);
    }

    // Trim generations that only repeat singletons.
    int first_singleton = -1;
    for (std::size_t g = 0; g < gens.size(); ++g) {
        bool all = std::all_of(gens[g].begin(), gens[g].end(),
                               [&](CubeId q) { return cubes[q].atoms.size() == 1; });
        if (all) {
            first_singleton = static_cast<int>(g);
            break;
        }
    }
    if (first_singleton >= 0 && static_cast<int>(gens.size()) > first_singleton + 3) gens.resize(first_singleton + 3);
    if (static_cast<int>(gens.size()) - 1 < max_depth)
        lat.add_warning("max_depth " + std::to_string(max_depth) + " exceeds atom resolution; truncated to " +
                        std::to_string(gens.size() - 1));

    // Renumber so that ids run generation by generation from the root.
    std::vector<CubeId> remap(cubes.size(), -1);
    std::vector<Cube> ordered;
    std::vector<std::vector<CubeId>> og(gens.size());
    for (std::size_t g = 0; g < gens.size(); ++g) {
        std::vector<CubeId> ids = gens[g];
        std::sort(ids.begin(), ids.end(), [&](CubeId a, CubeId c) { return cubes[a].atoms.front() < cubes[c].atoms.front(); });
        for (CubeId q : ids) {
            remap[q] = static_cast<CubeId>(ordered.size());
            og[g].push_back(remap[q]);
            ordered.push_back(cubes[q]);
        }
    }
    for (Cube& c : ordered) {
        c.parent = c.parent >= 0 ? remap[c.parent] : -1;
        std::vector<CubeId> ch;
        for (CubeId x : c.children)
            if (remap[x] >= 0) ch.push_back(remap[x]);
        std::sort(ch.begin(), ch.end());
        c.children = std::move(ch);
    }
    lat.set_generations(k0, std::move(ordered), std::move(og));
    return lat;
}

LatticeCheck check_lattice(const Lattice& lat)
{
    LatticeCheck out;
    const DiscreteMeasure& mu = lat.measure();
    const Params& p = lat.params();
    if (lat.generation(lat.k0()).size() != 1 ||
        lat.cube(lat.root()).atoms.size() != static_cast<std::size_t>(mu.size()))
        ++out.root;
    for (int k = lat.k0(); k <= lat.kmax(); ++k) {
        const auto& gen = lat.generation(k);
        std::vector<int> seen(mu.size(), 0);
        for (CubeId q : gen)
            for (Index a : lat.cube(q).atoms) ++seen[a];
        for (int s : seen)
            if (s != 1) ++out.partition;

        const double s = lat.scale(k);
        for (CubeId q : gen) {
            const Cube& c = lat.cube(q);
            if (c.r < s || c.r > p.C0 * s) ++out.radius_range;
            if (!c.is_db && c.r != s) ++out.nondb_radius;
            mu.index().for_each_in_ball(c.center, c.r, [&](Index a) {
                if (lat.cell_of(a, k) != q) ++out.inner_ball;
            });
            const double R2 = (28.0 * c.r) * (28.0 * c.r);
            for (Index a : c.atoms)
                if ((mu.point(a) - c.center).squaredNorm() > R2) ++out.outer_ball;
            if (k < lat.kmax()) {
                std::vector<Index> u;
                for (CubeId ch : c.children) {
                    if (lat.cube(ch).parent != q) ++out.nesting;
                    u.insert(u.end(), lat.cube(ch).atoms.begin(), lat.cube(ch).atoms.end());
                }
                std::sort(u.begin(), u.end());
                if (u != c.atoms) ++out.nesting;
            }
        }
        for (std::size_t i = 0; i < gen.size(); ++i)
            for (std::size_t j = i + 1; j < gen.size(); ++j) {
                const Cube& a = lat.cube(gen[i]);
                const Cube& b = lat.cube(gen[j]);
                if ((a.center - b.center).norm() <= 5.0 * (a.r + b.r)) ++out.disjoint_5B;
            }
    }
    return out;
}

double neighborhood_mass(const Lattice& lat, CubeId q, int l)
{
    const DiscreteMeasure& mu = lat.measure();
    const Cube& c = lat.cube(q);
    const double rho = std::pow(lat.params().A0, -(c.gen + l));
    std::vector<char> ext(mu.size(), 0);
    double m = 0.0;
    for (Index a : c.atoms) {
        bool touches = false;
        mu.index().for_each_in_ball(mu.point(a), rho, [&](Index y) {
            if (lat.cell_of(y, c.gen) == q) return;
            if ((mu.point(y) - mu.point(a)).norm() >= rho) return;
            touches = true;
            if (!ext[y]) {
                ext[y] = 1;
                m += mu.weight(y);
            }
        });
        if (touches) m += mu.weight(a);
    }
    return m;
}

Dilate lambda_dilate(const Lattice& lat, CubeId q, double lambda)
{
    const DiscreteMeasure& mu = lat.measure();
    const Cube& c = lat.cube(q);
    Dilate out;
    mu.index().for_each_in_ball(c.center, lambda * lat.side(q),
                                [&](Index a) { out.cells.push_back(lat.cell_of(a, c.gen)); });
    out.cells.push_back(q);
    std::sort(out.cells.begin(), out.cells.end());
    out.cells.erase(std::unique(out.cells.begin(), out.cells.end()), out.cells.end());
    for (CubeId p : out.cells) out.atoms.insert(out.atoms.end(), lat.cube(p).atoms.begin(), lat.cube(p).atoms.end());
    std::sort(out.atoms.begin(), out.atoms.end());
    return out;
}

std::vector<CubeId> descendants_of(const Lattice& lat, const std::vector<CubeId>& tops)
{
    std::vector<CubeId> out;
    std::vector<CubeId> stack(tops.rbegin(), tops.rend());
    while (!stack.empty()) {
        CubeId q = stack.back();
        stack.pop_back();
        out.push_back(q);
        const auto& ch = lat.cube(q).children;
        for (auto it = ch.rbegin(); it != ch.rend(); ++it) stack.push_back(*it);
    }
    return out;
}

BoundaryFamilies boundary_families(const Lattice& lat, CubeId q)
{
    const DiscreteMeasure& mu = lat.measure();
    const Cube& c = lat.cube(q);
    BoundaryFamilies out;
    for (CubeId p : descendants_of(lat, {q})) {
        bool hit = false;
        mu.index().for_each_in_ball(lat.cube(p).center, lat.radius_2BQ(p), [&](Index a) {
            if (lat.cell_of(a, c.gen) != q) hit = true;
        });
        if (hit) out.interior.push_back(p);
    }
    for (int k = c.gen; k <= lat.kmax(); ++k) {
        for (CubeId p : lat.generation(k)) {
            if (lat.ancestor(p, c.gen) == q) continue;
            bool hit = false;
            mu.index().for_each_in_ball(lat.cube(p).center, lat.radius_2BQ(p), [&](Index a) {
                if (lat.cell_of(a, c.gen) == q) hit = true;
            });
            if (hit) out.exterior.push_back(p);
        }
    }
    std::sort(out.interior.begin(), out.interior.end());
    return out;
}

double point_cube_distance(const Lattice& lat, const Eigen::Ref<const Eigen::VectorXd>& x, CubeId q)
{
    double d2 = std::numeric_limits<double>::infinity();
    for (Index a : lat.cube(q).atoms) d2 = std::min(d2, (lat.measure().point(a) - x).squaredNorm());
    return std::sqrt(d2);
}

double cube_distance(const Lattice& lat, CubeId a, CubeId b)
{
    if (lat.contains(a, b) || lat.contains(b, a)) return 0.0;
    const Cube& A = lat.cube(a);
    const Cube& B = lat.cube(b);
    const DiscreteMeasure& mu = lat.measure();
    double d2 = std::numeric_limits<double>::infinity();
    const auto& small = A.atoms.size() <= B.atoms.size() ? A.atoms : B.atoms;
    const auto& large = A.atoms.size() <= B.atoms.size() ? B.atoms : A.atoms;
    for (Index i : small)
        for (Index j : large) d2 = std::min(d2, (mu.point(i) - mu.point(j)).squaredNorm());
    return std::sqrt(d2);
}

std::string lattice_to_json(const Lattice& lat)
{
    nlohmann::json j;
    j["schema"] = "gmt.lattice/1";
    std::ostringstream kv;
    lat.params().write_kv(kv);
    j["params"] = kv.str();
    j["k0"] = lat.k0();
    j["warnings"] = lat.warnings();
    auto& gens = j["generations"] = nlohmann::json::array();
    for (int k = lat.k0(); k <= lat.kmax(); ++k) {
        nlohmann::json g = nlohmann::json::array();
        for (CubeId q : lat.generation(k)) {
            const Cube& c = lat.cube(q);
            g.push_back({{"id", q},
                         {"center_atom", c.center_atom},
                         {"center", std::vector<double>(c.center.data(), c.center.data() + c.center.size())},
                         {"r", c.r},
                         {"r1", c.r1},
                         {"r2", c.r2},
                         {"is_db", c.is_db},
                         {"parent", c.parent},
                         {"children", c.children},
                         {"atoms", c.atoms}});
        }
        gens.push_back(std::move(g));
    }
    return j.dump();
}

Lattice lattice_from_json(const std::string& text, std::shared_ptr<const DiscreteMeasure> mu)
{
    nlohmann::json j = nlohmann::json::parse(text);
    if (j.at("schema") != "gmt.lattice/1") throw std::invalid_argument("unsupported lattice schema");
    std::istringstream kv(j.at("params").get<std::string>());
    Lattice lat(mu, Params::from_kv(kv));
    for (const auto& w : j.at("warnings")) lat.add_warning(w.get<std::string>());
    const int k0 = j.at("k0").get<int>();
    std::vector<Cube> cubes;
    std::vector<std::vector<CubeId>> gens;
    int k = k0;
    for (const auto& g : j.at("generations")) {
        gens.emplace_back();
        for (const auto& e : g) {
            Cube c;
            c.gen = k;
            c.center_atom = e.at("center_atom").get<Index>();
            auto ctr = e.at("center").get<std::vector<double>>();
            c.center = Eigen::Map<Eigen::VectorXd>(ctr.data(), static_cast<Index>(ctr.size()));
            c.r = e.at("r").get<double>();
            c.r1 = e.at("r1").get<double>();
            c.r2 = e.at("r2").get<double>();
            c.is_db = e.at("is_db").get<bool>();
            c.parent = e.at("parent").get<CubeId>();
            c.children = e.at("children").get<std::vector<CubeId>>();
            c.atoms = e.at("atoms").get<std::vector<Index>>();
            for (Index a : c.atoms)
                if (a < 0 || a >= mu->size()) throw std::invalid_argument("lattice atom index out of range");
            c.mass = mu->mass_of(c.atoms);
            const CubeId id = e.at("id").get<CubeId>();
            if (id != static_cast<CubeId>(cubes.size())) throw std::invalid_argument("lattice ids must be dense");
            gens.back().push_back(id);
            cubes.push_back(std::move(c));
        }
        ++k;
    }
    lat.set_generations(k0, std::move(cubes), std::move(gens));
    return lat;
}

}  // namespace gmt
