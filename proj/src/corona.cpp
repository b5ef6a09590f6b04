#include "gmt/corona.hpp"
#include "gmt/riesz.hpp"

#include "json.hpp"

#include <cmath>
#include <iterator>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <stdexcept>

namespace gmt {

namespace {

std::vector<char> marks(std::size_t size, const std::vector<CubeId>& family)
{
    std::vector<char> m(size, 0);
    for (CubeId q : family) m[q] = 1;
    return m;
}

bool strictly_inside(const Lattice& lat, CubeId q, const std::vector<char>& mark)
{
    for (CubeId a = lat.cube(q).parent; a >= 0; a = lat.cube(a).parent)
        if (mark[a]) return true;
    return false;
}

double side_at(const Lattice& lat, int gen) { return 56.0 * lat.params().C0 * lat.scale(gen); }

bool in_ld(const CoeffTable& c, CubeId R, CubeId P)
{
    const int n = c.lattice().n();
    return c[P].P <= c.lattice().params().delta0(n) * c[R].BigTheta;
}

bool in_hd(const CoeffTable& c, CubeId R, CubeId P, int k) { return c[P].theta_exp >= c[R].theta_exp + k; }

// Cubes below the given same-generation tops (tops included), not descending
// below cubes of stop_mark.
std::vector<CubeId> tree_below(const Lattice& lat, const std::vector<CubeId>& tops, const std::vector<char>& stop_mark)
{
    std::vector<CubeId> out;
    std::vector<CubeId> stack(tops.rbegin(), tops.rend());
    while (!stack.empty()) {
        const CubeId q = stack.back();
        stack.pop_back();
        out.push_back(q);
        if (stop_mark[q]) continue;
        const auto& ch = lat.cube(q).children;
        stack.insert(stack.end(), ch.rbegin(), ch.rend());
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<CubeId> sorted_union(std::vector<CubeId> a)
{
    std::sort(a.begin(), a.end());
    a.erase(std::unique(a.begin(), a.end()), a.end());
    return a;
}

bool inside_atoms(const Lattice& lat, CubeId q, const std::vector<char>& atom_mark)
{
    for (Index a : lat.cube(q).atoms)
        if (!atom_mark[a]) return false;
    return true;
}

}  // namespace

CoronaForest::CoronaForest(const CoeffTable& c)
    : c_(&c), slot_(c.lattice().size(), -1), owner_(c.lattice().size(), -1)
{
}

const TreeFamilies& CoronaForest::tree(CubeId root) const
{
    if (slot_.at(root) < 0) throw std::out_of_range("cube is not a Top root");
    return trees_[slot_[root]];
}

const RootAnnotation& CoronaForest::annotation(CubeId root) const
{
    if (slot_.at(root) < 0) throw std::out_of_range("cube is not a Top root");
    return notes_[slot_[root]];
}

void CoronaForest::add_tree(TreeFamilies t)
{
    slot_[t.root] = static_cast<int>(trees_.size());
    top_.push_back(t.root);
    trees_.push_back(std::move(t));
    notes_.emplace_back();
}

void CoronaForest::set_annotation(CubeId root, RootAnnotation a)
{
    if (slot_.at(root) < 0) throw std::out_of_range("cube is not a Top root");
    notes_[slot_[root]] = a;
}

CoronaForest build_top(const CoeffTable& c, bool annotate)
{
    CoronaForest f(c);
    const Lattice& lat = c.lattice();
    const int kL = lat.params().kLambda;
    std::vector<CubeId> owner(lat.size(), -1);
    std::vector<CubeId> queue{lat.root()};

    for (std::size_t i = 0; i < queue.size(); ++i) {
        const CubeId R = queue[i];
        const auto& ch = lat.cube(R).children;
        TreeFamilies t;
        t.root = R;
        t.HD = maximal_family(lat, ch, [&](CubeId p) { return in_hd(c, R, p, kL); });
        t.LD = maximal_family(lat, ch, [&](CubeId p) { return in_ld(c, R, p); });
        t.Stop = maximal_family(lat, ch, [&](CubeId p) { return in_hd(c, R, p, kL) || in_ld(c, R, p); });
        t.End = maximal_family(lat, t.Stop, [&](CubeId p) { return c[p].is_pdoubling; });

        std::vector<char> end_mark = marks(lat.size(), t.End);
        t.Tree = tree_below(lat, {R}, end_mark);
        // later trees sit deeper, so they take over their roots
        for (CubeId q : t.Tree) owner[q] = R;
        queue.insert(queue.end(), t.End.begin(), t.End.end());
        f.add_tree(std::move(t));
    }
    f.set_owner(std::move(owner));

    if (annotate) {
        const double B = lat.params().Bconst(lat.n());
        for (CubeId R : f.top()) {
            RootAnnotation a;
            a.sigma = c.sigma(R);
            a.sigma_hd1 = c.sigma(hd1(f, R));
            a.is_mdw = c[R].is_pdoubling && a.sigma_hd1 >= a.sigma / B;
            if (a.is_mdw) {
                const HChoice hc = select_h(f, R);
                a.h = hc.h;
                a.h_fallback = hc.fallback;
                a.is_trc = is_tractable(f, generalized_tree(f, R, hc.h));
            }
            f.set_annotation(R, a);
        }
    }
    return f;
}

CoverageCheck check_coverage(const CoronaForest& f)
{
    const Lattice& lat = f.lattice();
    std::vector<std::vector<CubeId>> holders(lat.size());
    for (CubeId R : f.top())
        for (CubeId q : f.tree(R).Tree) holders[q].push_back(R);

    CoverageCheck out;
    for (CubeId q = 0; q < static_cast<CubeId>(lat.size()); ++q) {
        const auto& h = holders[q];
        if (h.empty()) {
            ++out.uncovered;
            continue;
        }
        if (h.size() == 1) continue;
        // a shared cube must be an end cube of one tree and the root of the other
        bool ok = h.size() == 2;
        if (ok) {
            const CubeId a = h[0], b = h[1];
            auto is_end = [&](CubeId R) {
                const auto& e = f.tree(R).End;
                return std::binary_search(e.begin(), e.end(), q);
            };
            ok = (q == b && is_end(a)) || (q == a && is_end(b));
        }
        if (!ok) ++out.bad_overlap;
    }
    return out;
}

std::vector<CubeId> stop_star(const CoronaForest& f, CubeId R)
{
    const CoeffTable& c = f.coeffs();
    const int k = f.params().kLambdaStar();
    return maximal_family(f.lattice(), f.lattice().cube(R).children,
                          [&](CubeId p) { return in_ld(c, R, p) || in_hd(c, R, p, k); });
}

std::vector<CubeId> hd1(const CoronaForest& f, CubeId R)
{
    const int k = f.params().kLambdaStar();
    std::vector<CubeId> out;
    for (CubeId p : stop_star(f, R))
        if (in_hd(f.coeffs(), R, p, k)) out.push_back(p);
    return out;
}

bool is_mdw(const CoronaForest& f, CubeId R)
{
    const CoeffTable& c = f.coeffs();
    if (!c[R].is_pdoubling) return false;
    const double B = f.params().Bconst(f.lattice().n());
    return c.sigma(hd1(f, R)) >= c.sigma(R) / B;
}

EnlargedCube enlarged_cube(const Lattice& lat, CubeId R, int j)
{
    const Cube& c = lat.cube(R);
    EnlargedCube e;
    e.base = R;
    e.j = j;
    e.cells = c.children;
    if (c.gen < lat.kmax()) {
        const int k = c.gen + 1;
        const double rad = lat.side(R) / 2 + 2.0 * j * side_at(lat, k);
        const DiscreteMeasure& mu = lat.measure();
        for (Index a : mu.index().indices_in_ball(c.center, rad))
            if ((mu.point(a) - c.center).norm() < rad) e.cells.push_back(lat.cell_of(a, k));
        e.cells = sorted_union(std::move(e.cells));
    }
    e.atoms = c.atoms;
    for (CubeId q : e.cells)
        if (lat.cube(q).parent != R) e.atoms.insert(e.atoms.end(), lat.cube(q).atoms.begin(), lat.cube(q).atoms.end());
    std::sort(e.atoms.begin(), e.atoms.end());
    return e;
}

double enlarged_radius(const Lattice& lat, CubeId R, int h, int k)
{
    return (0.5 + 2.0 / lat.params().A0 * (h + k)) * lat.side(R);
}

std::vector<CubeId> stop_star(const CoronaForest& f, CubeId R, const EnlargedCube& e)
{
    const CoeffTable& c = f.coeffs();
    const int k = f.params().kLambdaStar();
    return maximal_family(f.lattice(), e.cells, [&](CubeId p) { return in_ld(c, R, p) || in_hd(c, R, p, k); });
}

std::vector<CubeId> hd1(const CoronaForest& f, CubeId R, const EnlargedCube& e)
{
    const int k = f.params().kLambdaStar();
    std::vector<CubeId> out;
    for (CubeId p : stop_star(f, R, e))
        if (in_hd(f.coeffs(), R, p, k)) out.push_back(p);
    return out;
}

HChoice select_h(const CoronaForest& f, CubeId R)
{
    const Lattice& lat = f.lattice();
    const Params& p = f.params();
    const double B4 = std::pow(p.Bconst(lat.n()), 0.25);
    std::map<int, double> memo;
    auto s = [&](int j) {
        auto it = memo.find(j);
        if (it != memo.end()) return it->second;
        const double v = f.coeffs().sigma(hd1(f, R, enlarged_cube(lat, R, j)));
        memo.emplace(j, v);
        return v;
    };

    int lo = 1, hi = 4, lag = 1;
    if (p.strict) {
        lo = 10;
        hi = static_cast<int>(std::floor(p.A0 / 4));
        lag = 10;
        if (hi < lo) throw std::invalid_argument("select_h: A0 < 40 leaves the strict j-grid empty");
    }
    for (int j = lo; j <= hi; ++j)
        if (s(j) <= B4 * s(j - lag)) return {j, j - lag, false};
    return {hi, hi - lag, true};
}

GeneralizedTree generalized_tree(const CoronaForest& f, CubeId R) { return generalized_tree(f, R, select_h(f, R).h); }

GeneralizedTree generalized_tree(const CoronaForest& f, CubeId R, int h)
{
    const Lattice& lat = f.lattice();
    const CoeffTable& c = f.coeffs();
    const int ks = f.params().kLambdaStar();
    GeneralizedTree g;
    g.R = R;
    g.h = h;

    const EnlargedCube e = enlarged_cube(lat, R, h);
    const EnlargedCube ep = enlarged_cube(lat, R, h + 1);
    g.HD1_e = hd1(f, R, e);
    const std::vector<CubeId> sstar = stop_star(f, R, ep);
    for (CubeId q : sstar)
        if (in_hd(c, R, q, ks)) g.HD1_ep.push_back(q);

    const std::vector<char> hd1_mark = marks(lat.size(), g.HD1_ep);
    for (CubeId q : g.HD1_ep)
        for (CubeId p : stop_star(f, q)) {
            g.Stop2.push_back(p);
            if (in_hd(c, q, p, ks)) g.HD2.push_back(p);
        }
    for (CubeId q : sstar)
        if (!hd1_mark[q]) g.Stop2.push_back(q);
    g.Stop2 = sorted_union(std::move(g.Stop2));
    g.HD2 = sorted_union(std::move(g.HD2));
    const std::vector<char> stop2_mark = marks(lat.size(), g.Stop2);

    // R and the cubes of e' down to Stop2; Neg collects those without a
    // P-doubling container in the family
    g.TStop.push_back(R);
    std::vector<std::pair<CubeId, bool>> stack;
    for (CubeId q : ep.cells) stack.push_back({q, lat.cube(q).parent == R && c[R].is_pdoubling});
    while (!stack.empty()) {
        auto [q, covered] = stack.back();
        stack.pop_back();
        covered = covered || c[q].is_pdoubling;
        g.TStop.push_back(q);
        if (!covered) g.Neg.push_back(q);
        if (stop2_mark[q]) continue;
        for (CubeId s : lat.cube(q).children) stack.push_back({s, covered});
    }
    std::sort(g.TStop.begin(), g.TStop.end());
    std::sort(g.Neg.begin(), g.Neg.end());
    const std::vector<char> neg_mark = marks(lat.size(), g.Neg);

    for (CubeId s : g.Stop2) {
        if (neg_mark[s]) {
            g.End.push_back(s);
            continue;
        }
        for (CubeId p : maximal_family(lat, {s}, [&](CubeId q) { return c[q].is_pdoubling; })) g.End.push_back(p);
    }
    g.End = sorted_union(std::move(g.End));

    // like TStop: R plus the cubes of e' of the next generations
    g.T = tree_below(lat, ep.cells, marks(lat.size(), g.End));
    g.T.insert(std::lower_bound(g.T.begin(), g.T.end(), R), R);

    for (CubeId q : g.Neg) {
        if (lat.contains(R, q)) ++g.neg_meeting_R;
        if (hd1_mark[q] || strictly_inside(lat, q, hd1_mark)) ++g.neg_inside_hd1;
        g.neg_min_side_ratio = std::min(g.neg_min_side_ratio, lat.side(q) / lat.side(R));
    }
    return g;
}

bool is_tractable(const CoronaForest& f, const GeneralizedTree& g)
{
    const double B = f.params().Bconst(f.lattice().n());
    return f.coeffs().sigma(g.HD2) <= B * f.coeffs().sigma(g.HD1_e);
}

bool is_tractable(const CoronaForest& f, CubeId R) { return is_tractable(f, generalized_tree(f, R)); }

std::vector<CubeId> select_disjoint_balls(std::vector<CubeBall> balls, double A0,
                                          const std::function<double(CubeId)>& weight)
{
    std::stable_sort(balls.begin(), balls.end(), [](const CubeBall& a, const CubeBall& b) {
        return a.radius != b.radius ? a.radius > b.radius : a.q < b.q;
    });
    const double dil = 1.0 + 8.0 / A0;
    std::vector<CubeBall> kept;
    for (const CubeBall& b : balls) {
        const bool covered =
            std::any_of(kept.begin(), kept.end(), [&](const CubeBall& k) { return ball_inside(b, k, dil); });
        if (!covered) kept.push_back(b);
    }

    std::vector<int> color(kept.size(), -1);
    int ncolors = 0;
    for (std::size_t i = 0; i < kept.size(); ++i) {
        std::vector<char> used(ncolors + 1, 0);
        for (std::size_t j = 0; j < i; ++j)
            if (!balls_disjoint(kept[i], kept[j])) used[color[j]] = 1;
        int k = 0;
        while (used[k]) ++k;
        color[i] = k;
        ncolors = std::max(ncolors, k + 1);
    }

    std::vector<double> total(ncolors, 0.0);
    for (std::size_t i = 0; i < kept.size(); ++i) total[color[i]] += weight(kept[i].q);
    const int best = ncolors == 0 ? -1 : static_cast<int>(std::max_element(total.begin(), total.end()) - total.begin());
    std::vector<CubeId> out;
    for (std::size_t i = 0; i < kept.size(); ++i)
        if (color[i] == best) out.push_back(kept[i].q);
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<CubeId> good_high(const CoronaForest& f, CubeId R)
{
    const Lattice& lat = f.lattice();
    const CoeffTable& c = f.coeffs();
    const double B = f.params().Bconst(lat.n());
    const GeneralizedTree g = generalized_tree(f, R);

    std::vector<CubeBall> balls;
    std::map<CubeId, double> w;
    for (CubeId q : g.HD1_ep) {
        if (c.sigma(hd1(f, q)) < std::sqrt(B) * c.sigma(q) || !is_mdw(f, q)) continue;
        const int h = select_h(f, q).h;
        balls.push_back({q, lat.cube(q).center, enlarged_radius(lat, q, h, 2)});
        w[q] = c.sigma(hd1(f, q, enlarged_cube(lat, q, h)));
    }
    return select_disjoint_balls(std::move(balls), f.params().A0, [&](CubeId q) { return w.at(q); });
}

Generations gh_and_generations(const CoronaForest& f, CubeId R, int max_gen)
{
    const Lattice& lat = f.lattice();
    if (max_gen < 0) max_gen = f.params().max_gen;
    std::map<CubeId, bool> trc_memo;
    auto trc = [&](CubeId q) {
        auto it = trc_memo.find(q);
        if (it != trc_memo.end()) return it->second;
        return trc_memo[q] = is_tractable(f, q);
    };
    auto trc_of = [&](const std::vector<CubeId>& fam) {
        std::vector<CubeId> t;
        for (CubeId q : fam)
            if (trc(q)) t.push_back(q);
        return t;
    };

    Generations out;
    out.gen.push_back({R});
    out.trc.push_back(trc_of({R}));
    for (int j = 1; j <= max_gen; ++j) {
        std::vector<CubeId> next;
        for (CubeId q : out.gen.back()) {
            if (trc(q)) continue;
            std::vector<CubeId> gh = good_high(f, q);
            next.insert(next.end(), gh.begin(), gh.end());
            out.gh[q] = std::move(gh);
        }
        if (next.empty()) break;
        next = sorted_union(std::move(next));
        out.trc.push_back(trc_of(next));
        out.gen.push_back(std::move(next));
    }

    const Eigen::VectorXd& x = lat.cube(R).center;
    const double rad = enlarged_radius(lat, R, select_h(f, R).h, 2);
    for (std::size_t j = 1; j < out.gen.size(); ++j)
        for (CubeId q : out.gen[j]) {
            const bool outside = std::any_of(lat.cube(q).atoms.begin(), lat.cube(q).atoms.end(), [&](Index a) {
                return (lat.measure().point(a) - x).norm() >= rad;
            });
            if (outside) ++out.outside_ball;
        }
    return out;
}

std::vector<Layer> layers(const CoronaForest& f)
{
    const Lattice& lat = f.lattice();
    const CoeffTable& c = f.coeffs();
    std::map<int, std::vector<CubeId>> F;
    for (CubeId R : f.top())
        if (f.annotation(R).is_mdw) F[c[R].theta_exp].push_back(R);

    std::vector<Layer> out;
    for (auto& [j, family] : F) {
        std::vector<CubeId> rest = family;
        for (int h = 1; !rest.empty(); ++h) {
            Layer L;
            L.j = j;
            L.h = h;
            std::vector<CubeId> left;
            for (CubeId q : rest) {
                const bool covered = std::any_of(rest.begin(), rest.end(), [&](CubeId o) {
                    return o != q && lat.cube(o).gen < lat.cube(q).gen && lat.contains(o, q);
                });
                (covered ? left : L.F).push_back(q);
            }
            rest = std::move(left);

            std::vector<CubeBall> balls;
            for (CubeId q : L.F)
                balls.push_back({q, lat.cube(q).center, enlarged_radius(lat, q, f.annotation(q).h, 4)});
            // keep the balls that are maximal under inclusion; equal balls keep the lowest id
            std::vector<CubeBall> maximal;
            for (const CubeBall& b : balls) {
                const bool inside = std::any_of(balls.begin(), balls.end(), [&](const CubeBall& o) {
                    if (o.q == b.q || !ball_inside(b, o)) return false;
                    return !ball_inside(o, b) || o.q < b.q;
                });
                if (!inside) maximal.push_back(b);
            }
            L.L = select_disjoint_balls(std::move(maximal), f.params().A0, [&](CubeId q) {
                return c.sigma(hd1(f, q, enlarged_cube(lat, q, f.annotation(q).h)));
            });
            out.push_back(std::move(L));
        }
    }
    return out;
}

double RegFamily::d(const Eigen::Ref<const Eigen::VectorXd>& x) const
{
    double best = std::numeric_limits<double>::infinity();
    for (Index i = 0; i < anchors.cols(); ++i) best = std::min(best, (anchors.col(i) - x).norm() + offsets(i));
    return best;
}

RegFamily regularize(const CoronaForest& f, CubeId R, double ell0)
{
    const Lattice& lat = f.lattice();
    const DiscreteMeasure& mu = lat.measure();
    const Params& p = f.params();
    const int h = select_h(f, R).h;
    const GeneralizedTree g = generalized_tree(f, R, h);
    const EnlargedCube ep = enlarged_cube(lat, R, h + 1);

    RegFamily out;
    out.R = R;
    out.atoms = ep.atoms;

    // d_R(x) = min over atoms y of |x - y| + (side of the smallest tree cube holding y)
    Eigen::VectorXd m = Eigen::VectorXd::Constant(mu.size(), std::numeric_limits<double>::infinity());
    for (CubeId q : g.T)
        for (Index a : lat.cube(q).atoms) m(a) = std::min(m(a), lat.side(q));
    std::vector<Index> anchored;
    for (Index a = 0; a < mu.size(); ++a)
        if (std::isfinite(m(a))) anchored.push_back(a);
    out.anchors.resize(mu.dim(), static_cast<Index>(anchored.size()));
    out.offsets.resize(static_cast<Index>(anchored.size()));
    for (std::size_t i = 0; i < anchored.size(); ++i) {
        out.anchors.col(i) = mu.point(anchored[i]);
        out.offsets(i) = m(anchored[i]);
    }

    // ell0: finest resolvable value, halved until HD_1(e) keeps half its mass
    const double floor_ell0 = 60.0 * side_at(lat, lat.kmax());
    out.ell0 = ell0 > 0 ? ell0 : (p.ell0 > 0 ? p.ell0 : floor_ell0);
    double hd_total = 0.0;
    for (CubeId q : g.HD1_e) hd_total += lat.cube(q).mass;
    for (;;) {
        double big = 0.0;
        for (CubeId q : g.HD1_e)
            if (lat.side(q) >= out.ell0) big += lat.cube(q).mass;
        if (big >= 0.5 * hd_total) break;
        out.ell0 /= 2;
    }

    Eigen::VectorXd dist(mu.size());
#pragma omp parallel for schedule(dynamic, 64)
    for (Index a = 0; a < mu.size(); ++a) dist(a) = out.d_floor(mu.point(a));

    std::vector<double> min_d(lat.size(), -1.0);
    auto inf_d = [&](CubeId q) {
        if (min_d[q] < 0) {
            double v = std::numeric_limits<double>::infinity();
            for (Index a : lat.cube(q).atoms) v = std::min(v, dist(a));
            min_d[q] = v;
        }
        return min_d[q];
    };
    const int g0 = lat.cube(R).gen;
    for (Index x : out.atoms) {
        CubeId pick = -1;
        for (int k = g0 + 1; k <= lat.kmax() && pick < 0; ++k) {
            const CubeId q = lat.cell_of(x, k);
            if (lat.side(q) <= inf_d(q) / 60.0 * (1 + 1e-12)) pick = q;
        }
        if (pick < 0) {
            pick = lat.cell_of(x, lat.kmax());
            ++out.unresolved;
        }
        out.reg.push_back(pick);
    }
    if (!out.atoms.empty() && out.unresolved == static_cast<long>(out.atoms.size()))
        throw std::runtime_error("regularize: lattice too shallow for the 1/60 rule");
    out.reg = sorted_union(std::move(out.reg));

    std::vector<CubeId> tops = ep.cells;
    out.tree_reg = tree_below(lat, tops, marks(lat.size(), out.reg));
    out.tree_reg.insert(std::lower_bound(out.tree_reg.begin(), out.tree_reg.end(), R), R);

    // separation and overlap of the 50 l(P) balls
    for (CubeId P : out.reg) {
        const double l = lat.side(P);
        for (Index a : mu.index().indices_in_ball(lat.cube(P).center, 50 * l)) {
            const double r = dist(a) / l;
            if (r < 10.0 * (1 - 1e-12)) ++out.lower_violations;
            out.upper_const = std::max(out.upper_const, r);
        }
    }
    for (CubeId P : out.reg) {
        int touching = 0;
        for (CubeId Q : out.reg) {
            const double gap = (lat.cube(P).center - lat.cube(Q).center).norm();
            if (gap >= 50 * (lat.side(P) + lat.side(Q))) continue;
            ++touching;
            out.neighbor_ratio = std::max(out.neighbor_ratio, lat.side(P) / lat.side(Q));
        }
        out.max_overlap = std::max(out.max_overlap, touching);
    }
    return out;
}

HSelection select_H(const CoronaForest& f, CubeId R, double p) { return select_H(f, R, p, regularize(f, R)); }

HSelection select_H(const CoronaForest& f, CubeId R, double p, const RegFamily& reg)
{
    const Lattice& lat = f.lattice();
    const CoeffTable& c = f.coeffs();
    const Params& par = f.params();
    const int n = lat.n();
    const int ks = par.kLambdaStar();
    const int mmax = ks + 2;
    const EnlargedCube eh = enlarged_cube(lat, R, select_h(f, R).h);

    // H_m(e') = T_Reg(e') cut with hd^{k* + m}(R)
    std::vector<std::vector<CubeId>> Hm(mmax + 1);
    for (int m = 0; m <= mmax; ++m) {
        const std::vector<CubeId> hd = hd_k(c, R, ks + m);
        std::set_intersection(reg.tree_reg.begin(), reg.tree_reg.end(), hd.begin(), hd.end(),
                              std::back_inserter(Hm[m]));
    }

    auto region = [&](int j) {
        std::vector<char> am(lat.measure().size(), 0);
        for (CubeId q : eh.cells)
            for (Index a : enlarged_cube(lat, q, j).atoms) am[a] = 1;
        return am;
    };
    auto restrict = [&](const std::vector<CubeId>& fam, const std::vector<char>& am) {
        std::vector<CubeId> out;
        for (CubeId q : fam)
            if (inside_atoms(lat, q, am)) out.push_back(q);
        return out;
    };

    int lo = 1, hi = 4;
    if (par.strict) {
        lo = 10;
        hi = static_cast<int>(std::floor(par.A0 / 4));
        if (hi < lo) throw std::invalid_argument("select_H: A0 < 40 leaves the strict j-grid empty");
    }
    const double bound = std::pow(par.LambdaStar(n), par.epsN);
    HSelection out;
    std::vector<char> cur = region(lo);
    for (int j = lo; j <= hi; ++j) {
        std::vector<char> nxt = region(j + 1);
        int kj = 0;
        double best = -1.0;
        for (int k = 0; k <= mmax; ++k) {
            const double s = c.sigma(restrict(Hm[k], cur), p);
            if (s > best) best = s, kj = k;
        }
        double worst = 0.0;
        for (int m = 0; m <= mmax; ++m) worst = std::max(worst, c.sigma(restrict(Hm[m], nxt), p));

        out.j = j;
        out.k = kj;
        out.H = restrict(Hm[kj], cur);
        out.Hprime = restrict(Hm[kj], nxt);
        out.sigma_H = best;
        out.max_sigma_next = worst;
        if (worst <= bound * best) return out;
        cur = std::move(nxt);
    }
    out.fallback = true;
    return out;
}

const char* to_string(StopCause c)
{
    switch (c) {
    case StopCause::none: return "none";
    case StopCause::density: return "i";
    case StopCause::saturated: return "ii";
    case StopCause::low_children: return "iii";
    }
    return "?";
}

std::vector<int> SpreadTree::stops() const
{
    std::vector<int> out;
    for (int i = 0; i < static_cast<int>(nodes.size()); ++i)
        if (nodes[i].cause != StopCause::none) out.push_back(i);
    return out;
}

std::vector<int> SpreadTree::residual() const
{
    std::vector<int> out;
    for (int i = 0; i < static_cast<int>(nodes.size()); ++i)
        if (nodes[i].cause == StopCause::none && nodes[i].children.empty()) out.push_back(i);
    return out;
}

SpreadTree build_spread_tree(const CoronaForest& f, CubeId R0, CubeId R)
{
    const Lattice& lat = f.lattice();
    const CoeffTable& c = f.coeffs();
    const TreeFamilies& t0 = f.tree(R0);
    const std::vector<char> hd = marks(lat.size(), t0.HD);
    const std::vector<char> ld = marks(lat.size(), t0.LD);
    const double br_level = f.params().Kbr(lat.n()) * c[R].BigTheta;
    // below the first all-singleton generation cells only repeat single atoms
    const int last = lat.finest_resolved_gen();

    std::map<CubeId, bool> br_memo;
    auto br_pred = [&](CubeId q) {
        if (q == R || !c[q].is_pdoubling || hd[q] || ld[q]) return false;
        auto it = br_memo.find(q);
        if (it != br_memo.end()) return it->second;
        return br_memo[q] = localized_riesz_at_center(lat, q, R).norm() >= br_level;
    };
    auto in_br = [&](CubeId q) {
        if (!br_pred(q)) return false;
        for (CubeId a = lat.cube(q).parent; a >= 0 && a != R; a = lat.cube(a).parent)
            if (br_pred(a)) return false;
        return true;
    };
    // maximal P-doubling or LD cubes strictly below q; finest cells close the cover
    auto hat_children = [&](CubeId q) {
        std::vector<std::pair<CubeId, bool>> out;
        std::vector<CubeId> stack(lat.cube(q).children.rbegin(), lat.cube(q).children.rend());
        while (!stack.empty()) {
            const CubeId p = stack.back();
            stack.pop_back();
            const auto& ch = lat.cube(p).children;
            if (c[p].is_pdoubling || ld[p]) out.push_back({p, false});
            else if (ch.empty() || lat.cube(p).gen >= last) out.push_back({p, true});
            else stack.insert(stack.end(), ch.rbegin(), ch.rend());
        }
        return out;
    };

    SpreadTree tree;
    tree.R0 = R0;
    tree.R = R;
    SpreadNode root;
    root.q = R;
    root.ld = ld[R];
    tree.nodes.push_back(root);
    double accounted = 0.0;

    for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
        const CubeId q = tree.nodes[i].q;
        const double m = lat.cube(q).mass;
        if (hd[q] || ld[q] || in_br(q)) {
            tree.nodes[i].cause = StopCause::density;
            if (!hd[q] && !ld[q]) tree.br.push_back(q);
            accounted += m;
            continue;
        }
        if (tree.nodes[i].s >= m) {
            tree.nodes[i].cause = StopCause::saturated;
            continue;
        }
        if (lat.cube(q).children.empty() || lat.cube(q).gen >= last) {
            accounted += m;
            continue;
        }
        const auto ch = hat_children(q);
        double t = 0.0;
        for (auto [p, v] : ch)
            if (ld[p]) t += lat.cube(p).mass;
        tree.nodes[i].t = t;
        if (t >= 0.5 * m) {
            tree.nodes[i].cause = StopCause::low_children;
            accounted += t;
            continue;
        }
        const double s = tree.nodes[i].s;
        for (auto [p, v] : ch) {
            SpreadNode node;
            node.q = p;
            node.parent = static_cast<int>(i);
            node.ld = ld[p];
            node.virtual_child = v;
            node.s = node.ld ? -lat.cube(p).mass : (s + t) * lat.cube(p).mass / (m - t);
            tree.nodes[i].children.push_back(static_cast<int>(tree.nodes.size()));
            tree.nodes.push_back(std::move(node));
        }
    }
    for (int i = 0; i < static_cast<int>(tree.nodes.size()); ++i) tree.index[tree.nodes[i].q] = i;
    tree.mass_accounting = accounted / lat.cube(R).mass;
    return tree;
}

SpreadCheck check_spread_tree(const Lattice& lat, const SpreadTree& t, int covers, std::uint64_t seed)
{
    SpreadCheck out;
    for (const SpreadNode& nd : t.nodes) {
        const double m = lat.cube(nd.q).mass;
        const bool ok = nd.ld ? nd.s == -m : (nd.s >= 0 && nd.s <= 3 * m * (1 + 1e-12));
        if (!ok) ++out.range_violations;
    }

    std::vector<int> internal;
    for (int i = 0; i < static_cast<int>(t.nodes.size()); ++i)
        if (!t.nodes[i].children.empty()) internal.push_back(i);
    if (internal.empty()) return out;

    std::mt19937_64 rng(seed);
    std::bernoulli_distribution expand(0.5);
    for (int k = 0; k < covers; ++k) {
        const int top = internal[std::uniform_int_distribution<std::size_t>(0, internal.size() - 1)(rng)];
        // random disjoint cover of the top node by tree members
        double sum = 0.0;
        std::vector<int> stack{top};
        bool first = true;
        while (!stack.empty()) {
            const int i = stack.back();
            stack.pop_back();
            const auto& ch = t.nodes[i].children;
            if (!ch.empty() && (first || expand(rng))) stack.insert(stack.end(), ch.begin(), ch.end());
            else sum += t.nodes[i].s;
            first = false;
        }
        const double scale = std::max(std::abs(t.nodes[top].s), lat.cube(t.nodes[top].q).mass);
        out.max_cover_error = std::max(out.max_cover_error, std::abs(sum - t.nodes[top].s) / scale);
    }
    return out;
}

void write_forest_json(const CoronaForest& f, std::ostream& out)
{
    const Lattice& lat = f.lattice();
    const CoeffTable& c = f.coeffs();
    nlohmann::json j;
    j["schema"] = "gmt.forest/1";
    j["cubes"] = lat.size();
    const CoverageCheck cov = check_coverage(f);
    j["coverage"] = {{"uncovered", cov.uncovered}, {"bad_overlap", cov.bad_overlap}};
    nlohmann::json roots = nlohmann::json::array();
    for (CubeId R : f.top()) {
        const TreeFamilies& t = f.tree(R);
        const RootAnnotation& a = f.annotation(R);
        roots.push_back({{"id", R},
                         {"gen", lat.cube(R).gen},
                         {"theta_exp", c[R].theta_exp},
                         {"sizes",
                          {{"HD", t.HD.size()},
                           {"LD", t.LD.size()},
                           {"Stop", t.Stop.size()},
                           {"End", t.End.size()},
                           {"Tree", t.Tree.size()}}},
                         {"sigma", a.sigma},
                         {"sigma_hd1", a.sigma_hd1},
                         {"is_mdw", a.is_mdw},
                         {"h", a.h},
                         {"h_fallback", a.h_fallback},
                         {"is_trc", a.is_trc}});
    }
    j["roots"] = std::move(roots);
    out << j.dump(2) << '\n';
}

}  // namespace gmt
