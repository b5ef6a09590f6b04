#include "gmt/riesz.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace gmt {

namespace {

// |u|^{-(n+1)} from |u|^2.
inline double inv_pow(double r2, int n)
{
    switch (n) {
    case 1: return 1.0 / r2;
    case 2: {
        const double inv = 1.0 / r2;
        return inv * std::sqrt(inv);
    }
    case 3: {
        const double inv = 1.0 / r2;
        return inv * inv;
    }
    default: return std::pow(r2, -0.5 * (n + 1));
    }
}

struct Sources {
    const double* p;  // d x N column-major
    const double* w;
    const double* phi;  // may be null
    Index N;
    int d;
};

template<int D>
void direct_sum(const Sources& s, const double* x, double phix, Index self, int n, double* out)
{
    const int d = D > 0 ? D : s.d;
    double acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
    std::vector<double> big;
    double* a = acc;
    if (d > 8) {
        big.assign(d, 0.0);
        a = big.data();
    }
    for (Index j = 0; j < s.N; ++j) {
        if (j == self) continue;
        const double* y = s.p + j * d;
        double r2 = 0.0;
        for (int k = 0; k < d; ++k) {
            const double u = x[k] - y[k];
            r2 += u * u;
        }
        if (r2 == 0.0) continue;
        if (s.phi) r2 += phix * s.phi[j];
        const double f = s.w[j] * inv_pow(r2, n);
        for (int k = 0; k < d; ++k) a[k] += f * (x[k] - y[k]);
    }
    for (int k = 0; k < d; ++k) out[k] = a[k];
}

void direct_dispatch(const Sources& s, const double* x, double phix, Index self, int n, double* out)
{
    switch (s.d) {
    case 2: direct_sum<2>(s, x, phix, self, n, out); break;
    case 3: direct_sum<3>(s, x, phix, self, n, out); break;
    default: direct_sum<0>(s, x, phix, self, n, out); break;
    }
}

// Barnes–Hut tree. Far cells are replaced by their mass at the center of
// mass, so the dipole term vanishes identically and the first neglected term
// is quadrupole order, O((size/dist)^2) relative.
class BHTree {
public:
    BHTree(const DiscreteMeasure& mu, const std::vector<double>* phi, int leaf = 16) : d_(mu.dim()), n_(mu.n())
    {
        const Index N = mu.size();
        perm_.resize(N);
        std::iota(perm_.begin(), perm_.end(), Index(0));
        pts_.resize(d_ * N);
        w_.resize(N);
        if (phi) phi_.resize(N);
        const Points& P = mu.index().points();
        src_ = &P;
        weights_ = &mu.weights();
        srcphi_ = phi;
        leaf_ = leaf;
        if (N > 0) build(0, N);
        for (Index k = 0; k < N; ++k) {
            const Index i = perm_[k];
            for (int c = 0; c < d_; ++c) pts_[k * d_ + c] = P(c, i);
            w_[k] = mu.weight(i);
            if (phi) phi_[k] = (*phi)[i];
        }
    }

    void eval(const double* x, double phix, Index self, double theta, double* out) const
    {
        std::fill(out, out + d_, 0.0);
        if (nodes_.empty()) return;
        const double th2 = theta * theta;
        int stack[128];
        int top = 0;
        stack[top++] = 0;
        while (top > 0) {
            const int id = stack[--top];
            const Node& nd = nodes_[id];
            if (nd.mass == 0.0) continue;
            const double* com = &com_[id * d_];
            const double* bmin = &bmin_[id * d_];
            const double* bmax = &bmax_[id * d_];
            double r2 = 0.0, out2 = 0.0;
            for (int c = 0; c < d_; ++c) {
                const double u = x[c] - com[c];
                r2 += u * u;
                const double lo = bmin[c] - x[c], hi = x[c] - bmax[c];
                const double g = std::max({lo, hi, 0.0});
                out2 += g * g;
            }
            // Far: target outside the box and size/dist below theta.
            if (out2 > 0.0 && nd.size2 <= th2 * r2) {
                double rr = r2;
                if (!phi_.empty()) rr += phix * nd.phi;
                const double f = nd.mass * inv_pow(rr, n_);
                for (int c = 0; c < d_; ++c) out[c] += f * (x[c] - com[c]);
                continue;
            }
            if (nd.left < 0) {
                for (Index k = nd.lo; k < nd.hi; ++k) {
                    if (perm_[k] == self) continue;
                    const double* y = &pts_[k * d_];
                    double s2 = 0.0;
                    for (int c = 0; c < d_; ++c) {
                        const double u = x[c] - y[c];
                        s2 += u * u;
                    }
                    if (s2 == 0.0) continue;
                    if (!phi_.empty()) s2 += phix * phi_[k];
                    const double f = w_[k] * inv_pow(s2, n_);
                    for (int c = 0; c < d_; ++c) out[c] += f * (x[c] - y[c]);
                }
                continue;
            }
            stack[top++] = nd.left;
            stack[top++] = nd.right;
        }
    }

private:
    struct Node {
        Index lo = 0, hi = 0;
        int left = -1, right = -1;
        double mass = 0.0, size2 = 0.0, phi = 0.0;
    };

    int build(Index lo, Index hi)
    {
        const int id = static_cast<int>(nodes_.size());
        nodes_.emplace_back();
        com_.resize(nodes_.size() * d_, 0.0);
        bmin_.resize(nodes_.size() * d_, std::numeric_limits<double>::infinity());
        bmax_.resize(nodes_.size() * d_, -std::numeric_limits<double>::infinity());
        Node nd;
        nd.lo = lo;
        nd.hi = hi;
        double* com = &com_[id * d_];
        double* bmin = &bmin_[id * d_];
        double* bmax = &bmax_[id * d_];
        double wsum = 0.0, phisum = 0.0;
        for (Index k = lo; k < hi; ++k) {
            const Index i = perm_[k];
            const double w = (*weights_)(i);
            wsum += w;
            if (srcphi_) phisum += w * (*srcphi_)[i];
            for (int c = 0; c < d_; ++c) {
                const double v = (*src_)(c, i);
                bmin[c] = std::min(bmin[c], v);
                bmax[c] = std::max(bmax[c], v);
                com[c] += w * v;
            }
        }
        nd.mass = wsum;
        for (int c = 0; c < d_; ++c) {
            com[c] = wsum > 0 ? com[c] / wsum : 0.5 * (bmin[c] + bmax[c]);
            const double e = bmax[c] - bmin[c];
            nd.size2 += e * e;
        }
        nd.phi = wsum > 0 ? phisum / wsum : 0.0;
        if (hi - lo > leaf_) {
            int axis = 0;
            for (int c = 1; c < d_; ++c)
                if (bmax[c] - bmin[c] > bmax[axis] - bmin[axis]) axis = c;
            const Index mid = lo + (hi - lo) / 2;
            std::nth_element(perm_.begin() + lo, perm_.begin() + mid, perm_.begin() + hi,
                             [&](Index a, Index b) { return (*src_)(axis, a) < (*src_)(axis, b); });
            nd.left = build(lo, mid);
            nd.right = build(mid, hi);
        }
        nodes_[id] = std::move(nd);
        return id;
    }

    int d_, n_;
    int leaf_ = 16;
    std::vector<Node> nodes_;
    std::vector<double> com_, bmin_, bmax_;  // d entries per node
    std::vector<Index> perm_;
    std::vector<double> pts_, w_, phi_;
    const Points* src_ = nullptr;
    const Eigen::VectorXd* weights_ = nullptr;
    const std::vector<double>* srcphi_ = nullptr;
};

// Opening angle for a requested relative accuracy.
double opening_angle(double accuracy)
{
    return std::clamp(10.0 * std::sqrt(accuracy), 0.05, 0.8);
}

void check_no_coincident(const DiscreteMeasure& mu)
{
    for (Index i = 0; i < mu.size(); ++i) {
        if (mu.weight(i) <= 0) continue;
        mu.index().for_each_in_ball(mu.point(i), 0.0, [&](Index j) {
            if (j != i && mu.weight(j) > 0)
                throw std::invalid_argument("coincident atoms " + std::to_string(i) + " and " + std::to_string(j) +
                                            "; merge them first");
        });
    }
}

}  // namespace

double SuppressionFn::certify(const Points& sample)
{
    std::vector<double> v(sample.cols());
    for (Index i = 0; i < sample.cols(); ++i) v[i] = eval(sample.col(i));
    double best = 0.0;
    for (Index i = 0; i < sample.cols(); ++i)
        for (Index j = i + 1; j < sample.cols(); ++j) {
            const double dist = (sample.col(i) - sample.col(j)).norm();
            if (dist > 0) best = std::max(best, std::abs(v[i] - v[j]) / dist);
        }
    lipschitz_cert = best;
    return best;
}

SuppressionFn SuppressionFn::constant(double c)
{
    SuppressionFn f;
    f.eval = [c](const Eigen::VectorXd&) { return c; };
    f.grad = [](const Eigen::VectorXd& x) { return Eigen::VectorXd::Zero(x.size()).eval(); };
    return f;
}

SuppressionFn SuppressionFn::smooth_distance(Eigen::VectorXd c, double a, double b)
{
    SuppressionFn f;
    f.eval = [c, a, b](const Eigen::VectorXd& x) { return a * std::sqrt((x - c).squaredNorm() + b * b); };
    f.grad = [c, a, b](const Eigen::VectorXd& x) {
        const double s = std::sqrt((x - c).squaredNorm() + b * b);
        return s > 0 ? Eigen::VectorXd(a * (x - c) / s) : Eigen::VectorXd::Zero(x.size()).eval();
    };
    f.lipschitz_cert = a;
    return f;
}

Backend parse_backend(const std::string& s)
{
    if (s == "direct") return Backend::direct;
    if (s == "tree") return Backend::tree;
    throw std::invalid_argument("unknown backend '" + s + "'");
}

Eigen::VectorXd truncated_riesz(const DiscreteMeasure& mu, const Eigen::Ref<const Eigen::VectorXd>& x, double eps)
{
    Eigen::VectorXd s = Eigen::VectorXd::Zero(mu.dim());
    const double e2 = eps * eps;
    for (Index j = 0; j < mu.size(); ++j) {
        const Eigen::VectorXd u = x - mu.point(j);
        const double r2 = u.squaredNorm();
        if (r2 > e2) s += mu.weight(j) * inv_pow(r2, mu.n()) * u;
    }
    return s;
}

AtomField riesz_field(const DiscreteMeasure& mu, const Points& targets, const std::vector<Index>& self_index,
                      Backend backend, double accuracy, const SuppressionFn* phi, const std::vector<double>* phi_targets)
{
    const Index T = targets.cols();
    const int d = mu.dim();
    if (targets.rows() != d) throw std::invalid_argument("target dimension mismatch");
    if (!self_index.empty() && static_cast<Index>(self_index.size()) != T)
        throw std::invalid_argument("self_index size mismatch");
    if (backend == Backend::tree && !(accuracy > 0 && accuracy <= 0.1))
        throw std::invalid_argument("accuracy must lie in (0, 0.1]");

    std::vector<double> src_phi;
    std::vector<double> tgt_phi;
    if (phi) {
        src_phi.resize(mu.size());
        for (Index j = 0; j < mu.size(); ++j) src_phi[j] = (*phi)(mu.point(j));
        if (phi_targets) {
            tgt_phi = *phi_targets;
        } else {
            tgt_phi.resize(T);
            for (Index t = 0; t < T; ++t) tgt_phi[t] = (*phi)(targets.col(t));
        }
    }

    Mat<double> out(d, T);
    auto self_of = [&](Index t) { return self_index.empty() ? Index(-1) : self_index[t]; };
    if (backend == Backend::direct) {
        const Points& P = mu.index().points();
        Sources s{P.data(), mu.weights().data(), phi ? src_phi.data() : nullptr, mu.size(), d};
#pragma omp parallel for schedule(dynamic, 64)
        for (Index t = 0; t < T; ++t)
            direct_dispatch(s, targets.col(t).data(), phi ? tgt_phi[t] : 0.0, self_of(t), mu.n(), out.col(t).data());
    } else {
        const BHTree tree(mu, phi ? &src_phi : nullptr);
        const double theta = opening_angle(accuracy);
#pragma omp parallel for schedule(dynamic, 64)
        for (Index t = 0; t < T; ++t)
            tree.eval(targets.col(t).data(), phi ? tgt_phi[t] : 0.0, self_of(t), theta, out.col(t).data());
    }
    return out.transpose();
}

AtomField pv_riesz_at_atoms(const DiscreteMeasure& mu, Backend backend, double accuracy)
{
    check_no_coincident(mu);
    std::vector<Index> self(mu.size());
    std::iota(self.begin(), self.end(), Index(0));
    return riesz_field(mu, mu.index().points(), self, backend, accuracy);
}

double maximal_riesz(const DiscreteMeasure& mu, const Eigen::Ref<const Eigen::VectorXd>& x,
                     const std::vector<double>& eps_grid)
{
    if (eps_grid.empty()) throw std::invalid_argument("empty eps grid");
    double best = 0.0;
    for (double e : eps_grid) best = std::max(best, truncated_riesz(mu, x, e).norm());
    return best;
}

double maximal_riesz_exact(const DiscreteMeasure& mu, const Eigen::Ref<const Eigen::VectorXd>& x, double eps_min)
{
    // The truncated sum only changes when eps crosses a distance |x - y|;
    // adding atoms from the farthest inward enumerates every attainable value.
    std::vector<std::pair<double, Index>> by_dist(mu.size());
    for (Index j = 0; j < mu.size(); ++j) by_dist[j] = {(x - mu.point(j)).norm(), j};
    std::sort(by_dist.begin(), by_dist.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    Eigen::VectorXd s = Eigen::VectorXd::Zero(mu.dim());
    double best = 0.0;
    std::size_t k = 0;
    while (k < by_dist.size()) {
        const double r = by_dist[k].first;
        if (!(r > eps_min) || r == 0.0) break;
        for (; k < by_dist.size() && by_dist[k].first == r; ++k) {
            const Index j = by_dist[k].second;
            s += mu.weight(j) * inv_pow(r * r, mu.n()) * (x - mu.point(j));
        }
        best = std::max(best, s.norm());
    }
    return best;
}

Eigen::VectorXd suppressed_riesz(const DiscreteMeasure& mu, const Eigen::VectorXd& x, const SuppressionFn& phi)
{
    const double px = phi(x);
    Eigen::VectorXd s = Eigen::VectorXd::Zero(mu.dim());
    for (Index j = 0; j < mu.size(); ++j)
        s += mu.weight(j) * suppressed_kernel(x, mu.point(j), px, phi(mu.point(j)), mu.n());
    return s;
}

double w_energy(const DiscreteMeasure& mu, const std::vector<Index>& subset)
{
    if (subset.size() < 2) return 0.0;
    const double diam = diameter(mu, subset);
    if (diam == 0.0) return 0.0;
    const int n = mu.n();
    double s = 0.0;
    for (std::size_t a = 0; a < subset.size(); ++a)
        for (std::size_t b = a + 1; b < subset.size(); ++b) {
            const double r = (mu.point(subset[a]) - mu.point(subset[b])).norm();
            if (r == 0.0) continue;
            s += 2.0 * mu.weight(subset[a]) * mu.weight(subset[b]) / std::pow(r, n - 1);
        }
    return s / diam;
}

CotlarSides cotlar_sides(const DiscreteMeasure& mu, const AtomField& pv, const Eigen::VectorXd& x, double r0,
                         double theta1)
{
    CotlarSides out;
    const int n = mu.n();
    out.lhs = maximal_riesz_exact(mu, x, r0 * (1 - 1e-12));

    const double reach = bbox_diameter(mu) + (x - mu.point(0)).norm();
    const double b = std::pow(128.0, n + 2);
    bool ok = true;
    double mx = 0.0;
    for (double r = r0; r <= 2 * reach; r *= 2) {
        std::vector<Index> in = mu.index().indices_in_ball(x, r);
        double m = 0.0, fint = 0.0;
        for (Index a : in) {
            m += mu.weight(a);
            fint += mu.weight(a) * pv.row(a).norm();
        }
        if (m / std::pow(r, n) > theta1 * (1 + 1e-12)) ok = false;
        if (m == 0.0) continue;
        const bool doubling = mu.index().mass_in_ball(x, 16 * r) <= b * m;
        if (!doubling) continue;
        if (w_energy(mu, in) > theta1 * m * (1 + 1e-12)) ok = false;
        // ties in the sup resolve to the smaller radius
        if (r > r0 && fint / m > mx) mx = fint / m;
    }
    out.maximal_term = mx;
    out.rhs = mx + theta1;
    out.hypotheses_met = ok;
    return out;
}

Eigen::RowVectorXd atom_mean(const DiscreteMeasure& mu, const AtomField& f, const std::vector<Index>& atoms)
{
    Eigen::RowVectorXd s = Eigen::RowVectorXd::Zero(f.cols());
    double m = 0.0;
    for (Index a : atoms) {
        s += mu.weight(a) * f.row(a);
        m += mu.weight(a);
    }
    return m > 0 ? Eigen::RowVectorXd(s / m) : s;
}

double l2_inner(const DiscreteMeasure& mu, const AtomField& f, const AtomField& g)
{
    return (f.cwiseProduct(g).rowwise().sum().array() * mu.weights().array()).sum();
}

AtomField haar_delta(const Lattice& lat, const AtomField& f, CubeId q)
{
    const DiscreteMeasure& mu = lat.measure();
    AtomField out = AtomField::Zero(f.rows(), f.cols());
    const Cube& c = lat.cube(q);
    if (c.children.empty()) return out;
    const Eigen::RowVectorXd mq = atom_mean(mu, f, c.atoms);
    for (CubeId s : c.children) {
        const Eigen::RowVectorXd ms = atom_mean(mu, f, lat.cube(s).atoms) - mq;
        for (Index a : lat.cube(s).atoms) out.row(a) = ms;
    }
    return out;
}

HaarEnergy haar_energy(const Lattice& lat, const AtomField& f)
{
    const DiscreteMeasure& mu = lat.measure();
    const std::size_t C = lat.size();
    // Bottom-up weighted sums give every cell mean in one pass.
    Mat<double> sums = Mat<double>::Zero(C, f.cols());
    std::vector<double> mass(C, 0.0);
    for (CubeId q : lat.generation(lat.kmax()))
        for (Index a : lat.cube(q).atoms) {
            sums.row(q) += mu.weight(a) * f.row(a);
            mass[q] += mu.weight(a);
        }
    for (CubeId q = static_cast<CubeId>(C) - 1; q >= 0; --q) {
        const CubeId p = lat.cube(q).parent;
        if (p < 0) continue;
        sums.row(p) += sums.row(q);
        mass[p] += mass[q];
    }
    auto mean = [&](CubeId q) -> Eigen::RowVectorXd {
        return mass[q] > 0 ? Eigen::RowVectorXd(sums.row(q) / mass[q]) : Eigen::RowVectorXd::Zero(f.cols());
    };

    HaarEnergy e;
    for (CubeId q = 0; q < static_cast<CubeId>(C); ++q) {
        const Cube& c = lat.cube(q);
        if (c.children.empty()) continue;
        const Eigen::RowVectorXd mq = mean(q);
        for (CubeId s : c.children) e.haar_sum += mass[s] * (mean(s) - mq).squaredNorm();
    }
    const Eigen::RowVectorXd m0 = mean(lat.root());
    for (CubeId q : lat.generation(lat.kmax())) {
        const Eigen::RowVectorXd mq = mean(q);
        for (Index a : lat.cube(q).atoms) {
            e.centered_norm += mu.weight(a) * (f.row(a) - m0).squaredNorm();
            e.residual += mu.weight(a) * (f.row(a) - mq).squaredNorm();
        }
    }
    return e;
}

AtomField coarse_haar(const Lattice& lat, const AtomField& f, CubeId q, const std::vector<CubeId>& family)
{
    const DiscreteMeasure& mu = lat.measure();
    AtomField out = AtomField::Zero(f.rows(), f.cols());
    if (family.empty()) return out;
    const Eigen::RowVectorXd m2q = atom_mean(mu, f, lambda_dilate(lat, q, 2.0).atoms);
    for (CubeId s : family) {
        const Eigen::RowVectorXd d = atom_mean(mu, f, lat.cube(s).atoms) - m2q;
        for (Index a : lat.cube(s).atoms) out.row(a) = d;
    }
    return out;
}

std::vector<CubeId> parent_neighbors(const Lattice& lat, CubeId q)
{
    const int g = lat.cube(q).gen;
    if (g <= lat.k0()) return {};
    std::vector<CubeId> out;
    for (Index a : lambda_dilate(lat, q, 2.0).atoms) out.push_back(lat.cell_of(a, g - 1));
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

namespace {

Eigen::VectorXd sum_excluding(const Lattice& lat, const Eigen::VectorXd& x, const std::vector<Index>& outer,
                              const std::vector<Index>& inner)
{
    const DiscreteMeasure& mu = lat.measure();
    Eigen::VectorXd s = Eigen::VectorXd::Zero(mu.dim());
    // both atom lists are sorted
    auto it = inner.begin();
    for (Index y : outer) {
        while (it != inner.end() && *it < y) ++it;
        if (it != inner.end() && *it == y) continue;
        s += mu.weight(y) * riesz_kernel(x, mu.point(y), mu.n());
    }
    return s;
}

}  // namespace

AtomField localized_riesz(const Lattice& lat, const std::vector<CubeId>& family, CubeId r)
{
    const DiscreteMeasure& mu = lat.measure();
    AtomField out = AtomField::Zero(mu.size(), mu.dim());
    std::vector<char> owned(mu.size(), 0);
    for (CubeId q : family)
        for (Index a : lat.cube(q).atoms) {
            if (owned[a]) throw std::invalid_argument("localized_riesz: family cells overlap");
            owned[a] = 1;
        }
    const std::vector<Index> two_r = lambda_dilate(lat, r, 2.0).atoms;
    for (CubeId q : family) {
        const std::vector<Index> two_q = lambda_dilate(lat, q, 2.0).atoms;
        for (Index a : lat.cube(q).atoms) out.row(a) = sum_excluding(lat, mu.point(a), two_r, two_q).transpose();
    }
    return out;
}

Eigen::VectorXd localized_riesz_at_center(const Lattice& lat, CubeId q, CubeId r)
{
    return sum_excluding(lat, lat.cube(q).center, lambda_dilate(lat, r, 2.0).atoms, lambda_dilate(lat, q, 2.0).atoms);
}

}  // namespace gmt
