#include "gmt/measure.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace gmt {

KdTree::KdTree(const Points& pts, const Eigen::VectorXd& weights, int leaf_size)
    : pts_(&pts), w_(&weights), leaf_size_(leaf_size)
{
    perm_.resize(pts.cols());
    std::iota(perm_.begin(), perm_.end(), Index(0));
    if (!perm_.empty()) {
        nodes_.reserve(2 * pts.cols() / leaf_size + 2);
        build(0, pts.cols(), 0);
    }
}

int KdTree::build(Index lo, Index hi, int depth)
{
    int id = static_cast<int>(nodes_.size());
    nodes_.emplace_back();
    nodes_.back().lo = lo;
    nodes_.back().hi = hi;
    const Index d = pts_->rows();
    Eigen::VectorXd bmin = Eigen::VectorXd::Constant(d, std::numeric_limits<double>::infinity());
    Eigen::VectorXd bmax = -bmin;
    double mass = 0.0;
    for (Index k = lo; k < hi; ++k) {
        bmin = bmin.cwiseMin(pts_->col(perm_[k]));
        bmax = bmax.cwiseMax(pts_->col(perm_[k]));
        mass += (*w_)(perm_[k]);
    }
    nodes_[id].bmin = bmin;
    nodes_[id].bmax = bmax;
    nodes_[id].mass = mass;
    if (hi - lo <= leaf_size_) return id;

    Index axis;
    (bmax - bmin).maxCoeff(&axis);
    if (bmax(axis) - bmin(axis) <= 0.0) return id;  // all points coincide
    Index mid = lo + (hi - lo) / 2;
    std::nth_element(perm_.begin() + lo, perm_.begin() + mid, perm_.begin() + hi,
                     [&](Index a, Index b) { return (*pts_)(axis, a) < (*pts_)(axis, b); });
    int l = build(lo, mid, depth + 1);
    int r = build(mid, hi, depth + 1);
    nodes_[id].left = l;
    nodes_[id].right = r;
    return id;
}

double KdTree::box_min_sq(const Node& nd, const Eigen::Ref<const Eigen::VectorXd>& c) const
{
    double s = 0.0;
    for (Index k = 0; k < c.size(); ++k) {
        double v = 0.0;
        if (c(k) < nd.bmin(k)) v = nd.bmin(k) - c(k);
        else if (c(k) > nd.bmax(k)) v = c(k) - nd.bmax(k);
        s += v * v;
    }
    return s;
}

double KdTree::box_max_sq(const Node& nd, const Eigen::Ref<const Eigen::VectorXd>& c) const
{
    double s = 0.0;
    for (Index k = 0; k < c.size(); ++k) {
        double v = std::max(std::abs(c(k) - nd.bmin(k)), std::abs(c(k) - nd.bmax(k)));
        s += v * v;
    }
    return s;
}

double KdTree::mass_rec(int id, const Eigen::Ref<const Eigen::VectorXd>& c, double r2) const
{
    const Node& nd = nodes_[id];
    if (box_min_sq(nd, c) > r2) return 0.0;
    if (box_max_sq(nd, c) <= r2) return nd.mass;  // whole box inside the ball
    if (nd.left < 0) {
        double m = 0.0;
        for (Index k = nd.lo; k < nd.hi; ++k) {
            Index i = perm_[k];
            if ((pts_->col(i) - c).squaredNorm() <= r2) m += (*w_)(i);
        }
        return m;
    }
    return mass_rec(nd.left, c, r2) + mass_rec(nd.right, c, r2);
}

double KdTree::mass_in_ball(const Eigen::Ref<const Eigen::VectorXd>& c, double r) const
{
    if (nodes_.empty()) return 0.0;
    return mass_rec(0, c, r * r);
}

std::vector<Index> KdTree::indices_in_ball(const Eigen::Ref<const Eigen::VectorXd>& c, double r) const
{
    std::vector<Index> out;
    for_each_in_ball(c, r, [&](Index i) { out.push_back(i); });
    std::sort(out.begin(), out.end());
    return out;
}

void KdTree::nearest_rec(int id, const Eigen::Ref<const Eigen::VectorXd>& c, Index& best,
                         double& best_sq) const
{
    const Node& nd = nodes_[id];
    if (box_min_sq(nd, c) >= best_sq) return;
    if (nd.left < 0) {
        for (Index k = nd.lo; k < nd.hi; ++k) {
            Index i = perm_[k];
            double s = (pts_->col(i) - c).squaredNorm();
            if (s > 0.0 && (s < best_sq || (s == best_sq && i < best))) {
                best_sq = s;
                best = i;
            }
        }
        return;
    }
    int first = nd.left, second = nd.right;
    if (box_min_sq(nodes_[second], c) < box_min_sq(nodes_[first], c)) std::swap(first, second);
    nearest_rec(first, c, best, best_sq);
    nearest_rec(second, c, best, best_sq);
}

std::pair<Index, double> KdTree::nearest_nonzero(const Eigen::Ref<const Eigen::VectorXd>& c) const
{
    Index best = -1;
    double best_sq = std::numeric_limits<double>::infinity();
    if (!nodes_.empty()) nearest_rec(0, c, best, best_sq);
    return {best, std::sqrt(best_sq)};
}

DiscreteMeasure::DiscreteMeasure(Points pts, Eigen::VectorXd weights, int n)
    : pts_(std::make_unique<Points>(std::move(pts))),
      w_(std::make_unique<Eigen::VectorXd>(std::move(weights)))
{
    if (pts_->cols() < 1) throw std::invalid_argument("measure needs at least one atom");
    if (pts_->cols() != w_->size()) throw std::invalid_argument("weights/points size mismatch");
    if (pts_->rows() < 2) throw std::invalid_argument("ambient dimension must be >= 2");
    n_ = n < 0 ? static_cast<int>(pts_->rows()) - 1 : n;
    if (n_ < 1 || n_ > pts_->rows() - 1) throw std::invalid_argument("n must lie in [1, dim-1]");
    if (!pts_->allFinite() || !w_->allFinite()) throw std::invalid_argument("non-finite atom data");
    if ((w_->array() < 0.0).any()) throw std::invalid_argument("negative weight");
    rebuild();
}

DiscreteMeasure::DiscreteMeasure(const DiscreteMeasure& o)
    : pts_(std::make_unique<Points>(*o.pts_)),
      w_(std::make_unique<Eigen::VectorXd>(*o.w_)),
      n_(o.n_)
{
    rebuild();
}

DiscreteMeasure& DiscreteMeasure::operator=(const DiscreteMeasure& o)
{
    if (this != &o) {
        pts_ = std::make_unique<Points>(*o.pts_);
        w_ = std::make_unique<Eigen::VectorXd>(*o.w_);
        n_ = o.n_;
        rebuild();
    }
    return *this;
}

void DiscreteMeasure::rebuild()
{
    total_ = w_->sum();
    tree_ = std::make_unique<KdTree>(*pts_, *w_);
}

double DiscreteMeasure::mass_of(const std::vector<Index>& atoms) const
{
    double m = 0.0;
    for (Index i : atoms) m += (*w_)(i);
    return m;
}

double mass_in_ball(const DiscreteMeasure& mu, const Ball<>& b)
{
    return mu.index().mass_in_ball(b.center, b.radius);
}

double min_gap(const DiscreteMeasure& mu)
{
    double g = std::numeric_limits<double>::infinity();
    for (Index i = 0; i < mu.size(); ++i) g = std::min(g, mu.index().nearest_nonzero(mu.point(i)).second);
    return g;
}

double bbox_diameter(const DiscreteMeasure& mu)
{
    return (mu.points().rowwise().maxCoeff() - mu.points().rowwise().minCoeff()).norm();
}

double diameter(const DiscreteMeasure& mu, const std::vector<Index>& atoms)
{
    double d2 = 0.0;
    for (std::size_t a = 0; a < atoms.size(); ++a)
        for (std::size_t b = a + 1; b < atoms.size(); ++b)
            d2 = std::max(d2, (mu.point(atoms[a]) - mu.point(atoms[b])).squaredNorm());
    return std::sqrt(d2);
}

double growth_constant(const DiscreteMeasure& mu)
{
    double g = min_gap(mu);
    if (!std::isfinite(g)) return std::numeric_limits<double>::infinity();
    double diam = bbox_diameter(mu);
    double best = 0.0;
    for (Index i = 0; i < mu.size(); ++i) {
        for (double r = g;; r *= 2.0) {
            best = std::max(best, mu.index().mass_in_ball(mu.point(i), r) / std::pow(r, mu.n()));
            if (r >= diam) break;
        }
    }
    return best;
}

namespace {

void check_cap(std::int64_t count, const GeneratorSettings& g)
{
    if (count > g.atom_cap) throw std::invalid_argument("generator depth exceeds atom cap");
}

}  // namespace

DiscreteMeasure generate(const std::string& kind, int depth, const GeneratorSettings& g)
{
    if (depth < 0) throw std::invalid_argument("depth must be >= 0");
    if (depth > 40) throw std::invalid_argument("generator depth exceeds atom cap");
    if (kind == "segment" || kind == "cantor_line") {
        std::int64_t m = std::int64_t(1) << depth;
        check_cap(m, g);
        Points p(2, m);
        Eigen::VectorXd w = Eigen::VectorXd::Constant(m, std::ldexp(1.0, -depth));
        for (std::int64_t i = 0; i < m; ++i) {
            double x;
            if (kind == "segment") {
                x = (i + 0.5) / double(m);
            } else {
                // Middle-half Cantor set: keep [0,1/4] and [3/4,1] at every step.
                x = 0.0;
                double len = 1.0;
                for (int b = depth - 1; b >= 0; --b) {
                    len /= 4.0;
                    if ((i >> b) & 1) x += 3.0 * len;
                }
                x += len / 2.0;
            }
            p(0, i) = x;
            p(1, i) = 0.5;
        }
        return DiscreteMeasure(std::move(p), std::move(w), 1);
    }
    if (kind == "plane_patch") {
        std::int64_t side = std::int64_t(1) << depth;
        check_cap(side * side, g);
        Points p(3, side * side);
        Eigen::VectorXd w = Eigen::VectorXd::Constant(side * side, std::ldexp(1.0, -2 * depth));
        for (std::int64_t a = 0; a < side; ++a)
            for (std::int64_t b = 0; b < side; ++b) {
                p(0, a * side + b) = (a + 0.5) / double(side);
                p(1, a * side + b) = (b + 0.5) / double(side);
                p(2, a * side + b) = 0.5;
            }
        return DiscreteMeasure(std::move(p), std::move(w), 2);
    }
    if (kind == "lipschitz_graph") {
        if (!(g.lipschitz_slope >= 0.0 && g.lipschitz_slope <= 1.0))
            throw std::invalid_argument("lipschitz slope must lie in [0,1]");
        std::int64_t m = std::int64_t(1) << depth;
        check_cap(m, g);
        const double omega = 2.0 * M_PI * g.lipschitz_frequency;
        // f(x) = 1/2 + a sin(omega x)/omega has |f'| <= a.
        Points p(2, m);
        Eigen::VectorXd w(m);
        for (std::int64_t i = 0; i < m; ++i) {
            double x = (i + 0.5) / double(m);
            p(0, i) = x;
            p(1, i) = 0.5 + g.lipschitz_slope * std::sin(omega * x) / omega;
            double slope = g.lipschitz_slope * std::cos(omega * x);
            w(i) = std::sqrt(1.0 + slope * slope);
        }
        w /= w.sum();
        return DiscreteMeasure(std::move(p), std::move(w), 1);
    }
    if (kind == "cantor4corner") {
        std::int64_t m = std::int64_t(1) << (2 * depth);
        check_cap(m, g);
        Points p(2, m);
        Eigen::VectorXd w = Eigen::VectorXd::Constant(m, std::ldexp(1.0, -2 * depth));
        for (std::int64_t i = 0; i < m; ++i) {
            double x = 0.0, y = 0.0, len = 1.0;
            for (int level = depth - 1; level >= 0; --level) {
                len /= 4.0;
                int digit = static_cast<int>((i >> (2 * level)) & 3);
                if (digit & 1) x += 3.0 * len;
                if (digit & 2) y += 3.0 * len;
            }
            p(0, i) = x + len / 2.0;
            p(1, i) = y + len / 2.0;
        }
        return DiscreteMeasure(std::move(p), std::move(w), 1);
    }
    throw std::invalid_argument("unknown generator kind: " + kind);
}

std::vector<std::int64_t> cantor4corner_labels(int depth, int j)
{
    if (j < 0 || j > depth) throw std::invalid_argument("label generation out of range");
    std::int64_t m = std::int64_t(1) << (2 * depth);
    std::vector<std::int64_t> out(m);
    for (std::int64_t i = 0; i < m; ++i) out[i] = i >> (2 * (depth - j));
    return out;
}

DiscreteMeasure read_measure_csv(std::istream& in)
{
    std::vector<std::vector<double>> rows;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        std::vector<double> vals;
        std::stringstream ss(line);
        std::string cell;
        bool numeric = true;
        while (std::getline(ss, cell, ',')) {
            try {
                std::size_t used = 0;
                vals.push_back(std::stod(cell, &used));
                if (cell.find_first_not_of(" \t", used) != std::string::npos) numeric = false;
            } catch (const std::exception&) {
                numeric = false;
            }
        }
        if (!numeric) {
            if (first) {
                first = false;
                continue;  // header
            }
            throw std::invalid_argument("malformed measure CSV line: " + line);
        }
        first = false;
        if (!rows.empty() && vals.size() != rows.front().size())
            throw std::invalid_argument("ragged measure CSV");
        rows.push_back(std::move(vals));
    }
    if (rows.empty()) throw std::invalid_argument("empty measure CSV");
    const Index cols = static_cast<Index>(rows.front().size());
    if (cols < 3) throw std::invalid_argument("measure CSV needs x_0..x_n,weight with n >= 1");
    Points p(cols - 1, static_cast<Index>(rows.size()));
    Eigen::VectorXd w(static_cast<Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (Index k = 0; k + 1 < cols; ++k) p(k, i) = rows[i][k];
        w(i) = rows[i].back();
    }
    return DiscreteMeasure(std::move(p), std::move(w));
}

DiscreteMeasure read_measure_json(std::istream& in)
{
    nlohmann::json j = nlohmann::json::parse(in);
    const int dim = j.at("dim").get<int>();
    const int n = j.value("n", dim - 1);
    const auto& atoms = j.at("atoms");
    Points p(dim, static_cast<Index>(atoms.size()));
    Eigen::VectorXd w(static_cast<Index>(atoms.size()));
    Index i = 0;
    for (const auto& a : atoms) {
        const auto& pos = a.at("p");
        if (static_cast<int>(pos.size()) != dim) throw std::invalid_argument("atom dimension mismatch");
        for (int k = 0; k < dim; ++k) p(k, i) = pos[k].get<double>();
        w(i) = a.at("w").get<double>();
        ++i;
    }
    return DiscreteMeasure(std::move(p), std::move(w), n);
}

namespace {

bool ends_with(const std::string& s, const std::string& suf)
{
    return s.size() >= suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
}

}  // namespace

DiscreteMeasure read_measure(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    return ends_with(path, ".json") ? read_measure_json(in) : read_measure_csv(in);
}

void write_measure_csv(const DiscreteMeasure& mu, std::ostream& out)
{
    std::ostringstream s;
    s.precision(17);
    for (int k = 0; k < mu.dim(); ++k) s << "x_" << k << ',';
    s << "weight\n";
    for (Index i = 0; i < mu.size(); ++i) {
        for (int k = 0; k < mu.dim(); ++k) s << mu.point(i)(k) << ',';
        s << mu.weight(i) << '\n';
    }
    out << s.str();
}

void write_measure_json(const DiscreteMeasure& mu, std::ostream& out)
{
    nlohmann::json j;
    j["dim"] = mu.dim();
    j["n"] = mu.n();
    auto& atoms = j["atoms"] = nlohmann::json::array();
    for (Index i = 0; i < mu.size(); ++i) {
        std::vector<double> pos(mu.point(i).data(), mu.point(i).data() + mu.dim());
        atoms.push_back({{"p", pos}, {"w", mu.weight(i)}});
    }
    out << j.dump() << '\n';
}

void write_measure(const DiscreteMeasure& mu, const std::string& path)
{
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    if (ends_with(path, ".json")) write_measure_json(mu, out);
    else write_measure_csv(mu, out);
}

}  // namespace gmt
