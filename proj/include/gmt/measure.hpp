#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <memory>
#include <string>
#include <vector>

namespace gmt {

using Index = Eigen::Index;

template<typename Scalar = double>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template<typename Scalar = double>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

// Column-major point cloud: one column per point.
using Points = Mat<double>;

template<typename Scalar = double>
struct Ball {
    Vec<Scalar> center;
    Scalar radius;
};

// Static kd-tree over the columns of a point matrix. Nodes cache subtree
// mass so closed-ball mass queries skip fully covered boxes.
class KdTree {
public:
    KdTree() = default;
    KdTree(const Points& pts, const Eigen::VectorXd& weights, int leaf_size = 16);

    template<typename F>
    void for_each_in_ball(const Eigen::Ref<const Eigen::VectorXd>& c, double r, F&& f) const
    {
        if (nodes_.empty()) return;
        visit(0, c, r * r, f);
    }

    double mass_in_ball(const Eigen::Ref<const Eigen::VectorXd>& c, double r) const;
    std::vector<Index> indices_in_ball(const Eigen::Ref<const Eigen::VectorXd>& c, double r) const;

    // Nearest atom at positive distance from c (distance-0 atoms are skipped).
    // Returns {index, distance}; index -1 when none exists.
    std::pair<Index, double> nearest_nonzero(const Eigen::Ref<const Eigen::VectorXd>& c) const;

    const Points& points() const { return *pts_; }

private:
    struct Node {
        Index lo = 0, hi = 0;
        int left = -1, right = -1;
        Eigen::VectorXd bmin, bmax;
        double mass = 0.0;
    };

    int build(Index lo, Index hi, int depth);
    double box_min_sq(const Node& nd, const Eigen::Ref<const Eigen::VectorXd>& c) const;
    double box_max_sq(const Node& nd, const Eigen::Ref<const Eigen::VectorXd>& c) const;

    template<typename F>
    void visit(int id, const Eigen::Ref<const Eigen::VectorXd>& c, double r2, F& f) const
    {
        const Node& nd = nodes_[id];
        if (box_min_sq(nd, c) > r2) return;
        if (nd.left < 0) {
            for (Index k = nd.lo; k < nd.hi; ++k) {
                Index i = perm_[k];
                if ((pts_->col(i) - c).squaredNorm() <= r2) f(i);
            }
            return;
        }
        visit(nd.left, c, r2, f);
        visit(nd.right, c, r2, f);
    }

    double mass_rec(int id, const Eigen::Ref<const Eigen::VectorXd>& c, double r2) const;
    void nearest_rec(int id, const Eigen::Ref<const Eigen::VectorXd>& c, Index& best, double& best_sq) const;

    const Points* pts_ = nullptr;
    const Eigen::VectorXd* w_ = nullptr;
    std::vector<Index> perm_;
    std::vector<Node> nodes_;
    int leaf_size_ = 16;
};

// Weighted atom cloud in R^{n+1}. Immutable after construction.
class DiscreteMeasure {
public:
    DiscreteMeasure(Points pts, Eigen::VectorXd weights, int n = -1);

    DiscreteMeasure(const DiscreteMeasure& o);
    DiscreteMeasure& operator=(const DiscreteMeasure& o);
    DiscreteMeasure(DiscreteMeasure&&) noexcept = default;
    DiscreteMeasure& operator=(DiscreteMeasure&&) noexcept = default;

    int dim() const { return static_cast<int>(pts_->rows()); }
    int n() const { return n_; }
    Index size() const { return pts_->cols(); }
    const Points& points() const { return *pts_; }
    auto point(Index i) const { return pts_->col(i); }
    double weight(Index i) const { return (*w_)(i); }
    const Eigen::VectorXd& weights() const { return *w_; }
    double total_mass() const { return total_; }
    const KdTree& index() const { return *tree_; }

    double mass_of(const std::vector<Index>& atoms) const;

private:
    void rebuild();

    // Heap-held so moves keep the tree's pointers valid.
    std::unique_ptr<Points> pts_;
    std::unique_ptr<Eigen::VectorXd> w_;
    std::unique_ptr<KdTree> tree_;
    int n_ = 1;
    double total_ = 0.0;
};

double mass_in_ball(const DiscreteMeasure& mu, const Ball<>& b);

// Minimal positive distance between atoms (infinity for a single location).
double min_gap(const DiscreteMeasure& mu);

// Diagonal of the bounding box; an upper bound for the support diameter.
double bbox_diameter(const DiscreteMeasure& mu);

// Exact support diameter by all pairs.
double diameter(const DiscreteMeasure& mu, const std::vector<Index>& atoms);

// sup of mu(B(x,r))/r^n over atoms x and radii gap*2^j up to the diameter.
double growth_constant(const DiscreteMeasure& mu);

struct GeneratorSettings {
    double lipschitz_slope = 0.5;   // sup |f'|, must be <= 1
    int lipschitz_frequency = 2;
    std::int64_t atom_cap = std::int64_t(1) << 22;
};

// kind: segment | plane_patch | lipschitz_graph | cantor_line | cantor4corner
DiscreteMeasure generate(const std::string& kind, int depth, const GeneratorSettings& g = {});

// Generation-j square label of each cantor4corner atom (base-4 digits).
std::vector<std::int64_t> cantor4corner_labels(int depth, int j);

DiscreteMeasure read_measure_csv(std::istream& in);
DiscreteMeasure read_measure_json(std::istream& in);
DiscreteMeasure read_measure(const std::string& path);
void write_measure_csv(const DiscreteMeasure& mu, std::ostream& out);
void write_measure_json(const DiscreteMeasure& mu, std::ostream& out);
void write_measure(const DiscreteMeasure& mu, const std::string& path);

}  // namespace gmt
