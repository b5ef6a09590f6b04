#pragma once

#include "gmt/coeffs.hpp"

#include <algorithm>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace gmt {

// Families of one corona tree. HD and LD hold the maximal high/low density
// cubes below the root and contained in it; all lists are sorted by id.
struct TreeFamilies {
    CubeId root = -1;
    std::vector<CubeId> HD, LD, Stop, End, Tree;
};

struct RootAnnotation {
    bool is_mdw = false;
    int h = -1;               // -1 when not MDW
    bool h_fallback = false;  // no grid point passed the ratio test
    bool is_trc = false;
    double sigma = 0.0;       // sigma(R)
    double sigma_hd1 = 0.0;   // sigma(HD_1(R))
};

class CoronaForest {
public:
    explicit CoronaForest(const CoeffTable& c);

    const CoeffTable& coeffs() const { return *c_; }
    const Lattice& lattice() const { return c_->lattice(); }
    const Params& params() const { return c_->lattice().params(); }

    // Top, in construction order (parents before the roots they generate).
    const std::vector<CubeId>& top() const { return top_; }
    bool is_root(CubeId q) const { return slot_[q] >= 0; }
    const TreeFamilies& tree(CubeId root) const;
    const RootAnnotation& annotation(CubeId root) const;

    // Root of the deepest tree containing q.
    CubeId owner(CubeId q) const { return owner_[q]; }

    void add_tree(TreeFamilies t);
    void set_annotation(CubeId root, RootAnnotation a);
    void set_owner(std::vector<CubeId> owner) { owner_ = std::move(owner); }

private:
    const CoeffTable* c_;
    std::vector<CubeId> top_;
    std::vector<TreeFamilies> trees_;
    std::vector<RootAnnotation> notes_;
    std::vector<int> slot_;
    std::vector<CubeId> owner_;
};

// The Top forest. Roots are annotated with MDW, h and tractability when
// annotate is set.
CoronaForest build_top(const CoeffTable& c, bool annotate = true);

struct CoverageCheck {
    long uncovered = 0;     // cubes in no tree
    long bad_overlap = 0;   // shared cubes that are not root-of-one / end-of-other
    bool ok() const { return uncovered + bad_overlap == 0; }
};
CoverageCheck check_coverage(const CoronaForest& f);

inline double sigma(const CoeffTable& c, const std::vector<CubeId>& family, double p = 2.0)
{
    return c.sigma(family, p);
}

// Maximal cubes of D(R) \ {R} in LD(R) or hd^{kLambda*}(R).
std::vector<CubeId> stop_star(const CoronaForest& f, CubeId R);
// Stop_*(R) intersected with HD_*(R).
std::vector<CubeId> hd1(const CoronaForest& f, CubeId R);
bool is_mdw(const CoronaForest& f, CubeId R);

// e_j(R): R together with the child-generation cells Q with
// dist(x_R, Q) < l(R)/2 + 2 j l(Q).
struct EnlargedCube {
    CubeId base = -1;
    int j = 0;
    std::vector<CubeId> cells;  // child-generation cells partitioning e_j(R), sorted
    std::vector<Index> atoms;   // sorted
};
EnlargedCube enlarged_cube(const Lattice& lat, CubeId R, int j);

// Radius of B(e^{(k)}(R)) = (1/2 + 2 A0^{-1} (h + k)) l(R).
double enlarged_radius(const Lattice& lat, CubeId R, int h, int k);

// Bad(R) cubes contained in the enlarged cube.
std::vector<CubeId> stop_star(const CoronaForest& f, CubeId R, const EnlargedCube& e);
// Stop_*(e) intersected with HD_*(R).
std::vector<CubeId> hd1(const CoronaForest& f, CubeId R, const EnlargedCube& e);

struct HChoice {
    int j = 0;
    int h = 0;
    bool fallback = false;
};
// Minimal j passing the sigma(HD_1) ratio test. Desk grid {1..4} compared
// against j-1; strict grid {10..A0/4} compared against j-10 (throws when empty).
HChoice select_h(const CoronaForest& f, CubeId R);

struct GeneralizedTree {
    CubeId R = -1;
    int h = 0;
    std::vector<CubeId> HD1_e, HD1_ep, HD2, Stop2, TStop, Neg, End, T;
    // consequences of the negligible-cube lemma, counted
    long neg_meeting_R = 0;
    long neg_inside_hd1 = 0;
    double neg_min_side_ratio = 1.0;  // min l(Q)/l(R) over Neg
};
GeneralizedTree generalized_tree(const CoronaForest& f, CubeId R);
GeneralizedTree generalized_tree(const CoronaForest& f, CubeId R, int h);

bool is_tractable(const CoronaForest& f, const GeneralizedTree& g);
bool is_tractable(const CoronaForest& f, CubeId R);

struct CubeBall {
    CubeId q = -1;
    Eigen::VectorXd center;
    double radius = 0.0;
};
inline bool balls_disjoint(const CubeBall& a, const CubeBall& b)
{
    return (a.center - b.center).norm() >= a.radius + b.radius;
}
inline bool ball_inside(const CubeBall& a, const CubeBall& b, double dilation = 1.0)
{
    return (a.center - b.center).norm() + a.radius <= dilation * b.radius;
}

// Greedy covering: balls by decreasing radius, kept unless inside the
// (1+8/A0)-dilate of a kept ball. The kept balls are split into pairwise
// disjoint classes by greedy coloring of their intersection graph; the class
// of largest total weight is returned.
std::vector<CubeId> select_disjoint_balls(std::vector<CubeBall> balls, double A0,
                                          const std::function<double(CubeId)>& weight);

struct Generations {
    std::vector<std::vector<CubeId>> gen;  // Gen_0 = {R}
    std::vector<std::vector<CubeId>> trc;
    std::map<CubeId, std::vector<CubeId>> gh;
    long outside_ball = 0;  // generated cubes not inside B(e''(R))
};
std::vector<CubeId> good_high(const CoronaForest& f, CubeId R);
Generations gh_and_generations(const CoronaForest& f, CubeId R, int max_gen = -1);

struct Layer {
    int j = 0;  // Theta = A0^{n j}
    int h = 1;
    std::vector<CubeId> F, L;
};
std::vector<Layer> layers(const CoronaForest& f);

struct RegFamily {
    CubeId R = -1;
    double ell0 = 0.0;
    std::vector<CubeId> reg;        // sorted
    std::vector<CubeId> tree_reg;   // R and the cubes of e'(R) not strictly inside a Reg cube
    std::vector<Index> atoms;       // atoms of e'(R)
    long unresolved = 0;            // atoms whose finest cell still breaks the 1/60 rule

    // Lemma properties, measured
    long lower_violations = 0;      // 10 l(P) <= d(x) fails in B(x_P, 50 l(P))
    double upper_const = 0.0;       // max d(x)/l(P) there
    double neighbor_ratio = 1.0;    // max l(P)/l(P') over touching 50-balls
    int max_overlap = 0;

    // d_R(x) = inf over tree cubes of dist(x,Q) + l(Q)
    double d(const Eigen::Ref<const Eigen::VectorXd>& x) const;
    double d_floor(const Eigen::Ref<const Eigen::VectorXd>& x) const { return std::max(ell0, d(x)); }

    Points anchors;
    Eigen::VectorXd offsets;
};
// ell0 <= 0 picks the finest value the lattice resolves, then halves until
// the HD_1(e(R)) mass condition holds.
RegFamily regularize(const CoronaForest& f, CubeId R, double ell0 = 0.0);

struct HSelection {
    int j = 0;
    int k = 0;
    bool fallback = false;
    std::vector<CubeId> H;       // H_k(e_{h,j}(R))
    std::vector<CubeId> Hprime;  // H_k(e_{h,j+1}(R))
    double sigma_H = 0.0;
    double max_sigma_next = 0.0; // max over m of sigma_p(H_m(e_{h,j+1}(R)))
};
HSelection select_H(const CoronaForest& f, CubeId R, double p, const RegFamily& reg);
HSelection select_H(const CoronaForest& f, CubeId R, double p);

enum class StopCause { none, density, saturated, low_children };
const char* to_string(StopCause c);

struct SpreadNode {
    CubeId q = -1;
    int parent = -1;  // node index
    std::vector<int> children;
    double s = 0.0;
    double t = 0.0;
    bool ld = false;
    bool virtual_child = false;  // finest cell reached without a doubling or LD cube
    StopCause cause = StopCause::none;
};

struct SpreadTree {
    CubeId R0 = -1;
    CubeId R = -1;
    std::vector<SpreadNode> nodes;  // nodes[0] is R
    std::vector<CubeId> br;         // BR(R) cubes met by the tree
    std::map<CubeId, int> index;

    std::vector<int> stops() const;
    // Leaves where the lattice stops resolving mu before a stop: they carry G(R).
    std::vector<int> residual() const;
    // (stopped mass by (i) + LD mass below (iii) stops + mu(G)) / mu(R)
    double mass_accounting = 0.0;
};
SpreadTree build_spread_tree(const CoronaForest& f, CubeId R0, CubeId R);

struct SpreadCheck {
    long range_violations = 0;
    double max_cover_error = 0.0;  // relative
};
// s-range invariant and conservation over random finite disjoint covers.
SpreadCheck check_spread_tree(const Lattice& lat, const SpreadTree& t, int covers, std::uint64_t seed);

void write_forest_json(const CoronaForest& f, std::ostream& out);

}  // namespace gmt
