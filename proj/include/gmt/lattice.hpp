#pragma once

#include "gmt/measure.hpp"
#include "gmt/params.hpp"

#include <cmath>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

namespace gmt {

using CubeId = int;

struct Cube {
    int gen = 0;              // absolute generation k; scale A0^{-k}
    Index center_atom = -1;
    Eigen::VectorXd center;
    double r = 0.0;           // A0^{-k} <= r <= C0 A0^{-k}
    double r1 = 0.0, r2 = 0.0;
    bool is_db = false;
    CubeId parent = -1;
    std::vector<CubeId> children;
    std::vector<Index> atoms;  // sorted
    double mass = 0.0;
};

class Lattice {
public:
    Lattice(std::shared_ptr<const DiscreteMeasure> mu, Params p);

    const DiscreteMeasure& measure() const { return *mu_; }
    std::shared_ptr<const DiscreteMeasure> measure_ptr() const { return mu_; }
    const Params& params() const { return params_; }
    int n() const { return mu_->n(); }

    int k0() const { return k0_; }
    int kmax() const { return k0_ + static_cast<int>(gens_.size()) - 1; }
    int depth() const { return static_cast<int>(gens_.size()) - 1; }

    const Cube& cube(CubeId q) const { return cubes_[q]; }
    std::size_t size() const { return cubes_.size(); }
    const std::vector<CubeId>& generation(int k) const { return gens_[k - k0_]; }
    CubeId root() const { return gens_.front().front(); }
    CubeId cell_of(Index atom, int k) const { return member_[k - k0_][atom]; }

    double scale(int k) const { return std::pow(params_.A0, -k); }
    double side(CubeId q) const { return 56.0 * params_.C0 * scale(cubes_[q].gen); }
    // B_Q = 28 B(Q); the doubled ball 2B_Q has radius 56 r(Q).
    double radius_2BQ(CubeId q) const { return 56.0 * cubes_[q].r; }

    // First generation in which every cell is a single atom (kmax() if none).
    int finest_resolved_gen() const;

    CubeId ancestor(CubeId q, int k) const;
    bool contains(CubeId a, CubeId b) const;  // a ⊇ b as atom sets

    const std::vector<std::string>& warnings() const { return warnings_; }

    // Construction interface used by build_lattice and deserialization.
    void set_generations(int k0, std::vector<Cube> cubes, std::vector<std::vector<CubeId>> gens);
    void add_warning(std::string w) { warnings_.push_back(std::move(w)); }

private:
    std::shared_ptr<const DiscreteMeasure> mu_;
    Params params_;
    int k0_ = 0;
    std::vector<Cube> cubes_;
    std::vector<std::vector<CubeId>> gens_;
    std::vector<std::vector<CubeId>> member_;
    std::vector<std::string> warnings_;
};

// max_depth counts generations below the root.
Lattice build_lattice(std::shared_ptr<const DiscreteMeasure> mu, const Params& p, int max_depth);
Lattice build_lattice(const DiscreteMeasure& mu, const Params& p, int max_depth);

struct LatticeCheck {
    long partition = 0;
    long nesting = 0;
    long inner_ball = 0;   // atoms of B(Q) outside Q
    long outer_ball = 0;   // atoms of Q outside 28B(Q)
    long disjoint_5B = 0;
    long radius_range = 0;
    long nondb_radius = 0;
    long root = 0;
    bool ok() const
    {
        return partition + nesting + inner_ball + outer_ball + disjoint_5B + radius_range +
                   nondb_radius + root ==
               0;
    }
};

LatticeCheck check_lattice(const Lattice& lat);

double neighborhood_mass(const Lattice& lat, CubeId q, int l);

struct Dilate {
    std::vector<CubeId> cells;
    std::vector<Index> atoms;
};
Dilate lambda_dilate(const Lattice& lat, CubeId q, double lambda);

struct BoundaryFamilies {
    std::vector<CubeId> interior;
    std::vector<CubeId> exterior;
};
BoundaryFamilies boundary_families(const Lattice& lat, CubeId q);

// Every cube contained in one of the given same-generation cells, including them.
std::vector<CubeId> descendants_of(const Lattice& lat, const std::vector<CubeId>& tops);

// Minimal distance between the atom sets of two cubes.
double cube_distance(const Lattice& lat, CubeId a, CubeId b);
double point_cube_distance(const Lattice& lat, const Eigen::Ref<const Eigen::VectorXd>& x, CubeId q);

std::string lattice_to_json(const Lattice& lat);
Lattice lattice_from_json(const std::string& text, std::shared_ptr<const DiscreteMeasure> mu);

}  // namespace gmt
