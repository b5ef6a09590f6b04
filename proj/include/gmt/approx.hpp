#pragma once

#include "gmt/corona.hpp"
#include "gmt/riesz.hpp"

#include <iosfwd>
#include <vector>

namespace gmt {

enum class PieceKind { half_ball, disk, atoms };

// One carrier of an approximating measure. Half-balls are solid
// (n+1)-balls, disks are n-balls in the hyperplane x_n = const through the
// center, atom pieces rescale mu on a cube.
struct Piece {
    PieceKind kind = PieceKind::atoms;
    CubeId source = -1;
    Eigen::VectorXd center;
    double radius = 0.0;
    double mass = 0.0;
    Index first = 0, count = 0;  // range of quadrature atoms
};

struct ApproxMeasure {
    int n = 1;
    std::vector<Piece> pieces;
    Points atoms;  // quadrature atoms, one column each
    Eigen::VectorXd weights;

    int dim() const { return static_cast<int>(atoms.rows()); }
    double total_mass() const { return weights.sum(); }
    double piece_mass() const;
    DiscreteMeasure flatten() const;
    // exact eta(B(x, r)) from the piece geometry
    double mass_in_ball(const Eigen::Ref<const Eigen::VectorXd>& x, double r) const;
};

// Equal-weight points filling the closed unit ball of R^d.
Points unit_ball_layout(int d, int count);

// Mass mu(P) spread uniformly over the ball of radius r(P)/2 of each Reg cube.
ApproxMeasure eta_from_reg(const Lattice& lat, const RegFamily& reg, int quad_points = 64);

// Disks of radius r(Q)/2 with mass mu(Q) + s(Q) over the stopping cubes,
// rescaled mu on the residual leaves.
ApproxMeasure eta_disks(const Lattice& lat, const SpreadTree& t, int quad_points = 64);

// Pairs of disk or half-ball pieces whose carriers intersect.
long overlapping_pieces(const ApproxMeasure& am);

struct AdRatios {
    double c_low = 0.0;
    double c_high = 0.0;
    long samples = 0;
};
// min / max of eta(B(x,r)) / (theta_ref r^n) over support points x of every
// piece and dyadic radii from the smallest piece radius to the diameter.
AdRatios check_ad_regular(const ApproxMeasure& am, double theta_ref);

struct EtaField {
    AtomField field;
    double l2_norm = 0.0;
};
EtaField riesz_on_eta(const ApproxMeasure& am, Backend backend = Backend::direct, double accuracy = 1e-3);

// Flattened measure JSON, and a sidecar listing the pieces with their source cubes.
void write_approx_json(const ApproxMeasure& am, std::ostream& measure_out, std::ostream& sidecar_out);

}  // namespace gmt
