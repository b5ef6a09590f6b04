#pragma once

#include "gmt/lattice.hpp"

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace gmt {

// Atom functions: one row per atom, one column per component.
using AtomField = Mat<double>;

// (x - y)/|x - y|^{n+1}; zero on the diagonal.
template<typename DX, typename DY>
Vec<typename DX::Scalar> riesz_kernel(const Eigen::MatrixBase<DX>& x, const Eigen::MatrixBase<DY>& y, int n)
{
    using Scalar = typename DX::Scalar;
    Vec<Scalar> u = x - y;
    const Scalar r2 = u.squaredNorm();
    if (r2 == Scalar(0)) return Vec<Scalar>::Zero(u.size());
    using std::pow;
    return u * pow(r2, -Scalar(n + 1) / 2);
}

// (x - y)/(|x - y|^2 + phi_x phi_y)^{(n+1)/2}; zero when x = y.
template<typename DX, typename DY>
Vec<typename DX::Scalar> suppressed_kernel(const Eigen::MatrixBase<DX>& x, const Eigen::MatrixBase<DY>& y,
                                           typename DX::Scalar phi_x, typename DX::Scalar phi_y, int n)
{
    using Scalar = typename DX::Scalar;
    Vec<Scalar> u = x - y;
    const Scalar r2 = u.squaredNorm();
    if (r2 == Scalar(0)) return Vec<Scalar>::Zero(u.size());
    using std::pow;
    return u * pow(r2 + phi_x * phi_y, -Scalar(n + 1) / 2);
}

// Analytic Jacobians of the suppressed kernel in x and in y, given the
// gradients of the suppression function at x and y.
template<typename Scalar>
std::pair<Mat<Scalar>, Mat<Scalar>> suppressed_kernel_jacobians(const Vec<Scalar>& x, const Vec<Scalar>& y,
                                                               Scalar phi_x, Scalar phi_y, const Vec<Scalar>& grad_x,
                                                               const Vec<Scalar>& grad_y, int n)
{
    const Vec<Scalar> u = x - y;
    const Scalar m = Scalar(n + 1) / 2;
    const Scalar D = u.squaredNorm() + phi_x * phi_y;
    using std::pow;
    const Scalar Dm = pow(D, -m);
    const Scalar Dm1 = m * pow(D, -m - 1);
    const Index d = u.size();
    Mat<Scalar> jx = Dm * Mat<Scalar>::Identity(d, d) - Dm1 * u * (Scalar(2) * u + phi_y * grad_x).transpose();
    Mat<Scalar> jy = -Dm * Mat<Scalar>::Identity(d, d) - Dm1 * u * (-Scalar(2) * u + phi_x * grad_y).transpose();
    return {jx, jy};
}

// A nonnegative weight Phi, expected to be 1-Lipschitz.
struct SuppressionFn {
    std::function<double(const Eigen::VectorXd&)> eval;
    std::function<Eigen::VectorXd(const Eigen::VectorXd&)> grad;  // may be empty
    double lipschitz_cert = 0.0;

    double operator()(const Eigen::VectorXd& x) const { return eval(x); }

    // Largest |Phi(x)-Phi(y)|/|x-y| over all pairs of columns.
    double certify(const Points& sample);

    static SuppressionFn constant(double c);
    // Phi(x) = a * sqrt(|x - c|^2 + b^2): smooth, Lipschitz constant a.
    static SuppressionFn smooth_distance(Eigen::VectorXd c, double a, double b);
};

enum class Backend { direct, tree };
Backend parse_backend(const std::string& s);

Eigen::VectorXd truncated_riesz(const DiscreteMeasure& mu, const Eigen::Ref<const Eigen::VectorXd>& x, double eps);

// Field at every atom, self-pair excluded. Throws on coincident positive atoms.
AtomField pv_riesz_at_atoms(const DiscreteMeasure& mu, Backend backend = Backend::direct, double accuracy = 1e-3);

// Field at arbitrary targets (columns); self_index[t] >= 0 excludes that atom.
AtomField riesz_field(const DiscreteMeasure& mu, const Points& targets, const std::vector<Index>& self_index,
                      Backend backend, double accuracy, const SuppressionFn* phi = nullptr,
                      const std::vector<double>* phi_targets = nullptr);

double maximal_riesz(const DiscreteMeasure& mu, const Eigen::Ref<const Eigen::VectorXd>& x,
                     const std::vector<double>& eps_grid);
// Exact sup over eps > eps_min, using the breakpoints at interpoint distances.
double maximal_riesz_exact(const DiscreteMeasure& mu, const Eigen::Ref<const Eigen::VectorXd>& x,
                           double eps_min = 0.0);

Eigen::VectorXd suppressed_riesz(const DiscreteMeasure& mu, const Eigen::VectorXd& x, const SuppressionFn& phi);

double w_energy(const DiscreteMeasure& mu, const std::vector<Index>& subset);

struct CotlarSides {
    double lhs = 0.0;
    double rhs = 0.0;
    double maximal_term = 0.0;
    bool hypotheses_met = false;
};
// pv is the atomized principal value field of mu.
CotlarSides cotlar_sides(const DiscreteMeasure& mu, const AtomField& pv, const Eigen::VectorXd& x, double r0,
                         double theta1);

// mean of f over an atom set, weighted by mu.
Eigen::RowVectorXd atom_mean(const DiscreteMeasure& mu, const AtomField& f, const std::vector<Index>& atoms);

// L2(mu) inner product of two atom functions.
double l2_inner(const DiscreteMeasure& mu, const AtomField& f, const AtomField& g);

AtomField haar_delta(const Lattice& lat, const AtomField& f, CubeId q);

struct HaarEnergy {
    double haar_sum = 0.0;        // sum over cubes of |Delta_Q f|^2
    double centered_norm = 0.0;   // |f - m_root f|^2
    double residual = 0.0;        // sum over finest cells of |f - m_P f|^2 on P
};
HaarEnergy haar_energy(const Lattice& lat, const AtomField& f);

// sum over S in family of (m_S f - m_{2Q} f) chi_S.
AtomField coarse_haar(const Lattice& lat, const AtomField& f, CubeId q, const std::vector<CubeId>& family);

// Cells of generation gen(Q)-1 meeting the cube-union dilate 2Q.
std::vector<CubeId> parent_neighbors(const Lattice& lat, CubeId q);

// On each Q of the family: R(chi_{2R \ 2Q} mu). Throws if the family overlaps.
AtomField localized_riesz(const Lattice& lat, const std::vector<CubeId>& family, CubeId r);

// Value of R(chi_{2R \ 2Q} mu) at the center of Q.
Eigen::VectorXd localized_riesz_at_center(const Lattice& lat, CubeId q, CubeId r);

}  // namespace gmt
