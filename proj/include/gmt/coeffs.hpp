#pragma once

#include "gmt/lattice.hpp"

#include <Eigen/Eigenvalues>

#include <functional>
#include <iosfwd>
#include <vector>

namespace gmt {

// Density mu(B)/r(B)^n.
double theta(const DiscreteMeasure& mu, const Ball<>& b);

// Least-squares distance of a weighted cloud to its best affine n-plane,
// normalized as sqrt(r^{-n} sum w (dist/r)^2). The plane passes through the
// weighted centroid; the residual is the sum of the smallest dim-n
// eigenvalues of the weighted scatter matrix.
template<typename DerivedP, typename DerivedW>
typename DerivedP::Scalar beta2_cloud(const Eigen::MatrixBase<DerivedP>& pts, const Eigen::MatrixBase<DerivedW>& w,
                                      typename DerivedP::Scalar radius, int n)
{
    using Scalar = typename DerivedP::Scalar;
    const Index m = pts.cols();
    if (m < 1) return Scalar(0);
    const Scalar W = w.sum();
    if (!(W > Scalar(0))) return Scalar(0);
    const Vec<Scalar> c = (pts * w.asDiagonal()).rowwise().sum() / W;
    const Mat<Scalar> centered = pts.colwise() - c;
    const Mat<Scalar> scatter = centered * w.asDiagonal() * centered.transpose();
    Eigen::SelfAdjointEigenSolver<Mat<Scalar>> es(scatter, Eigen::EigenvaluesOnly);
    const Index codim = pts.rows() - n;
    const Scalar resid = es.eigenvalues().head(codim).cwiseMax(Scalar(0)).sum();
    using std::pow;
    using std::sqrt;
    return sqrt(resid / pow(radius, n + 2));
}

double beta2(const DiscreteMeasure& mu, const Ball<>& b);

struct CubeCoeffs {
    double theta2B = 0.0;    // mu(2B_Q)/l(Q)^n
    int theta_exp = 0;       // BigTheta = A0^{theta_exp n}
    double BigTheta = 0.0;
    double P = 0.0;
    double beta2_2B = 0.0;
    double E4Q = 0.0;
    bool is_db = false;
    bool is_pdoubling = false;
    bool is_HE = false;
};

class CoeffTable {
public:
    CoeffTable(const Lattice& lat, std::vector<CubeCoeffs> rec, std::vector<double> subtree_energy)
        : lat_(&lat), rec_(std::move(rec)), subtree_energy_(std::move(subtree_energy))
    {
    }

    const Lattice& lattice() const { return *lat_; }
    const CubeCoeffs& operator[](CubeId q) const { return rec_[q]; }
    std::size_t size() const { return rec_.size(); }

    // sum over P in the family of Theta(P)^p mu(P).
    double sigma(const std::vector<CubeId>& family, double p = 2.0) const;
    double sigma(CubeId q, double p = 2.0) const { return sigma(std::vector<CubeId>{q}, p); }

    // sum over descendants P of q (q included) of l(P)^alpha Theta(P)^2 mu(P).
    double subtree_energy(CubeId q) const { return subtree_energy_[q]; }

private:
    const Lattice* lat_;
    std::vector<CubeCoeffs> rec_;
    std::vector<double> subtree_energy_;
};

CoeffTable compute_coeffs(const Lattice& lat);

double p_coeff(const Lattice& lat, CubeId q);
bool is_p_doubling(const Lattice& lat, CubeId q);

// Bucket exponent e with A0^{e n} <= t < A0^{(e+1) n}.
int theta_bucket(double t, double A0, int n);

// Maximal cubes satisfying pred, searched below the given tops (tops included).
std::vector<CubeId> maximal_family(const Lattice& lat, const std::vector<CubeId>& tops,
                                   const std::function<bool(CubeId)>& pred);

// Maximal cubes P with l(P) < l(Q) and Theta(P) >= A0^{kn} Theta(Q), over the whole lattice.
std::vector<CubeId> hd_k(const CoeffTable& c, CubeId q, int k);

// Radial Wolff energy of mu restricted to b, integrated exactly over radii
// from the minimal gap to the restricted diameter: mu(B(x,r)) is a step
// function of r, so each piece is a closed-form power integral.
double wolff_energy_ball(const DiscreteMeasure& mu, const Ball<>& b, double alpha);

// Same integral sampled at radii diam * ratio^{-j} with weight ln(ratio).
double wolff_energy_ball_dyadic(const DiscreteMeasure& mu, const Ball<>& b, double alpha, double ratio = 2.0);

// sum over P in D(lambda Q) of (l(P)/l(Q))^alpha Theta(P)^2 mu(P).
double wolff_energy_cube(const CoeffTable& c, CubeId q, double lambda, double alpha);

bool is_high_energy(const CoeffTable& c, CubeId q);

double q_reg_coeff(const Lattice& lat, const std::vector<CubeId>& family, CubeId q);

double beta_wolff_sum(const CoeffTable& c, int max_gen = -1);

// Column order: id,gen,n_atoms,mass,r,side,theta2B,BigTheta,P,beta2_2B,E4Q,is_db,is_pdoubling,is_HE
void write_coeffs_csv(const CoeffTable& c, std::ostream& out);

}  // namespace gmt
