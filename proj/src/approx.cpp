#include "gmt/approx.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <ostream>
#include <stdexcept>

namespace gmt {

namespace {

constexpr double golden_angle = 2.399963229728653;

double unit_ball_volume(int d) { return std::pow(std::numbers::pi, d / 2.0) / std::tgamma(d / 2.0 + 1.0); }

// Volume of the intersection of two d-balls at center distance s.
double overlap_volume(int d, double s, double a, double b)
{
    if (s >= a + b) return 0.0;
    const double small = std::min(a, b);
    if (s + small <= std::max(a, b)) return unit_ball_volume(d) * std::pow(small, d);
    switch (d) {
    case 1: return a + b - s;
    case 2: {
        const double ca = std::clamp((s * s + a * a - b * b) / (2 * s * a), -1.0, 1.0);
        const double cb = std::clamp((s * s + b * b - a * a) / (2 * s * b), -1.0, 1.0);
        const double k = (-s + a + b) * (s + a - b) * (s - a + b) * (s + a + b);
        return a * a * std::acos(ca) + b * b * std::acos(cb) - 0.5 * std::sqrt(std::max(k, 0.0));
    }
    case 3: {
        const double t = a + b - s;
        return std::numbers::pi * t * t * (s * s + 2 * s * b - 3 * b * b + 2 * s * a + 6 * a * b - 3 * a * a) /
               (12 * s);
    }
    default: throw std::invalid_argument("overlap_volume: dimension above 3");
    }
}

void append_piece(ApproxMeasure& am, Piece p, const Points& pts, const Eigen::VectorXd& w)
{
    p.first = am.atoms.cols();
    p.count = pts.cols();
    am.atoms.conservativeResize(pts.rows(), p.first + p.count);
    am.weights.conservativeResize(p.first + p.count);
    am.atoms.rightCols(p.count) = pts;
    am.weights.tail(p.count) = w;
    am.pieces.push_back(std::move(p));
}

}  // namespace

Points unit_ball_layout(int d, int count)
{
    if (count < 1) throw std::invalid_argument("unit_ball_layout: count must be positive");
    Points p(d, count);
    if (d == 1) {
        for (int i = 0; i < count; ++i) p(0, i) = -1.0 + (2.0 * i + 1.0) / count;
        return p;
    }
    if (d == 2) {
        // sunflower spiral: equal-area rings
        for (int i = 0; i < count; ++i) {
            const double r = std::sqrt((i + 0.5) / count);
            p(0, i) = r * std::cos(i * golden_angle);
            p(1, i) = r * std::sin(i * golden_angle);
        }
        return p;
    }
    if (d == 3) {
        // equal-volume shells, Fibonacci directions decorrelated from the shells
        int stride = 7;
        while (std::gcd(stride, count) != 1) ++stride;
        for (int i = 0; i < count; ++i) {
            const double r = std::cbrt((i + 0.5) / count);
            const int k = static_cast<int>((static_cast<long>(i) * stride) % count);
            const double z = 1.0 - 2.0 * (k + 0.5) / count;
            const double rho = std::sqrt(std::max(0.0, 1.0 - z * z));
            p(0, i) = r * rho * std::cos(k * golden_angle);
            p(1, i) = r * rho * std::sin(k * golden_angle);
            p(2, i) = r * z;
        }
        return p;
    }
    // cubic grid clipped to the ball, refined until it holds enough points
    for (int m = 2;; ++m) {
        std::vector<Eigen::VectorXd> in;
        Eigen::VectorXi idx = Eigen::VectorXi::Zero(d);
        for (;;) {
            Eigen::VectorXd x = (-1.0 + (2.0 * idx.cast<double>().array() + 1.0) / m).matrix();
            if (x.norm() <= 1.0) in.push_back(x);
            int k = 0;
            while (k < d && ++idx(k) == m) idx(k++) = 0;
            if (k == d) break;
        }
        if (static_cast<int>(in.size()) >= count) {
            Points out(d, static_cast<Index>(in.size()));
            for (std::size_t i = 0; i < in.size(); ++i) out.col(i) = in[i];
            return out;
        }
    }
}

double ApproxMeasure::piece_mass() const
{
    double s = 0.0;
    for (const Piece& p : pieces) s += p.mass;
    return s;
}

DiscreteMeasure ApproxMeasure::flatten() const { return DiscreteMeasure(atoms, weights, n); }

double ApproxMeasure::mass_in_ball(const Eigen::Ref<const Eigen::VectorXd>& x, double r) const
{
    double total = 0.0;
    for (const Piece& p : pieces) {
        const double s = (x - p.center).norm();
        if (s >= r + p.radius) continue;
        switch (p.kind) {
        case PieceKind::half_ball:
            total += p.mass * overlap_volume(dim(), s, r, p.radius) / (unit_ball_volume(dim()) * std::pow(p.radius, dim()));
            break;
        case PieceKind::disk: {
            // the ball meets the disk's hyperplane in an n-ball
            const double h = std::abs(x(n) - p.center(n));
            if (h >= r) break;
            const double a = std::sqrt(r * r - h * h);
            const double t = (x.head(n) - p.center.head(n)).norm();
            total += p.mass * overlap_volume(n, t, a, p.radius) / (unit_ball_volume(n) * std::pow(p.radius, n));
            break;
        }
        case PieceKind::atoms:
            for (Index i = p.first; i < p.first + p.count; ++i)
                if ((atoms.col(i) - x).norm() <= r) total += weights(i);
            break;
        }
    }
    return total;
}

ApproxMeasure eta_from_reg(const Lattice& lat, const RegFamily& reg, int quad_points)
{
    ApproxMeasure am;
    am.n = lat.n();
    const int d = lat.measure().dim();
    am.atoms.resize(d, 0);
    const Points unit = unit_ball_layout(d, quad_points);
    for (CubeId P : reg.reg) {
        const Cube& c = lat.cube(P);
        Piece p;
        p.kind = PieceKind::half_ball;
        p.source = P;
        p.center = c.center;
        p.radius = c.r / 2;
        p.mass = c.mass;
        const Points pts = (unit * p.radius).colwise() + c.center;
        append_piece(am, std::move(p), pts, Eigen::VectorXd::Constant(unit.cols(), c.mass / unit.cols()));
    }
    return am;
}

ApproxMeasure eta_disks(const Lattice& lat, const SpreadTree& t, int quad_points)
{
    const DiscreteMeasure& mu = lat.measure();
    ApproxMeasure am;
    am.n = lat.n();
    const int n = am.n;
    am.atoms.resize(mu.dim(), 0);
    const Points unit = unit_ball_layout(n, quad_points);

    for (const SpreadNode& nd : t.nodes) {
        const bool stop = nd.cause != StopCause::none;
        if (!stop && !nd.children.empty()) continue;
        const Cube& c = lat.cube(nd.q);
        const double mass = c.mass + nd.s;
        if (mass < -1e-12 * c.mass) throw std::logic_error("eta_disks: negative piece mass");
        if (mass <= 0) continue;

        Piece p;
        p.source = nd.q;
        p.center = c.center;
        p.radius = c.r / 2;
        p.mass = mass;
        if (stop) {
            p.kind = PieceKind::disk;
            Points pts = c.center.replicate(1, unit.cols());
            pts.topRows(n) += unit * p.radius;
            append_piece(am, std::move(p), pts, Eigen::VectorXd::Constant(unit.cols(), mass / unit.cols()));
        } else {
            p.kind = PieceKind::atoms;
            Points pts(mu.dim(), static_cast<Index>(c.atoms.size()));
            Eigen::VectorXd w(pts.cols());
            for (std::size_t i = 0; i < c.atoms.size(); ++i) {
                pts.col(i) = mu.point(c.atoms[i]);
                w(i) = mu.weight(c.atoms[i]) * mass / c.mass;
            }
            append_piece(am, std::move(p), pts, w);
        }
    }
    return am;
}

long overlapping_pieces(const ApproxMeasure& am)
{
    long count = 0;
    for (std::size_t i = 0; i < am.pieces.size(); ++i) {
        const Piece& a = am.pieces[i];
        if (a.kind == PieceKind::atoms) continue;
        for (std::size_t j = i + 1; j < am.pieces.size(); ++j) {
            const Piece& b = am.pieces[j];
            if (b.kind == PieceKind::atoms) continue;
            if (a.kind == PieceKind::disk && b.kind == PieceKind::disk && a.center(am.n) != b.center(am.n)) continue;
            if ((a.center - b.center).norm() < a.radius + b.radius) ++count;
        }
    }
    return count;
}

AdRatios check_ad_regular(const ApproxMeasure& am, double theta_ref)
{
    if (am.pieces.empty()) throw std::invalid_argument("check_ad_regular: empty measure");
    double rmin = std::numeric_limits<double>::infinity();
    Eigen::VectorXd lo = am.pieces.front().center, hi = lo;
    for (const Piece& p : am.pieces) {
        rmin = std::min(rmin, p.radius);
        lo = lo.array().min(p.center.array() - p.radius).matrix();
        hi = hi.array().max(p.center.array() + p.radius).matrix();
    }
    const double diam = (hi - lo).norm();

    // support points: each center and two points along the first axis
    std::vector<Eigen::VectorXd> xs;
    for (const Piece& p : am.pieces) {
        xs.push_back(p.center);
        if (p.kind == PieceKind::atoms) continue;
        Eigen::VectorXd e = Eigen::VectorXd::Zero(am.dim());
        e(0) = 0.9 * p.radius;
        xs.push_back(p.center + e);
        xs.push_back(p.center - e);
    }

    AdRatios out;
    out.c_low = std::numeric_limits<double>::infinity();
    std::vector<double> radii;
    for (double r = rmin; r <= diam * (1 + 1e-12); r *= 2) radii.push_back(r);
    std::vector<double> low(xs.size(), out.c_low), high(xs.size(), 0.0);
#pragma omp parallel for schedule(dynamic, 8)
    for (std::size_t i = 0; i < xs.size(); ++i)
        for (double r : radii) {
            const double ratio = am.mass_in_ball(xs[i], r) / (theta_ref * std::pow(r, am.n));
            low[i] = std::min(low[i], ratio);
            high[i] = std::max(high[i], ratio);
        }
    out.c_low = *std::min_element(low.begin(), low.end());
    out.c_high = *std::max_element(high.begin(), high.end());
    out.samples = static_cast<long>(xs.size() * radii.size());
    return out;
}

EtaField riesz_on_eta(const ApproxMeasure& am, Backend backend, double accuracy)
{
    const DiscreteMeasure eta = am.flatten();
    EtaField out;
    out.field = pv_riesz_at_atoms(eta, backend, accuracy);
    out.l2_norm = std::sqrt((out.field.rowwise().squaredNorm().array() * eta.weights().array()).sum());
    return out;
}

void write_approx_json(const ApproxMeasure& am, std::ostream& measure_out, std::ostream& sidecar_out)
{
    write_measure_json(am.flatten(), measure_out);
    nlohmann::json side;
    side["schema"] = "gmt.approx-pieces/1";
    nlohmann::json arr = nlohmann::json::array();
    for (const Piece& p : am.pieces) {
        const char* kind = p.kind == PieceKind::disk ? "disk" : p.kind == PieceKind::half_ball ? "half_ball" : "atoms";
        arr.push_back({{"kind", kind},
                       {"source_cube", p.source},
                       {"center", std::vector<double>(p.center.data(), p.center.data() + p.center.size())},
                       {"radius", p.radius},
                       {"mass", p.mass},
                       {"first_atom", p.first},
                       {"atom_count", p.count}});
    }
    side["pieces"] = std::move(arr);
    sidecar_out << side.dump(2) << '\n';
}

}  // namespace gmt
