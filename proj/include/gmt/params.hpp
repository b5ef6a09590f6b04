#pragma once

#include <cmath>
#include <cstdint>
#include <iosfwd>
#include <string>

namespace gmt {

// Every tunable constant of the construction, with desk-scale defaults.
struct Params {
    double C0 = 2.0;
    double A0 = 4.0;
    double gamma = 0.9;
    double Cd = 0.0;  // 0 means 4 * A0^n
    int kLambda = 4;
    int N = 2;
    int N0 = 1;
    double M0 = 10.0;
    double K = 1e4;  // desk threshold for the big-Riesz family
    double ell0 = 0.0;  // 0 means automatic choice
    double epsN = 1.0 / 15.0;
    double epsZ = 0.1;
    double alpha = 0.75;
    int max_gen = 8;
    int radius_grid = 64;
    int quad_points = 64;
    std::uint64_t seed = 20240601;
    bool strict = false;

    double cd(int n) const { return Cd > 0 ? Cd : 4.0 * std::pow(A0, n); }
    // Lambda = A0^(kLambda n); the star variant drops a 1/N fraction of the exponent.
    double Lambda(int n) const { return std::pow(A0, kLambda * n); }
    int kLambdaStar() const { return kLambda - kLambda / N; }
    double LambdaStar(int n) const { return std::pow(A0, kLambdaStar() * n); }
    double delta0(int n) const
    {
        return std::pow(Lambda(n), -(N0 + 1.0 / (2.0 * N)));
    }
    // strict mode uses the paper-scale 10^3 Lambda / delta0
    double Kbr(int n) const { return strict ? 1e3 * Lambda(n) / delta0(n) : K; }
    double Bconst(int n) const { return std::pow(LambdaStar(n), 1.0 / (100.0 * n)); }

    // Throws std::invalid_argument when the combination is inconsistent.
    void validate(int n) const;

    void set(const std::string& key, const std::string& value);
    static Params from_kv(std::istream& in);
    static Params from_kv_file(const std::string& path);
    void write_kv(std::ostream& out) const;
};

}  // namespace gmt
