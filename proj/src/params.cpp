#include "gmt/params.hpp"

#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace gmt {

void Params::validate(int n) const
{
    if (n < 1) throw std::invalid_argument("growth dimension must be >= 1");
    if (!(C0 > 1.0)) throw std::invalid_argument("C0 must exceed 1");
    if (strict) {
        if (!(A0 > 5000.0 * C0))
            throw std::invalid_argument("strict mode needs A0 > 5000 C0");
    } else if (A0 < 4.0) {
        throw std::invalid_argument("A0 must be at least 4");
    }
    if (!(gamma > 0.0 && gamma < 1.0)) throw std::invalid_argument("gamma must lie in (0,1)");
    if (kLambda < 1 || N < 1 || N0 < 0) throw std::invalid_argument("bad kLambda/N/N0");
    if (kLambda % N != 0) throw std::invalid_argument("kLambda must be a multiple of N");
    if (kLambdaStar() < 1) throw std::invalid_argument("kLambda(1 - 1/N) must be >= 1");
    if (!(M0 > 1.0)) throw std::invalid_argument("M0 must exceed 1");
    if (!(alpha > 0.0 && alpha <= 1.0)) throw std::invalid_argument("alpha must lie in (0,1]");
    if (ell0 < 0.0) throw std::invalid_argument("ell0 must be nonnegative");
    if (max_gen < 0 || radius_grid < 1 || quad_points < 1)
        throw std::invalid_argument("bad grid sizes");
}

void Params::set(const std::string& key, const std::string& value)
{
    auto num = [&] { return std::stod(value); };
    auto integer = [&] { return std::stoi(value); };
    if (key == "C0") C0 = num();
    else if (key == "A0") A0 = num();
    else if (key == "gamma") gamma = num();
    else if (key == "Cd") Cd = num();
    else if (key == "kLambda") kLambda = integer();
    else if (key == "N") N = integer();
    else if (key == "N0") N0 = integer();
    else if (key == "M0") M0 = num();
    else if (key == "K") K = num();
    else if (key == "ell0") ell0 = num();
    else if (key == "epsN") epsN = num();
    else if (key == "epsZ") epsZ = num();
    else if (key == "alpha") alpha = num();
    else if (key == "max_gen") max_gen = integer();
    else if (key == "radius_grid") radius_grid = integer();
    else if (key == "quad_points") quad_points = integer();
    else if (key == "seed") seed = std::stoull(value);
    else if (key == "strict_paper_constants" || key == "strict")
        strict = (value == "1" || value == "true" || value == "on");
    else throw std::invalid_argument("unknown parameter: " + key);
}

Params Params::from_kv(std::istream& in)
{
    Params p;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        auto trim = [](std::string s) {
            auto b = s.find_first_not_of(" \t\r");
            auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("params line " + std::to_string(lineno) + ": expected key=value");
        p.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return p;
}

Params Params::from_kv_file(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open params file " + path);
    return from_kv(in);
}

void Params::write_kv(std::ostream& out) const
{
    std::ostringstream s;
    s.precision(17);
    s << "C0=" << C0 << "\nA0=" << A0 << "\ngamma=" << gamma << "\nCd=" << Cd
      << "\nkLambda=" << kLambda << "\nN=" << N << "\nN0=" << N0 << "\nM0=" << M0
      << "\nK=" << K << "\nell0=" << ell0 << "\nepsN=" << epsN << "\nepsZ=" << epsZ
      << "\nalpha=" << alpha << "\nmax_gen=" << max_gen << "\nradius_grid=" << radius_grid
      << "\nquad_points=" << quad_points << "\nseed=" << seed
      << "\nstrict_paper_constants=" << (strict ? "true" : "false") << "\n";
    out << s.str();
}

}  // namespace gmt
