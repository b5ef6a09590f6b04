#include "gmt/harness.hpp"

#include "json.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace gmt {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

bool finite_positive(double x) { return std::isfinite(x) && x > 0; }

}  // namespace

bool ExperimentReport::ok() const
{
    if (!error.empty()) return false;
    return std::all_of(invariants.begin(), invariants.end(), [](const auto& kv) { return kv.second; });
}

double beta_theta_integral(const DiscreteMeasure& mu)
{
    const double gap = min_gap(mu);
    if (!std::isfinite(gap)) return 0.0;
    const double diam = bbox_diameter(mu);
    std::vector<double> radii;
    for (double r = diam; r >= gap; r /= 2) radii.push_back(r);

    Eigen::VectorXd per_atom = Eigen::VectorXd::Zero(mu.size());
#pragma omp parallel for schedule(dynamic, 16)
    for (Index i = 0; i < mu.size(); ++i) {
        double s = 0.0;
        for (double r : radii) {
            const Ball<> b{mu.point(i), r};
            const double beta = beta2(mu, b);
            s += beta * beta * theta(mu, b);
        }
        per_atom(i) = mu.weight(i) * s * std::numbers::ln2;
    }
    return per_atom.sum();
}

ExperimentReport verify_equivalence(const std::string& kind, int depth, const RunOptions& opt)
{
    ExperimentReport rep;
    rep.kind = kind;
    rep.name = kind + "_d" + std::to_string(depth);
    rep.depth = depth;
    rep.seed = opt.params.seed;
    rep.backend = opt.backend == Backend::tree ? "tree" : "direct";

    auto t = Clock::now();
    const DiscreteMeasure mu = generate(kind, depth);
    rep.timings["measure"] = seconds_since(t);
    rep.n = mu.n();
    rep.atoms = static_cast<long>(mu.size());

    t = Clock::now();
    const Lattice lat = build_lattice(mu, opt.params, opt.lattice_depth);
    rep.timings["lattice"] = seconds_since(t);
    rep.generations = lat.depth() + 1;
    rep.invariants["lattice"] = check_lattice(lat).ok();

    t = Clock::now();
    const CoeffTable c = compute_coeffs(lat);
    rep.timings["coeffs"] = seconds_since(t);

    t = Clock::now();
    const DiscreteMeasure& m = lat.measure();
    // the report squares the field, so the field is asked for a quarter of the budget
    const AtomField f = pv_riesz_at_atoms(m, opt.backend, opt.accuracy / 4);
    rep.timings["field"] = seconds_since(t);

    rep.mass = m.weights().sum();
    const Eigen::VectorXd sq = f.rowwise().squaredNorm();
    rep.lhs = m.weights().dot(sq) + rep.mass;

    t = Clock::now();
    const HaarEnergy he = haar_energy(lat, f);
    rep.timings["haar"] = seconds_since(t);
    rep.lhs_haar = he.haar_sum + rep.mass;
    rep.invariants["haar_identity"] =
        std::abs(he.haar_sum + he.residual - he.centered_norm) <= 1e-9 * std::max(he.centered_norm, 1e-300);

    // pv is antisymmetric: the mu-mean of the field vanishes up to the backend error
    const double fmax = std::sqrt(sq.maxCoeff());
    const double drift = (m.weights().transpose() * f).norm();
    const double tol = opt.backend == Backend::direct ? 1e-10 : opt.accuracy;
    rep.invariants["antisymmetry"] = drift <= tol * rep.mass * std::max(fmax, 1e-300);

    t = Clock::now();
    rep.rhs_cubes = beta_wolff_sum(c) + rep.mass;
    rep.timings["rhs_cubes"] = seconds_since(t);

    t = Clock::now();
    rep.rhs_integral = beta_theta_integral(m) + rep.mass;
    rep.timings["rhs_integral"] = seconds_since(t);

    rep.ratio_pv = rep.lhs / rep.rhs_cubes;
    rep.ratio_haar = rep.lhs_haar / rep.rhs_cubes;
    rep.ratio_integral = rep.lhs_haar / rep.rhs_integral;
    rep.invariants["ratios_finite"] =
        finite_positive(rep.ratio_pv) && finite_positive(rep.ratio_haar) && finite_positive(rep.ratio_integral);
    return rep;
}

SuiteConfig SuiteConfig::from_json(std::istream& in)
{
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("suite config: ") + e.what());
    }
    if (!j.is_object()) throw std::invalid_argument("suite config: expected an object");

    SuiteConfig cfg;
    try {
        if (j.contains("params_file")) cfg.run.params = Params::from_kv_file(j["params_file"].get<std::string>());
        if (j.contains("params"))
            for (auto& [k, v] : j["params"].items()) cfg.run.params.set(k, v.is_string() ? v.get<std::string>() : v.dump());
        if (j.contains("seed")) cfg.run.params.seed = j["seed"].get<std::uint64_t>();
        if (j.contains("strict_paper_constants")) cfg.run.params.strict = j["strict_paper_constants"].get<bool>();
        if (j.contains("backend")) cfg.run.backend = parse_backend(j["backend"].get<std::string>());
        if (j.contains("accuracy")) cfg.run.accuracy = j["accuracy"].get<double>();
        if (j.contains("lattice_depth")) cfg.run.lattice_depth = j["lattice_depth"].get<int>();
        for (const auto& e : j.value("experiments", nlohmann::json::array())) {
            ExperimentSpec s;
            s.kind = e.at("kind").get<std::string>();
            s.depth = e.at("depth").get<int>();
            s.name = e.value("name", s.kind + "_d" + std::to_string(s.depth));
            cfg.experiments.push_back(std::move(s));
        }
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("suite config: ") + e.what());
    }
    return cfg;
}

SuiteConfig SuiteConfig::from_file(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open suite config " + path);
    return from_json(in);
}

SuiteResult run_suite(const SuiteConfig& cfg)
{
    SuiteResult out;
    out.reports.resize(cfg.experiments.size());
    // experiments in parallel; the modules' own loops run serially inside
#pragma omp parallel for schedule(dynamic, 1)
    for (std::size_t i = 0; i < cfg.experiments.size(); ++i) {
        const ExperimentSpec& s = cfg.experiments[i];
        ExperimentReport r;
        try {
            r = verify_equivalence(s.kind, s.depth, cfg.run);
        } catch (const std::exception& e) {
            r.kind = s.kind;
            r.depth = s.depth;
            r.seed = cfg.run.params.seed;
            r.backend = cfg.run.backend == Backend::tree ? "tree" : "direct";
            r.error = e.what();
        }
        r.name = s.name;
        out.reports[i] = std::move(r);
    }
    std::stable_sort(out.reports.begin(), out.reports.end(),
                     [](const ExperimentReport& a, const ExperimentReport& b) { return a.name < b.name; });
    out.exit_status = std::all_of(out.reports.begin(), out.reports.end(), [](const auto& r) { return r.ok(); }) ? 0 : 1;
    return out;
}

SuiteResult run_suite(const std::string& config_path, const std::string& out_dir)
{
    const SuiteConfig cfg = SuiteConfig::from_file(config_path);
    SuiteResult res = run_suite(cfg);
    std::filesystem::create_directories(out_dir);
    std::ofstream js(std::filesystem::path(out_dir) / "report.json");
    write_report_json(res.reports, js);
    std::ofstream csv(std::filesystem::path(out_dir) / "summary.csv");
    write_report_csv(res.reports, csv);
    if (!js || !csv) throw std::runtime_error("cannot write reports to " + out_dir);
    return res;
}

void write_report_json(const std::vector<ExperimentReport>& reports, std::ostream& out)
{
    nlohmann::json arr = nlohmann::json::array();
    for (const ExperimentReport& r : reports) {
        nlohmann::json j = {{"name", r.name},
                            {"kind", r.kind},
                            {"depth", r.depth},
                            {"n", r.n},
                            {"atoms", r.atoms},
                            {"generations", r.generations},
                            {"seed", r.seed},
                            {"backend", r.backend},
                            {"mass", r.mass},
                            {"lhs", r.lhs},
                            {"lhs_haar", r.lhs_haar},
                            {"rhs_cubes", r.rhs_cubes},
                            {"rhs_integral", r.rhs_integral},
                            {"ratio_pv", r.ratio_pv},
                            {"ratio_haar", r.ratio_haar},
                            {"ratio_integral", r.ratio_integral},
                            {"invariants", r.invariants},
                            {"timings", r.timings},
                            {"ok", r.ok()}};
        if (!r.error.empty()) j["error"] = r.error;
        arr.push_back(std::move(j));
    }
    out << nlohmann::json{{"schema", "gmt.report/1"}, {"experiments", std::move(arr)}}.dump(2) << '\n';
}

void write_report_csv(const std::vector<ExperimentReport>& reports, std::ostream& out)
{
    std::ostringstream s;
    s.precision(12);
    s << "name,kind,depth,n,atoms,generations,backend,mass,lhs,lhs_haar,rhs_cubes,rhs_integral,ratio_pv,ratio_haar,"
         "ratio_integral,ok\n";
    for (const ExperimentReport& r : reports)
        s << r.name << ',' << r.kind << ',' << r.depth << ',' << r.n << ',' << r.atoms << ',' << r.generations << ','
          << r.backend << ',' << r.mass << ',' << r.lhs << ',' << r.lhs_haar << ',' << r.rhs_cubes << ','
          << r.rhs_integral << ',' << r.ratio_pv << ',' << r.ratio_haar << ',' << r.ratio_integral << ','
          << (r.ok() ? 1 : 0) << '\n';
    out << s.str();
}

}  // namespace gmt
