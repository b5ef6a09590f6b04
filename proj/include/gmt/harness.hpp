#pragma once

#include "gmt/coeffs.hpp"
#include "gmt/riesz.hpp"

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace gmt {

struct RunOptions {
    Params params;
    Backend backend = Backend::direct;
    double accuracy = 1e-3;
    int lattice_depth = 20;  // the lattice caps itself near the atom scale
};

struct ExperimentReport {
    std::string name;
    std::string kind;
    int depth = 0;
    int n = 0;
    long atoms = 0;
    int generations = 0;
    std::uint64_t seed = 0;
    std::string backend;

    double mass = 0.0;          // |mu|
    double lhs = 0.0;           // |pv R mu|^2_{L2(mu)} + |mu|
    double lhs_haar = 0.0;      // sum_Q |Delta_Q R mu|^2 + |mu|
    double rhs_cubes = 0.0;     // beta-Wolff cube sum + |mu|
    double rhs_integral = 0.0;  // sampled double integral of beta^2 theta + |mu|
    double ratio_pv = 0.0;      // lhs / rhs_cubes
    double ratio_haar = 0.0;    // lhs_haar / rhs_cubes
    double ratio_integral = 0.0;  // lhs_haar / rhs_integral

    std::map<std::string, bool> invariants;
    std::map<std::string, double> timings;  // seconds
    std::string error;  // set when the pipeline threw

    bool ok() const;
};

// Sum over atoms x and radii r_j = diam 2^{-j} >= min gap of
// w(x) beta_2(B(x,r_j))^2 theta(B(x,r_j)) ln 2.
double beta_theta_integral(const DiscreteMeasure& mu);

// measure -> lattice -> coefficients -> fields -> report
ExperimentReport verify_equivalence(const std::string& kind, int depth, const RunOptions& opt);

struct ExperimentSpec {
    std::string name;
    std::string kind;
    int depth = 0;
};

struct SuiteConfig {
    RunOptions run;
    std::vector<ExperimentSpec> experiments;

    // {"seed", "backend", "accuracy", "strict_paper_constants", "params": {key: value}
    //  or "params_file", "experiments": [{"name", "kind", "depth"} ...]}
    static SuiteConfig from_json(std::istream& in);
    static SuiteConfig from_file(const std::string& path);
};

struct SuiteResult {
    std::vector<ExperimentReport> reports;  // sorted by name
    int exit_status = 0;                    // nonzero when any report fails
};
SuiteResult run_suite(const SuiteConfig& cfg);
// Reads the config, writes report.json and summary.csv into out_dir.
SuiteResult run_suite(const std::string& config_path, const std::string& out_dir);

void write_report_json(const std::vector<ExperimentReport>& reports, std::ostream& out);
void write_report_csv(const std::vector<ExperimentReport>& reports, std::ostream& out);

}  // namespace gmt
