#include "gmt/approx.hpp"
#include "gmt/harness.hpp"

#include "CLI11.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

using namespace gmt;

namespace {

struct Common {
    std::string input, output, params_file, backend = "direct", kind = "segment";
    int depth = 6;
    int lattice_depth = 20;
    double accuracy = 1e-3;
    std::uint64_t seed = 0;
    bool strict = false;
};

Params load_params(const Common& o)
{
    Params p = o.params_file.empty() ? Params{} : Params::from_kv_file(o.params_file);
    if (o.seed) p.seed = o.seed;
    if (o.strict) p.strict = true;
    return p;
}

// stdout when the path is empty or "-"
void emit(const std::string& path, const std::function<void(std::ostream&)>& write)
{
    if (path.empty() || path == "-") {
        write(std::cout);
        return;
    }
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path);
    write(out);
    if (!out) throw std::runtime_error("write failed: " + path);
}

std::string with_extension(const std::string& path, const std::string& ext)
{
    return std::filesystem::path(path).replace_extension(ext).string();
}

DiscreteMeasure load_measure(const Common& o)
{
    if (o.input.empty()) throw CLI::ValidationError("--input", "a measure file is required");
    return read_measure(o.input);
}

void write_field_csv(const DiscreteMeasure& mu, const AtomField& f, std::ostream& out)
{
    std::ostringstream s;
    s.precision(17);
    s << "atom,weight";
    for (int k = 0; k < mu.dim(); ++k) s << ",x" << k;
    for (Index k = 0; k < f.cols(); ++k) s << ",R" << k;
    s << '\n';
    for (Index i = 0; i < mu.size(); ++i) {
        s << i << ',' << mu.weight(i);
        for (int k = 0; k < mu.dim(); ++k) s << ',' << mu.point(i)(k);
        for (Index k = 0; k < f.cols(); ++k) s << ',' << f(i, k);
        s << '\n';
    }
    out << s.str();
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Dyadic lattices, beta coefficients, Riesz transforms and corona decompositions of discrete measures"};
    app.require_subcommand(1);
    Common o;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--params", o.params_file, "key=value parameter file")->check(CLI::ExistingFile);
        sub->add_option("--seed", o.seed, "64-bit seed (0 keeps the parameter file value)");
        sub->add_flag("--strict-paper-constants", o.strict, "use the paper-scale constants");
        sub->add_option("--output,-o", o.output, "output file (stdout when omitted)");
    };
    auto add_input = [&](CLI::App* sub) {
        sub->add_option("--input,-i", o.input, "measure file (.csv or .json)")->check(CLI::ExistingFile);
        sub->add_option("--depth", o.lattice_depth, "lattice generations below the root");
    };
    auto add_backend = [&](CLI::App* sub) {
        sub->add_option("--backend", o.backend, "direct or tree")->check(CLI::IsMember({"direct", "tree"}));
        sub->add_option("--accuracy", o.accuracy, "relative accuracy of the tree backend")->check(CLI::PositiveNumber);
    };

    CLI::App* gen = app.add_subcommand("generate", "write a test measure");
    add_common(gen);
    gen->add_option("--kind", o.kind, "segment | plane_patch | lipschitz_graph | cantor_line | cantor4corner")
        ->check(CLI::IsMember({"segment", "plane_patch", "lipschitz_graph", "cantor_line", "cantor4corner"}));
    gen->add_option("--depth", o.depth, "construction depth");

    CLI::App* lat = app.add_subcommand("lattice", "build the dyadic lattice and write it as JSON");
    add_common(lat);
    add_input(lat);

    CLI::App* coeffs = app.add_subcommand("coeffs", "per-cube density, Poisson, beta and energy table (CSV)");
    add_common(coeffs);
    add_input(coeffs);

    CLI::App* riesz = app.add_subcommand("riesz", "principal-value Riesz transform at the atoms (CSV)");
    add_common(riesz);
    riesz->add_option("--input,-i", o.input, "measure file (.csv or .json)")->check(CLI::ExistingFile);
    add_backend(riesz);

    std::string eta_out;
    CLI::App* corona = app.add_subcommand("corona", "corona decomposition summary (JSON)");
    add_common(corona);
    add_input(corona);
    corona->add_option("--eta", eta_out, "also write the disk measure of the root spread tree to this JSON path");

    CLI::App* verify = app.add_subcommand("verify", "both sides of the main equivalence for one generator");
    add_common(verify);
    add_backend(verify);
    verify->add_option("--kind", o.kind, "generator kind")
        ->check(CLI::IsMember({"segment", "plane_patch", "lipschitz_graph", "cantor_line", "cantor4corner"}));
    verify->add_option("--depth", o.depth, "construction depth");

    CLI::App* suite = app.add_subcommand("suite", "run a JSON experiment config; writes report.json and summary.csv");
    suite->add_option("--input,-i", o.input, "suite config (JSON)")->required()->check(CLI::ExistingFile);
    suite->add_option("--output,-o", o.output, "report directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) {
            const DiscreteMeasure mu = generate(o.kind, o.depth);
            if (o.output.empty() || o.output == "-") write_measure_json(mu, std::cout);
            else write_measure(mu, o.output);
        } else if (lat->parsed()) {
            const Lattice L = build_lattice(load_measure(o), load_params(o), o.lattice_depth);
            emit(o.output, [&](std::ostream& out) { out << lattice_to_json(L) << '\n'; });
            for (const std::string& w : L.warnings()) std::cerr << "warning: " << w << '\n';
        } else if (coeffs->parsed()) {
            const Lattice L = build_lattice(load_measure(o), load_params(o), o.lattice_depth);
            const CoeffTable c = compute_coeffs(L);
            emit(o.output, [&](std::ostream& out) { write_coeffs_csv(c, out); });
        } else if (riesz->parsed()) {
            const DiscreteMeasure mu = load_measure(o);
            const AtomField f = pv_riesz_at_atoms(mu, parse_backend(o.backend), o.accuracy);
            emit(o.output, [&](std::ostream& out) { write_field_csv(mu, f, out); });
        } else if (corona->parsed()) {
            const Lattice L = build_lattice(load_measure(o), load_params(o), o.lattice_depth);
            const CoeffTable c = compute_coeffs(L);
            const CoronaForest f = build_top(c);
            emit(o.output, [&](std::ostream& out) { write_forest_json(f, out); });
            if (!eta_out.empty()) {
                const SpreadTree t = build_spread_tree(f, L.root(), L.root());
                const ApproxMeasure eta = eta_disks(L, t, L.params().quad_points);
                std::ofstream m(eta_out), side(with_extension(eta_out, ".pieces.json"));
                write_approx_json(eta, m, side);
            }
        } else if (verify->parsed()) {
            RunOptions run;
            run.params = load_params(o);
            run.backend = parse_backend(o.backend);
            run.accuracy = o.accuracy;
            const ExperimentReport r = verify_equivalence(o.kind, o.depth, run);
            emit(o.output, [&](std::ostream& out) { write_report_json({r}, out); });
            if (!o.output.empty() && o.output != "-")
                emit(with_extension(o.output, ".csv"), [&](std::ostream& out) { write_report_csv({r}, out); });
            return r.ok() ? 0 : 1;
        } else if (suite->parsed()) {
            const SuiteResult r = run_suite(o.input, o.output);
            for (const ExperimentReport& rep : r.reports)
                std::cout << (rep.ok() ? "ok    " : "FAIL  ") << rep.name
                          << (rep.error.empty() ? "" : "  (" + rep.error + ")") << '\n';
            return r.exit_status;
        }
    } catch (const std::exception& e) {
        std::cerr << "gmt-riesz: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
