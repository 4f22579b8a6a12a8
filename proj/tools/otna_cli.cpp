#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "otna/csv_io.hpp"
#include "otna/experiments.hpp"
#include "otna/serialize.hpp"

using namespace otna;

namespace {

struct Globals {
    std::string config;
    std::uint64_t seed = 0;
    std::string out = "results";
    unsigned threads = 1;
};

Json load_config(const Globals& g) { return g.config.empty() ? Json::object() : read_json(g.config); }

RunContext context(const Globals& g) { return {g.out, g.seed, std::max(1u, g.threads)}; }

template <typename Config, typename Run>
void run_experiment(const Globals& g, const std::string& name, Config (*parse)(const Json&), Run run,
                    std::string section)
{
    Json j = load_config(g);
    if (j.contains(section)) j = j.at(section);
    const Config cfg = parse(j);
    const RunContext ctx = context(g);
    const auto report = run(cfg, ctx);
    const std::string dir = experiment_dir(ctx, name);
    const auto files = write_report(report, dir);
    Json extra = Json::object();
    if constexpr (std::is_same_v<Config, ConvergenceConfig>) {
        extra["population_bw"] = report.population_bw;
        if (report.naive_lower_bound) extra["naive_lower_bound"] = *report.naive_lower_bound;
    }
    write_manifest(dir, name, to_json(cfg), ctx, files, extra);
    std::cout << "wrote " << dir << '\n';
}

VectorXd parse_probs(const std::vector<double>& p, const Mask& mask)
{
    if (p.empty()) return estimate_missingness<double>(mask);
    if (p.size() == 1) return VectorXd::Constant(mask.cols(), p[0]);
    require_dims(static_cast<Eigen::Index>(p.size()) == mask.cols(), "one probability per column is required");
    return Eigen::Map<const VectorXd>(p.data(), mask.cols());
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Optimal transport with missing values: estimators and experiment harness"};
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    app.add_option("--config", g.config, "JSON config file");
    app.add_option("--seed", g.seed, "Base seed");
    app.add_option("--out", g.out, "Output root directory");
    app.add_option("--threads", g.threads, "Worker threads for replicates")->check(CLI::PositiveNumber);

    app.add_subcommand("convergence", "BW estimation error vs sample size (debiased and naive)");
    app.add_subcommand("mnar", "Robustness of BW estimation to MNAR contamination");
    app.add_subcommand("da", "Domain adaptation with missing values");
    app.add_subcommand("select", "Hyperparameter selection benchmark for two-step OT");

    auto* ot = app.add_subcommand("ot", "One-shot two-step OT between two CSV datasets");
    std::string x_path, y_path, completer = "soft_impute";
    double lambda_x = 0.0, lambda_y = 0.0, eps = 0.0, edge_quantile = -1.0;
    std::vector<double> probs_x, probs_y;
    ot->add_option("--x", x_path, "First dataset (CSV, empty or NA = missing)")->required()->check(CLI::ExistingFile);
    ot->add_option("--y", y_path, "Second dataset")->required()->check(CLI::ExistingFile);
    ot->add_option("--lambda-x", lambda_x, "Completion threshold for x")->check(CLI::NonNegativeNumber);
    ot->add_option("--lambda-y", lambda_y, "Completion threshold for y")->check(CLI::NonNegativeNumber);
    ot->add_option("--eps", eps, "Entropic regularization (0 = exact OT)")->check(CLI::NonNegativeNumber);
    ot->add_option("--completer", completer, "isvt or soft_impute")->check(CLI::IsMember({"isvt", "soft_impute"}));
    ot->add_option("--probs-x", probs_x, "Observation probabilities of x (default: estimated)");
    ot->add_option("--probs-y", probs_y, "Observation probabilities of y (default: estimated)");
    ot->add_option("--edges", edge_quantile, "Also write coupling edges above this mass quantile");

    auto* moments = app.add_subcommand("moments", "Debiased mean and covariance of a CSV dataset");
    std::string input;
    std::vector<double> probs;
    moments->add_option("--input", input, "Dataset (CSV, empty or NA = missing)")->required()->check(CLI::ExistingFile);
    moments->add_option("--probs", probs, "Observation probabilities (one, or one per column; default: estimated)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (app.got_subcommand("convergence")) {
            run_experiment(g, "convergence", &convergence_config, run_convergence, "convergence");
        } else if (app.got_subcommand("mnar")) {
            run_experiment(g, "mnar", &mnar_config, run_mnar_robustness, "mnar");
        } else if (app.got_subcommand("da")) {
            run_experiment(g, "da", &domain_adaptation_config, run_domain_adaptation, "da");
        } else if (app.got_subcommand("select")) {
            run_experiment(g, "select", &selection_config, run_selection_benchmark, "select");
        } else if (app.got_subcommand("ot")) {
            const Table tx = read_csv(x_path), ty = read_csv(y_path);
            const auto dx = tx.dataset(parse_probs(probs_x, tx.mask));
            const auto dy = ty.dataset(parse_probs(probs_y, ty.mask));
            CompletionConfig cc;
            cc.method = completer == "isvt" ? Completer::isvt : Completer::soft_impute;
            const MatrixXd metric = MatrixXd::Identity(dx.cols(), dx.cols());
            const auto res = two_step_entropic_ot(dx, dy, lambda_x, lambda_y, eps, metric, cc);
            const RunContext ctx = context(g);
            const std::string dir = experiment_dir(ctx, "ot");
            std::vector<std::string> files{"solution.json", "coupling.csv"};
            Json sol = to_json(res.solution);
            sol["eps"] = eps;
            if (eps > 0.0) sol["mutual_information_value"] = mutual_information_value(res.solution, eps);
            write_json((std::filesystem::path(dir) / files[0]).string(), sol);
            {
                std::ofstream out(std::filesystem::path(dir) / files[1]);
                write_coupling_csv(out, res.solution.coupling);
            }
            if (edge_quantile >= 0.0) {
                files.push_back("edges.csv");
                std::ofstream out(std::filesystem::path(dir) / files.back());
                write_coupling_edges(out, res.solution.coupling, edge_quantile);
            }
            const Json cfg{{"x", x_path},        {"y", y_path}, {"lambda_x", lambda_x}, {"lambda_y", lambda_y},
                           {"eps", eps},         {"completer", completer}, {"probs_x", vector_json(dx.probs())},
                           {"probs_y", vector_json(dy.probs())}};
            write_manifest(dir, "ot", cfg, ctx, files);
            std::cout << "value " << format_double(res.solution.value) << '\n';
        } else if (app.got_subcommand("moments")) {
            const Table t = read_csv(input);
            const auto data = t.dataset(parse_probs(probs, t.mask));
            const auto m = debiased_moments(data);
            Json j = to_json(m.projected);
            j["raw_cov"] = matrix_json(m.raw.cov);
            j["min_eigenvalue"] = m.min_eigenvalue;
            j["psd_certified"] = m.projected.psd_certified;
            j["probs"] = vector_json(data.probs());
            j["names"] = t.names;
            const RunContext ctx = context(g);
            const std::string dir = experiment_dir(ctx, "moments");
            write_json((std::filesystem::path(dir) / "summary.json").string(), j);
            write_manifest(dir, "moments", Json{{"input", input}, {"probs", vector_json(data.probs())}}, ctx,
                           {"summary.json"});
            std::cout << j.dump(2) << '\n';
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
