#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fairmig/experiment.hpp"

namespace {

using namespace fairmig;

std::vector<double> parse_doubles(const std::string& csv) {
    std::vector<double> out;
    std::stringstream ss(csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        tok = detail::trim(tok);
        if (!tok.empty()) out.push_back(std::stod(tok));
    }
    return out;
}

std::vector<std::uint64_t> parse_seeds(const std::string& csv) {
    std::vector<std::uint64_t> out;
    std::stringstream ss(csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        tok = detail::trim(tok);
        if (!tok.empty()) out.push_back(std::stoull(tok));
    }
    return out;
}

void print_aggregate(const Json& agg) {
    auto cell = [&](const char* name) {
        const Json& m = agg.at(name);
        if (m.at("mean").is_null()) return std::string("n/a");
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.4f +/- %.4f", m.at("mean").get<double>(),
                      m.at("std").get<double>());
        return std::string(buf);
    };
    std::cout << "variant=" << agg.at("variant").get<std::string>()
              << " backbone=" << agg.at("backbone").get<std::string>()
              << " seeds=" << agg.at("n_seeds").get<int>()
              << (agg.at("partial").get<bool>() ? " [PARTIAL]" : "") << "\n"
              << "  auc      " << cell("auc") << "\n"
              << "  delta_sp " << cell("delta_sp") << "\n"
              << "  delta_eo " << cell("delta_eo") << "\n";
}

void print_compare(const std::vector<CompareRow>& rows) {
    std::printf("%-28s %8s %9s %9s %7s %7s %7s %8s\n", "run", "auc", "delta_sp", "delta_eo",
                "r_auc", "r_sp", "r_eo", "avg_rank");
    for (const CompareRow& r : rows) {
        std::string label = r.variant + " (" + r.dir + ")";
        if (label.size() > 28) label = label.substr(label.size() - 28);
        std::printf("%-28s %8.4f %9.4f %9.4f %7.2f %7.2f %7.2f %8.3f\n", label.c_str(), r.auc,
                    r.delta_sp, r.delta_eo, r.rank_auc, r.rank_sp, r.rank_eo, r.avg_rank);
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Fairness-aware GNN training with dynamic demographic-group migration"};
    app.require_subcommand(1);

    std::string config_path, out_dir, variant, seeds_csv;

    auto* train = app.add_subcommand("train", "Run the two-stage pipeline for every seed");
    train->add_option("--config", config_path, "experiment config file")->required();
    train->add_option("--out", out_dir, "override out_dir");
    train->add_option("--variant", variant, "override variant (full|wo_mig|wo_adv|wo_ssf|wo_wei|vanilla)");
    train->add_option("--seeds", seeds_csv, "override seeds, comma separated");

    std::string run_dir;
    std::uint64_t eval_seed = 0;
    bool eval_check = false;
    auto* evaluate = app.add_subcommand("evaluate", "Recompute a stored seed report from its checkpoint");
    evaluate->add_option("--run-dir", run_dir, "run directory")->required();
    evaluate->add_option("--seed", eval_seed, "seed to evaluate")->required();
    evaluate->add_flag("--check", eval_check, "compare byte-for-byte with the stored report");

    std::string ablate_variants = "full,wo_mig,wo_adv,wo_ssf,wo_wei,vanilla";
    auto* ablate_cmd = app.add_subcommand("ablate", "Run ablation variants on a shared config and rank them");
    ablate_cmd->add_option("--config", config_path, "experiment config file")->required();
    ablate_cmd->add_option("--variants", ablate_variants, "comma-separated variant list");
    ablate_cmd->add_option("--out", out_dir, "override out_dir");
    ablate_cmd->add_option("--seeds", seeds_csv, "override seeds");

    std::string sweep_kind = "lambda-beta", values1, values2;
    auto* sweep_cmd = app.add_subcommand("sweep", "Grid sweep over (lambda,beta) or (alpha,gamma)");
    sweep_cmd->add_option("--config", config_path, "experiment config file")->required();
    sweep_cmd->add_option("--kind", sweep_kind, "lambda-beta | alpha-gamma");
    sweep_cmd->add_option("--values1", values1, "first parameter values, comma separated");
    sweep_cmd->add_option("--values2", values2, "second parameter values, comma separated");
    sweep_cmd->add_option("--out", out_dir, "override out_dir");

    std::vector<std::string> compare_dirs;
    auto* compare_cmd = app.add_subcommand("compare", "Rank finished runs (same dataset and backbone)");
    compare_cmd->add_option("dirs", compare_dirs, "run directories")->expected(-2);

    std::string synth_out;
    fairmig::SyntheticSpec synth_spec;
    auto* synth = app.add_subcommand("synth", "Materialize a synthetic biased graph as dataset files");
    synth->add_option("--out", synth_out, "output dataset directory")->required();
    synth->add_option("--n", synth_spec.n_nodes, "node count");
    synth->add_option("--leakage", synth_spec.sensitive_feature_leakage, "sensitive leakage in [0,1]");
    synth->add_option("--homophily", synth_spec.homophily, "edge homophily in [0,1]");
    synth->add_option("--skew0", synth_spec.label_skew_per_group[0], "P(y=1|s=0)");
    synth->add_option("--skew1", synth_spec.label_skew_per_group[1], "P(y=1|s=1)");
    synth->add_option("--feature-dim", synth_spec.feature_dim, "feature count");
    synth->add_option("--mean-degree", synth_spec.mean_degree, "target mean degree");
    synth->add_option("--seed", synth_spec.seed, "generator seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*train) {
            ExperimentConfig cfg = parse_experiment_config(config_path);
            if (!out_dir.empty()) cfg.out_dir = out_dir;
            if (!variant.empty()) cfg.variant = variant_from_string(variant);
            if (!seeds_csv.empty()) cfg.seeds = parse_seeds(seeds_csv);
            RunSummary rs = run(cfg);
            std::cout << "run directory: " << rs.dir.string() << "\n";
            print_aggregate(rs.aggregate);
        } else if (*evaluate) {
            Json fresh = evaluate_run_seed(run_dir, eval_seed);
            if (eval_check) {
                std::ifstream stored_in(fs::path(run_dir) / ("seed_" + std::to_string(eval_seed)) /
                                        "report.json");
                if (!stored_in) throw SchemaError("stored report.json not found");
                std::stringstream stored;
                stored << stored_in.rdbuf();
                const std::string recomputed = fresh.dump(2) + "\n";
                if (stored.str() == recomputed) {
                    std::cout << "report reproduced exactly\n";
                } else {
                    std::cout << "MISMATCH between stored and recomputed report\n" << recomputed;
                    return 1;
                }
            } else {
                std::cout << fresh.dump(2) << "\n";
            }
        } else if (*ablate_cmd) {
            ExperimentConfig cfg = parse_experiment_config(config_path);
            if (!out_dir.empty()) cfg.out_dir = out_dir;
            if (!seeds_csv.empty()) cfg.seeds = parse_seeds(seeds_csv);
            std::vector<Variant> variants;
            std::stringstream ss(ablate_variants);
            std::string tok;
            while (std::getline(ss, tok, ','))
                if (!detail::trim(tok).empty()) variants.push_back(variant_from_string(detail::trim(tok)));
            print_compare(ablate(cfg, variants));
        } else if (*sweep_cmd) {
            ExperimentConfig cfg = parse_experiment_config(config_path);
            if (!out_dir.empty()) cfg.out_dir = out_dir;
            std::vector<double> v1 = values1.empty()
                                         ? (sweep_kind == "lambda-beta"
                                                ? std::vector<double>{5, 10, 15, 20}
                                                : std::vector<double>{0.2, 0.4, 0.6, 0.8})
                                         : parse_doubles(values1);
            std::vector<double> v2 = values2.empty()
                                         ? (sweep_kind == "lambda-beta"
                                                ? std::vector<double>{0.01, 0.05, 0.1, 0.5, 1.0}
                                                : std::vector<double>{0.2, 0.4, 0.6, 0.8, 1.0})
                                         : parse_doubles(values2);
            SweepResult sr = sweep(cfg, sweep_kind, v1, v2);
            std::cout << "sweep grid written to " << sr.csv_path.string() << " ("
                      << sr.cells.size() << " cells)\n";
        } else if (*compare_cmd) {
            std::vector<fs::path> dirs(compare_dirs.begin(), compare_dirs.end());
            print_compare(compare(dirs));
        } else if (*synth) {
            Graph g = generate_synthetic(synth_spec);
            save_dataset(g, synth_out);
            std::cout << "synthetic dataset written to " << synth_out << " (n=" << g.n
                      << ", edges=" << g.adj.nonZeros() / 2 << ")\n";
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
