#pragma once

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fairmig/checkpoint.hpp"
#include "fairmig/graph.hpp"
#include "fairmig/metrics.hpp"
#include "fairmig/model.hpp"
#include "fairmig/ssl.hpp"
#include "fairmig/sup.hpp"
#include "fairmig/synthetic.hpp"
#include "fairmig/version.hpp"

namespace fairmig {

namespace fs = std::filesystem;

struct ComparisonError : std::runtime_error {
    explicit ComparisonError(const std::string& msg)
        : std::runtime_error("comparison error: " + msg) {}
};

enum class Variant { Full, WoMig, WoAdv, WoSsf, WoWei, Vanilla };

inline std::string to_string(Variant v) {
    switch (v) {
        case Variant::Full: return "full";
        case Variant::WoMig: return "wo_mig";
        case Variant::WoAdv: return "wo_adv";
        case Variant::WoSsf: return "wo_ssf";
        case Variant::WoWei: return "wo_wei";
        case Variant::Vanilla: return "vanilla";
    }
    throw ContractError("unknown variant");
}

inline Variant variant_from_string(const std::string& s) {
    if (s == "full") return Variant::Full;
    if (s == "wo_mig") return Variant::WoMig;
    if (s == "wo_adv") return Variant::WoAdv;
    if (s == "wo_ssf") return Variant::WoSsf;
    if (s == "wo_wei") return Variant::WoWei;
    if (s == "vanilla") return Variant::Vanilla;
    throw ConfigError("unknown variant '" + s + "'");
}

inline const std::vector<Variant>& all_variants() {
    static const std::vector<Variant> v{Variant::Full,  Variant::WoMig, Variant::WoAdv,
                                        Variant::WoSsf, Variant::WoWei, Variant::Vanilla};
    return v;
}

struct ExperimentConfig {
    // data: a dataset directory or a synthetic spec
    std::string dataset_dir;
    bool use_synthetic = false;
    SyntheticSpec synthetic;
    double train_frac = 0.5, val_frac = 0.25, test_frac = 0.25;
    // model
    Backbone backbone = Backbone::GCN;
    int hidden_dim = 16;
    int embed_dim = 16;
    int n_layers = 2;
    double appnp_teleport = 0.1;
    int appnp_iterations = 10;
    // stage 1
    double alpha = 0.6;
    double gamma = 0.6;
    int ssl_epochs = 200;
    int migration_cadence = 1;
    // stage 2
    double lambda = 10.0;
    double beta = 0.1;
    int sup_epochs = 500;
    int adversary_steps = 1;
    AdversaryObjective adversary_objective = AdversaryObjective::Verbatim;
    // optimization
    double lr = 1e-3;
    double weight_decay = 1e-5;
    double threshold = 0.5;
    // run
    std::vector<std::uint64_t> seeds{1};
    Variant variant = Variant::Full;
    std::string out_dir = "run";
};

inline void validate(const ExperimentConfig& c) {
    if (c.alpha < 0.0 || c.alpha > 1.0 || c.gamma < 0.0 || c.gamma > 1.0)
        throw ConfigError("alpha and gamma must lie in [0,1]");
    if (c.lambda < 0.0 || c.beta < 0.0) throw ConfigError("lambda and beta must be non-negative");
    if (c.seeds.empty()) throw ConfigError("at least one seed is required");
    if (c.dataset_dir.empty() && !c.use_synthetic)
        throw ConfigError("either a dataset directory or a synthetic spec is required");
    if (!(c.threshold > 0.0 && c.threshold < 1.0))
        throw ConfigError("threshold must lie strictly inside (0,1)");
}

// Variant semantics, normalized into plain hyperparameter forcings so that
// e.g. a vanilla run is byte-identical no matter which alpha/gamma/lambda/beta
// the caller left in the config.
struct ResolvedConfig {
    ExperimentConfig cfg;
    bool run_stage1 = true;
    bool enable_migration = true;
    bool adversarial_enabled = true;
    bool reweight_enabled = true;
};

inline ResolvedConfig resolve_variant(ExperimentConfig cfg) {
    ResolvedConfig r;
    switch (cfg.variant) {
        case Variant::Full: break;
        case Variant::WoMig:
            r.enable_migration = false;
            cfg.lambda = 0.0;
            break;
        case Variant::WoAdv:
            r.adversarial_enabled = false;
            cfg.beta = 0.0;
            break;
        case Variant::WoSsf:
            r.run_stage1 = false;
            cfg.alpha = 0.0;
            cfg.gamma = 0.0;
            cfg.ssl_epochs = 0;
            break;
        case Variant::WoWei: r.reweight_enabled = false; break;
        case Variant::Vanilla:
            r.run_stage1 = false;
            r.adversarial_enabled = false;
            cfg.alpha = 0.0;
            cfg.gamma = 0.0;
            cfg.ssl_epochs = 0;
            cfg.lambda = 0.0;
            cfg.beta = 0.0;
            break;
    }
    r.cfg = std::move(cfg);
    return r;
}

inline Json config_to_json(const ExperimentConfig& c) {
    const ResolvedConfig r = resolve_variant(c);
    const ExperimentConfig& e = r.cfg;
    Json j;
    j["schema_version"] = kSchemaVersion;
    j["dataset"] = e.dataset_dir;
    j["use_synthetic"] = e.use_synthetic;
    if (e.use_synthetic) {
        j["synthetic"] = {{"n_nodes", e.synthetic.n_nodes},
                          {"group_fraction0", e.synthetic.group_fractions[0]},
                          {"group_fraction1", e.synthetic.group_fractions[1]},
                          {"skew0", e.synthetic.label_skew_per_group[0]},
                          {"skew1", e.synthetic.label_skew_per_group[1]},
                          {"homophily", e.synthetic.homophily},
                          {"feature_dim", e.synthetic.feature_dim},
                          {"leakage", e.synthetic.sensitive_feature_leakage},
                          {"mean_degree", e.synthetic.mean_degree}};
    }
    j["splits"] = {{"train", e.train_frac}, {"val", e.val_frac}, {"test", e.test_frac}};
    j["backbone"] = to_string(e.backbone);
    j["hidden_dim"] = e.hidden_dim;
    j["embed_dim"] = e.embed_dim;
    j["n_layers"] = e.n_layers;
    j["appnp_teleport"] = e.appnp_teleport;
    j["appnp_iterations"] = e.appnp_iterations;
    j["alpha"] = e.alpha;
    j["gamma"] = e.gamma;
    j["ssl_epochs"] = e.ssl_epochs;
    j["migration_cadence"] = e.migration_cadence;
    j["lambda"] = e.lambda;
    j["beta"] = e.beta;
    j["sup_epochs"] = e.sup_epochs;
    j["adversary_steps"] = e.adversary_steps;
    j["adversary_objective"] = to_string(e.adversary_objective);
    j["lr"] = e.lr;
    j["weight_decay"] = e.weight_decay;
    j["threshold"] = e.threshold;
    j["variant"] = to_string(e.variant);
    j["seeds"] = e.seeds;
    j["out_dir"] = e.out_dir;
    return j;
}

inline ExperimentConfig config_from_json(const Json& j) {
    ExperimentConfig c;
    c.dataset_dir = j.at("dataset").get<std::string>();
    c.use_synthetic = j.at("use_synthetic").get<bool>();
    if (c.use_synthetic) {
        const auto& s = j.at("synthetic");
        c.synthetic.n_nodes = s.at("n_nodes").get<int>();
        c.synthetic.group_fractions = {s.at("group_fraction0").get<double>(),
                                       s.at("group_fraction1").get<double>()};
        c.synthetic.label_skew_per_group = {s.at("skew0").get<double>(),
                                            s.at("skew1").get<double>()};
        c.synthetic.homophily = s.at("homophily").get<double>();
        c.synthetic.feature_dim = s.at("feature_dim").get<int>();
        c.synthetic.sensitive_feature_leakage = s.at("leakage").get<double>();
        c.synthetic.mean_degree = s.at("mean_degree").get<double>();
    }
    c.train_frac = j.at("splits").at("train").get<double>();
    c.val_frac = j.at("splits").at("val").get<double>();
    c.test_frac = j.at("splits").at("test").get<double>();
    c.backbone = backbone_from_string(j.at("backbone").get<std::string>());
    c.hidden_dim = j.at("hidden_dim").get<int>();
    c.embed_dim = j.at("embed_dim").get<int>();
    c.n_layers = j.at("n_layers").get<int>();
    c.appnp_teleport = j.at("appnp_teleport").get<double>();
    c.appnp_iterations = j.at("appnp_iterations").get<int>();
    c.alpha = j.at("alpha").get<double>();
    c.gamma = j.at("gamma").get<double>();
    c.ssl_epochs = j.at("ssl_epochs").get<int>();
    c.migration_cadence = j.at("migration_cadence").get<int>();
    c.lambda = j.at("lambda").get<double>();
    c.beta = j.at("beta").get<double>();
    c.sup_epochs = j.at("sup_epochs").get<int>();
    c.adversary_steps = j.at("adversary_steps").get<int>();
    c.adversary_objective =
        adversary_objective_from_string(j.at("adversary_objective").get<std::string>());
    c.lr = j.at("lr").get<double>();
    c.weight_decay = j.at("weight_decay").get<double>();
    c.threshold = j.at("threshold").get<double>();
    c.variant = variant_from_string(j.at("variant").get<std::string>());
    c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    c.out_dir = j.at("out_dir").get<std::string>();
    return c;
}

// Identity of a run for reports and cross-run comparison; out_dir and seeds
// are excluded so relocated or re-seeded copies of the same experiment hash
// alike.
inline std::string config_hash(const ExperimentConfig& c) {
    Json j = config_to_json(c);
    j.erase("out_dir");
    j.erase("seeds");
    return hex64(hash_bytes(j.dump()));
}

inline std::string dataset_id(const ExperimentConfig& c) {
    if (!c.use_synthetic) return "file:" + c.dataset_dir;
    Json j = config_to_json(c).at("synthetic");
    return "synthetic:" + hex64(hash_bytes(j.dump()));
}

// Flat key-value experiment file; unknown keys are rejected to catch typos.
inline ExperimentConfig parse_experiment_config(const fs::path& path) {
    auto kv = read_kv_file(path);
    ExperimentConfig c;
    auto take = [&](const char* key) -> std::optional<std::string> {
        auto it = kv.find(key);
        if (it == kv.end()) return std::nullopt;
        std::string v = it->second;
        kv.erase(it);
        return v;
    };
    auto as_double = [](const std::string& s, const char* key) {
        try {
            return std::stod(s);
        } catch (...) {
            throw ConfigError(std::string("bad number for ") + key + ": " + s);
        }
    };
    auto as_int = [&](const std::string& s, const char* key) {
        return static_cast<int>(as_double(s, key));
    };
    if (auto v = take("dataset")) c.dataset_dir = *v;
    if (auto v = take("synthetic")) c.use_synthetic = (*v == "true" || *v == "1");
    if (auto v = take("synthetic.n")) c.synthetic.n_nodes = as_int(*v, "synthetic.n");
    if (auto v = take("synthetic.group_fraction1")) {
        const double f1 = as_double(*v, "synthetic.group_fraction1");
        c.synthetic.group_fractions = {1.0 - f1, f1};
    }
    if (auto v = take("synthetic.skew0"))
        c.synthetic.label_skew_per_group[0] = as_double(*v, "synthetic.skew0");
    if (auto v = take("synthetic.skew1"))
        c.synthetic.label_skew_per_group[1] = as_double(*v, "synthetic.skew1");
    if (auto v = take("synthetic.homophily")) c.synthetic.homophily = as_double(*v, "homophily");
    if (auto v = take("synthetic.feature_dim"))
        c.synthetic.feature_dim = as_int(*v, "feature_dim");
    if (auto v = take("synthetic.leakage"))
        c.synthetic.sensitive_feature_leakage = as_double(*v, "leakage");
    if (auto v = take("synthetic.mean_degree"))
        c.synthetic.mean_degree = as_double(*v, "mean_degree");
    if (auto v = take("train_frac")) c.train_frac = as_double(*v, "train_frac");
    if (auto v = take("val_frac")) c.val_frac = as_double(*v, "val_frac");
    if (auto v = take("test_frac")) c.test_frac = as_double(*v, "test_frac");
    if (auto v = take("backbone")) c.backbone = backbone_from_string(*v);
    if (auto v = take("hidden_dim")) c.hidden_dim = as_int(*v, "hidden_dim");
    if (auto v = take("embed_dim")) c.embed_dim = as_int(*v, "embed_dim");
    if (auto v = take("n_layers")) c.n_layers = as_int(*v, "n_layers");
    if (auto v = take("appnp_teleport")) c.appnp_teleport = as_double(*v, "appnp_teleport");
    if (auto v = take("appnp_iterations")) c.appnp_iterations = as_int(*v, "appnp_iterations");
    if (auto v = take("alpha")) c.alpha = as_double(*v, "alpha");
    if (auto v = take("gamma")) c.gamma = as_double(*v, "gamma");
    if (auto v = take("ssl_epochs")) c.ssl_epochs = as_int(*v, "ssl_epochs");
    if (auto v = take("migration_cadence")) c.migration_cadence = as_int(*v, "migration_cadence");
    if (auto v = take("lambda")) c.lambda = as_double(*v, "lambda");
    if (auto v = take("beta")) c.beta = as_double(*v, "beta");
    if (auto v = take("sup_epochs")) c.sup_epochs = as_int(*v, "sup_epochs");
    if (auto v = take("adversary_steps")) c.adversary_steps = as_int(*v, "adversary_steps");
    if (auto v = take("adversary_objective"))
        c.adversary_objective = adversary_objective_from_string(*v);
    if (auto v = take("lr")) c.lr = as_double(*v, "lr");
    if (auto v = take("weight_decay")) c.weight_decay = as_double(*v, "weight_decay");
    if (auto v = take("threshold")) c.threshold = as_double(*v, "threshold");
    if (auto v = take("variant")) c.variant = variant_from_string(*v);
    if (auto v = take("out_dir")) c.out_dir = *v;
    if (auto v = take("seeds")) {
        c.seeds.clear();
        std::stringstream ss(*v);
        std::string tok;
        while (std::getline(ss, tok, ',')) {
            tok = detail::trim(tok);
            if (!tok.empty()) c.seeds.push_back(std::stoull(tok));
        }
    }
    if (!kv.empty()) throw ConfigError("unknown config key: " + kv.begin()->first);
    validate(c);
    return c;
}

// Relative output directories resolve under $FAIRMIG_OUTPUT_ROOT when set.
inline fs::path resolve_out_dir(const std::string& out_dir) {
    fs::path p(out_dir);
    if (p.is_absolute()) return p;
    if (const char* root = std::getenv("FAIRMIG_OUTPUT_ROOT")) return fs::path(root) / p;
    return p;
}

inline std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// ---------------------------------------------------------------------------
// Single-seed pipeline

inline Graph build_experiment_graph(const ExperimentConfig& cfg, std::uint64_t seed) {
    Graph g;
    if (cfg.use_synthetic) {
        SyntheticSpec spec = cfg.synthetic;
        spec.seed = derive_seed(seed, "data");
        g = generate_synthetic(spec);
    } else {
        g = load_dataset(fs::path(cfg.dataset_dir));
    }
    return make_splits(std::move(g), cfg.train_frac, cfg.val_frac, cfg.test_frac, seed);
}

inline FairnessReport test_report_of(const Graph& g, ModelBundle& models, double threshold) {
    ad::Tape tape;
    auto a_norm = std::make_shared<const SpMat>(normalize_adjacency(g.adj));
    ad::Var z = encode_on_tape(tape, nullptr, models.encoder, a_norm, g.X);
    const Vec scores = tape.value(classify_on_tape(tape, nullptr, models.heads, z)).col(0);
    return make_report(scores, g.labels, g.sensitive(), g.split_indices(Split::Test),
                       tape.value(z), grouping_from(g.sensitive()), threshold, "test");
}

struct SeedArtifacts {
    FairnessReport test_report;
    SupResult sup;
    MigrationState stage1_state;
    Checkpoint ckpt;
};

inline SeedArtifacts run_single_seed(const ResolvedConfig& rc, std::uint64_t seed) {
    const ExperimentConfig& cfg = rc.cfg;
    Graph g = build_experiment_graph(cfg, seed);
    ModelBundle models = init_models(cfg.backbone, g.feature_dim(), cfg.hidden_dim, cfg.embed_dim,
                                     cfg.n_layers, cfg.appnp_teleport, cfg.appnp_iterations, seed);
    SeedArtifacts out;
    if (rc.run_stage1) {
        SslConfig s1;
        s1.alpha = cfg.alpha;
        s1.gamma = cfg.gamma;
        s1.epochs = cfg.ssl_epochs;
        s1.migration_cadence = cfg.migration_cadence;
        s1.lr = cfg.lr;
        s1.weight_decay = cfg.weight_decay;
        s1.enable_migration = rc.enable_migration;
        s1.reweight_enabled = rc.reweight_enabled;
        s1.master_seed = seed;
        out.stage1_state = ssl_stage_train(g, models, s1).state;
    } else {
        out.stage1_state = init_migration_state(g.sensitive());
        out.stage1_state.frozen = true;
    }

    SupConfig s2;
    s2.lambda = cfg.lambda;
    s2.beta = cfg.beta;
    s2.epochs = cfg.sup_epochs;
    s2.adversary_steps_per_epoch = cfg.adversary_steps;
    s2.lr_encoder = s2.lr_classifier = s2.lr_estimator = s2.lr_adversary = cfg.lr;
    s2.weight_decay = cfg.weight_decay;
    s2.adversary_objective = cfg.adversary_objective;
    s2.adversarial_enabled = rc.adversarial_enabled;
    s2.reweight_enabled = rc.reweight_enabled;
    s2.threshold = cfg.threshold;
    s2.master_seed = seed;
    out.sup = sup_stage_train(g, models, out.stage1_state, s2);

    out.test_report = test_report_of(g, out.sup.best_models, cfg.threshold);
    out.ckpt.models = out.sup.best_models;
    out.ckpt.seed = seed;
    return out;
}

// ---------------------------------------------------------------------------
// Artifact writers

inline Json report_to_json(const FairnessReport& r, const std::string& cfg_hash,
                           std::uint64_t seed) {
    Json j;
    j["schema_version"] = kSchemaVersion;
    j["version"] = kVersion;
    j["config_hash"] = cfg_hash;
    j["seed"] = seed;
    j["split"] = r.split;
    j["threshold"] = r.threshold;
    j["auc"] = r.auc;
    j["delta_sp"] = r.delta_sp;
    j["delta_eo"] = r.delta_eo;
    Json groups = Json::array();
    for (const GroupStats& gs : r.group_stats)
        groups.push_back({{"count", gs.count}, {"mu", gs.mu}, {"sigma", gs.sigma}});
    j["group_stats"] = std::move(groups);
    return j;
}

inline void write_epochs_csv(const fs::path& path, const std::vector<EpochLog>& logs) {
    std::ofstream out(path);
    out << "schema_version,epoch,loss_ce,loss_mig,loss_adv,val_auc,val_delta_sp,val_delta_eo,"
           "mu0,sigma0,mu1,sigma1\n";
    for (const EpochLog& l : logs)
        out << kSchemaVersion << "," << l.epoch << "," << fmt_double(l.loss_ce) << ","
            << fmt_double(l.loss_mig) << "," << fmt_double(l.loss_adv) << ","
            << fmt_double(l.val_auc) << "," << fmt_double(l.val_delta_sp) << ","
            << fmt_double(l.val_delta_eo) << "," << fmt_double(l.stats[0].mu) << ","
            << fmt_double(l.stats[0].sigma) << "," << fmt_double(l.stats[1].mu) << ","
            << fmt_double(l.stats[1].sigma) << "\n";
}

inline void write_migration_trace_csv(const fs::path& path, const std::vector<MigrationRecord>& hist) {
    std::ofstream out(path);
    out << "schema_version,epoch,mu0,sigma0,mu1,sigma1,n_flips_0to1,n_flips_1to0,n_skipped\n";
    for (const MigrationRecord& r : hist)
        out << kSchemaVersion << "," << r.epoch << "," << fmt_double(r.mu0) << ","
            << fmt_double(r.sigma0) << "," << fmt_double(r.mu1) << "," << fmt_double(r.sigma1)
            << "," << r.flips_0to1 << "," << r.flips_1to0 << "," << r.n_skipped << "\n";
}

struct RunSummary {
    fs::path dir;
    Json aggregate;
};

// Full experiment: one training pipeline per seed, per-seed artifacts, then a
// mean/std aggregate. A seed failure is recorded and the remaining seeds
// continue; the aggregate is marked partial.
inline RunSummary run(const ExperimentConfig& cfg_in) {
    validate(cfg_in);
    const ResolvedConfig rc = resolve_variant(cfg_in);
    const ExperimentConfig& cfg = rc.cfg;
    const fs::path dir = resolve_out_dir(cfg.out_dir);
    fs::create_directories(dir);
    {
        std::ofstream out(dir / "config.json");
        out << config_to_json(cfg).dump(2) << "\n";
    }
    const std::string chash = config_hash(cfg);

    Json per_seed = Json::array();
    std::vector<double> aucs, dsps, deos;
    int failed = 0;
    for (std::uint64_t seed : cfg.seeds) {
        const fs::path sdir = dir / ("seed_" + std::to_string(seed));
        fs::create_directories(sdir);
        Json row;
        row["seed"] = seed;
        try {
            SeedArtifacts art = run_single_seed(rc, seed);
            {
                std::ofstream out(sdir / "report.json");
                out << report_to_json(art.test_report, chash, seed).dump(2) << "\n";
            }
            write_epochs_csv(sdir / "epochs.csv", art.sup.logs);
            write_migration_trace_csv(sdir / "migration_trace.csv", art.stage1_state.history);
            save_checkpoint(sdir / "checkpoint.json", art.ckpt);
            row["status"] = "ok";
            row["auc"] = art.test_report.auc;
            row["delta_sp"] = art.test_report.delta_sp;
            row["delta_eo"] = art.test_report.delta_eo;
            row["best_epoch"] = art.sup.best_epoch;
            aucs.push_back(art.test_report.auc);
            dsps.push_back(art.test_report.delta_sp);
            deos.push_back(art.test_report.delta_eo);
        } catch (const std::exception& e) {
            failed++;
            row["status"] = "failed";
            row["error"] = e.what();
            std::ofstream err(sdir / "error.txt");
            err << e.what() << "\n";
        }
        per_seed.push_back(std::move(row));
    }

    auto mean_std = [](const std::vector<double>& xs) {
        Json j;
        if (xs.empty()) {
            j["mean"] = nullptr;
            j["std"] = nullptr;
            return j;
        }
        double mean = 0.0;
        for (double x : xs) mean += x;
        mean /= static_cast<double>(xs.size());
        double var = 0.0;
        for (double x : xs) var += (x - mean) * (x - mean);
        var /= static_cast<double>(xs.size());  // population std over seeds
        j["mean"] = mean;
        j["std"] = std::sqrt(var);
        return j;
    };

    Json agg;
    agg["schema_version"] = kSchemaVersion;
    agg["version"] = kVersion;
    agg["config_hash"] = chash;
    agg["dataset_id"] = dataset_id(cfg);
    agg["backbone"] = to_string(cfg.backbone);
    agg["variant"] = to_string(cfg.variant);
    agg["n_seeds"] = cfg.seeds.size();
    agg["n_failed"] = failed;
    agg["partial"] = failed > 0;
    agg["auc"] = mean_std(aucs);
    agg["delta_sp"] = mean_std(dsps);
    agg["delta_eo"] = mean_std(deos);
    agg["per_seed"] = std::move(per_seed);
    {
        std::ofstream out(dir / "aggregate.json");
        out << agg.dump(2) << "\n";
    }
    return RunSummary{dir, std::move(agg)};
}

// Recompute the report of a stored seed checkpoint from scratch. Returns the
// freshly computed report JSON; byte-equality with the stored report.json is
// the self-description guarantee.
inline Json evaluate_run_seed(const fs::path& run_dir, std::uint64_t seed) {
    std::ifstream cin(run_dir / "config.json");
    if (!cin) throw SchemaError("cannot open " + (run_dir / "config.json").string());
    Json cj;
    cin >> cj;
    ExperimentConfig cfg = config_from_json(cj);
    Graph g = build_experiment_graph(cfg, seed);
    Checkpoint ckpt = load_checkpoint(run_dir / ("seed_" + std::to_string(seed)) / "checkpoint.json");
    FairnessReport rep = test_report_of(g, ckpt.models, cfg.threshold);
    return report_to_json(rep, config_hash(cfg), seed);
}

// ---------------------------------------------------------------------------
// Sweeps

struct SweepCell {
    double v1 = 0.0, v2 = 0.0;
    bool failed = false;
    Json aggregate;
};

struct SweepResult {
    std::string param1, param2;
    std::vector<SweepCell> cells;
    fs::path csv_path;
};

// Grid over (lambda, beta) or (alpha, gamma); one full run per cell, plus a
// CSV with one row per cell for downstream heatmaps.
inline SweepResult sweep(const ExperimentConfig& base, const std::string& kind,
                         const std::vector<double>& values1, const std::vector<double>& values2) {
    if (values1.empty() || values2.empty()) throw ConfigError("sweep grid must be non-empty");
    if (kind != "lambda-beta" && kind != "alpha-gamma")
        throw ConfigError("sweep kind must be lambda-beta or alpha-gamma");
    SweepResult res;
    res.param1 = kind == "lambda-beta" ? "lambda" : "alpha";
    res.param2 = kind == "lambda-beta" ? "beta" : "gamma";
    const fs::path dir = resolve_out_dir(base.out_dir);
    fs::create_directories(dir);
    for (double v1 : values1) {
        for (double v2 : values2) {
            ExperimentConfig cfg = base;
            if (kind == "lambda-beta") {
                cfg.lambda = v1;
                cfg.beta = v2;
            } else {
                cfg.alpha = v1;
                cfg.gamma = v2;
            }
            cfg.out_dir =
                (dir / ("cell_" + res.param1 + fmt_double(v1) + "_" + res.param2 + fmt_double(v2)))
                    .string();
            SweepCell cell;
            cell.v1 = v1;
            cell.v2 = v2;
            try {
                cell.aggregate = run(cfg).aggregate;
                cell.failed = cell.aggregate.at("partial").get<bool>() &&
                              cell.aggregate.at("n_failed").get<int>() ==
                                  static_cast<int>(cfg.seeds.size());
            } catch (const std::exception& e) {
                cell.failed = true;
                cell.aggregate = Json{{"error", e.what()}};
            }
            res.cells.push_back(std::move(cell));
        }
    }
    res.csv_path = dir / "sweep.csv";
    std::ofstream out(res.csv_path);
    out << "schema_version," << res.param1 << "," << res.param2
        << ",status,auc_mean,auc_std,delta_sp_mean,delta_sp_std,delta_eo_mean,delta_eo_std\n";
    for (const SweepCell& c : res.cells) {
        out << kSchemaVersion << "," << fmt_double(c.v1) << "," << fmt_double(c.v2) << ","
            << (c.failed ? "failed" : "ok");
        if (c.failed) {
            out << ",,,,,,\n";
            continue;
        }
        for (const char* m : {"auc", "delta_sp", "delta_eo"}) {
            const Json& ms = c.aggregate.at(m);
            out << "," << (ms.at("mean").is_null() ? "" : fmt_double(ms.at("mean").get<double>()))
                << "," << (ms.at("std").is_null() ? "" : fmt_double(ms.at("std").get<double>()));
        }
        out << "\n";
    }
    return res;
}

// ---------------------------------------------------------------------------
// Comparison

struct CompareRow {
    std::string dir;
    std::string variant;
    double auc = 0.0, delta_sp = 0.0, delta_eo = 0.0;
    double rank_auc = 0.0, rank_sp = 0.0, rank_eo = 0.0, avg_rank = 0.0;
};

// Average ranks with ties: rank each metric across runs (AUC high is good,
// the deltas low), then average the three ranks per run.
inline std::vector<CompareRow> compare(const std::vector<fs::path>& run_dirs) {
    if (run_dirs.size() < 2) throw ComparisonError("need at least two runs to compare");
    std::vector<CompareRow> rows;
    std::string dataset, backbone;
    for (const fs::path& d : run_dirs) {
        std::ifstream in(d / "aggregate.json");
        if (!in) throw ComparisonError("missing aggregate.json in " + d.string());
        Json a;
        in >> a;
        const std::string ds = a.at("dataset_id").get<std::string>();
        const std::string bb = a.at("backbone").get<std::string>();
        if (dataset.empty()) {
            dataset = ds;
            backbone = bb;
        } else if (ds != dataset || bb != backbone) {
            throw ComparisonError("runs mix datasets or backbones: " + d.string());
        }
        if (a.at("auc").at("mean").is_null())
            throw ComparisonError("run has no successful seeds: " + d.string());
        CompareRow r;
        r.dir = d.string();
        r.variant = a.at("variant").get<std::string>();
        r.auc = a.at("auc").at("mean").get<double>();
        r.delta_sp = a.at("delta_sp").at("mean").get<double>();
        r.delta_eo = a.at("delta_eo").at("mean").get<double>();
        rows.push_back(std::move(r));
    }
    auto assign_ranks = [&](auto key, bool higher_better, auto setter) {
        const std::size_t n = rows.size();
        for (std::size_t i = 0; i < n; ++i) {
            double better = 0.0, equal = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                if (j == i) continue;
                const double vi = key(rows[i]), vj = key(rows[j]);
                if (vj == vi)
                    equal += 1.0;
                else if ((higher_better && vj > vi) || (!higher_better && vj < vi))
                    better += 1.0;
            }
            setter(rows[i], 1.0 + better + equal / 2.0);  // average rank over ties
        }
    };
    assign_ranks([](const CompareRow& r) { return r.auc; }, true,
                 [](CompareRow& r, double v) { r.rank_auc = v; });
    assign_ranks([](const CompareRow& r) { return r.delta_sp; }, false,
                 [](CompareRow& r, double v) { r.rank_sp = v; });
    assign_ranks([](const CompareRow& r) { return r.delta_eo; }, false,
                 [](CompareRow& r, double v) { r.rank_eo = v; });
    for (CompareRow& r : rows) r.avg_rank = (r.rank_auc + r.rank_sp + r.rank_eo) / 3.0;
    std::stable_sort(rows.begin(), rows.end(),
                     [](const CompareRow& a, const CompareRow& b) { return a.avg_rank < b.avg_rank; });
    return rows;
}

// Run all requested variants with a shared config/seeds, then rank them.
inline std::vector<CompareRow> ablate(const ExperimentConfig& base,
                                      const std::vector<Variant>& variants) {
    if (variants.size() < 2) throw ConfigError("ablate needs at least two variants");
    const fs::path dir = resolve_out_dir(base.out_dir);
    std::vector<fs::path> dirs;
    for (Variant v : variants) {
        ExperimentConfig cfg = base;
        cfg.variant = v;
        cfg.out_dir = (dir / to_string(v)).string();
        dirs.push_back(run(cfg).dir);
    }
    return compare(dirs);
}

}  // namespace fairmig
