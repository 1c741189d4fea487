// Command-line front end: synthetic data generation, training, evaluation
// protocols, ablations, sweeps and plot emission.

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "derl/serialize.hpp"
#include "derl/svg.hpp"
#include "derl/train.hpp"

namespace fs = std::filesystem;
using namespace derl;

namespace {

// Flat key=value run configuration with defaults, file loading and --set
// overrides. Unknown keys are rejected.
class RunConfig {
public:
    RunConfig() {
        set_default("seed", "0");
        set_default("data.n", "512");
        set_default("data.len_t", "8");
        set_default("data.len_v", "8");
        set_default("data.len_a", "8");
        set_default("data.dim_t", "16");
        set_default("data.dim_v", "16");
        set_default("data.dim_a", "16");
        set_default("data.redundancy", "0.5");
        set_default("data.noise_sigma", "0.3");

        set_default("model.dim", "16");
        set_default("model.bottleneck", "2");
        set_default("model.unified_depth", "1");
        set_default("model.fusion_depth", "2");
        set_default("model.heads", "1");
        set_default("model.k_private", "1");
        set_default("model.k_shared", "3");
        set_default("model.expert_hidden", "0");
        set_default("model.recon_hidden", "0");
        set_default("model.head_hidden", "0");
        set_default("model.abs_cosine", "1");
        set_default("model.detach_targets", "1");
        set_default("model.weight_task", "1");
        set_default("model.weight_dec", "1");
        set_default("model.weight_rec", "1");
        set_default("model.use_hed", "1");
        set_default("model.use_mlcr", "1");
        set_default("model.recon_level1", "1");
        set_default("model.recon_level2", "1");
        set_default("model.recon_level3", "1");
        set_default("model.use_mrf", "1");

        set_default("train.lr", "1e-3");
        set_default("train.batch_size", "32");
        set_default("train.epochs", "30");
        set_default("train.augment_fraction", "0.5");
        set_default("train.selection_rate", "0.5");
        set_default("train.weight_decay", "0.01");

        set_default("sweep.num_seeds", "10");
        set_default("sweep.k_shared_fixed", "3");
        set_default("sweep.k_private_fixed", "1");
    }

    void load_file(const std::string& path) {
        std::ifstream f(path);
        if (!f) throw std::runtime_error("cannot open config file: " + path);
        std::string line;
        while (std::getline(f, line)) {
            auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            auto strip = [](std::string s) {
                s.erase(0, s.find_first_not_of(" \t\r"));
                auto e = s.find_last_not_of(" \t\r");
                s.erase(e == std::string::npos ? 0 : e + 1);
                return s;
            };
            line = strip(line);
            if (line.empty()) continue;
            auto pos = line.find_first_of("=:");
            if (pos == std::string::npos)
                throw std::runtime_error("malformed config line: '" + line + "'");
            set(strip(line.substr(0, pos)), strip(line.substr(pos + 1)));
        }
    }

    void set(const std::string& key, const std::string& value) {
        if (!values_.count(key)) throw std::runtime_error("unknown config key '" + key + "'");
        values_[key] = value;
    }

    const std::string& get(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end()) throw std::runtime_error("unknown config key '" + key + "'");
        return it->second;
    }
    long geti(const std::string& key) const { return std::stol(get(key)); }
    double getd(const std::string& key) const { return std::stod(get(key)); }
    bool getb(const std::string& key) const { return geti(key) != 0; }

    // Snapshot with sorted keys for reproducible reruns.
    void write_resolved(const std::string& path) const {
        std::ofstream f(path);
        for (const auto& [k, v] : values_) f << k << " = " << v << "\n";
    }

private:
    void set_default(const std::string& key, const std::string& value) { values_[key] = value; }
    std::map<std::string, std::string> values_;
};

ModelConfig model_config_from(const RunConfig& cfg) {
    ModelConfig m;
    m.dim = cfg.geti("model.dim");
    m.bottleneck = cfg.geti("model.bottleneck");
    m.unified_depth = static_cast<int>(cfg.geti("model.unified_depth"));
    m.fusion_depth = static_cast<int>(cfg.geti("model.fusion_depth"));
    m.heads = static_cast<int>(cfg.geti("model.heads"));
    m.k_private = cfg.geti("model.k_private");
    m.k_shared = cfg.geti("model.k_shared");
    m.expert_hidden = cfg.geti("model.expert_hidden");
    m.recon_hidden = cfg.geti("model.recon_hidden");
    m.head_hidden = cfg.geti("model.head_hidden");
    m.abs_cosine = cfg.getb("model.abs_cosine");
    m.detach_targets = cfg.getb("model.detach_targets");
    m.weight_task = cfg.getd("model.weight_task");
    m.weight_dec = cfg.getd("model.weight_dec");
    m.weight_rec = cfg.getd("model.weight_rec");
    m.use_hed = cfg.getb("model.use_hed");
    m.use_mlcr = cfg.getb("model.use_mlcr");
    m.recon_level1 = cfg.getb("model.recon_level1");
    m.recon_level2 = cfg.getb("model.recon_level2");
    m.recon_level3 = cfg.getb("model.recon_level3");
    m.use_mrf = cfg.getb("model.use_mrf");
    return m;
}

TrainConfig train_config_from(const RunConfig& cfg, uint64_t seed) {
    TrainConfig t;
    t.lr = cfg.getd("train.lr");
    t.batch_size = cfg.geti("train.batch_size");
    t.epochs = cfg.geti("train.epochs");
    t.augment_fraction = cfg.getd("train.augment_fraction");
    t.selection_rate = cfg.getd("train.selection_rate");
    t.weight_decay = cfg.getd("train.weight_decay");
    t.seed = seed;
    return t;
}

void adapt_to_dataset(ModelConfig& m, const Dataset& ds) {
    m.input_dims = ds.dims;
    m.max_lengths = ds.lengths;
}

int worker_count() {
    if (const char* env = std::getenv("DERL_WORKERS")) {
        int n = std::atoi(env);
        if (n > 0) return n;
    }
    return 1;
}

void emit_intra_plots(const EvalReport& report, const fs::path& out) {
    const auto& grid = intra_rate_grid();
    SvgSeries mae{"MAE", {}, {}}, corr{"Corr", {}, {}}, acc7{"Acc-7", {}, {}};
    for (size_t i = 0; i < grid.size(); ++i) {
        const auto& m = report.rows[i].metrics;
        mae.x.push_back(grid[i]);
        mae.y.push_back(m.mae);
        corr.x.push_back(grid[i]);
        corr.y.push_back(m.corr);
        acc7.x.push_back(grid[i]);
        acc7.y.push_back(m.acc7);
    }
    write_line_chart({mae, corr, acc7}, "Metrics vs missing rate", "missing rate r", "metric",
                     (out / "intra_metrics.svg").string());
    for (double r : {0.1, 0.5, 0.9}) {
        size_t idx = static_cast<size_t>(std::lround(r * 10));
        char name[64];
        std::snprintf(name, sizeof name, "confusion_r%.1f.svg", r);
        char title[64];
        std::snprintf(title, sizeof title, "7-class confusion, r=%.1f", r);
        write_heatmap(report.rows[idx].metrics.confusion, title, (out / name).string());
    }
}

int cmd_gen_data(const RunConfig& cfg, const std::string& out_dir, uint64_t seed) {
    Dataset ds = generate_synthetic(
        cfg.geti("data.n"),
        {cfg.geti("data.len_t"), cfg.geti("data.len_v"), cfg.geti("data.len_a")},
        {cfg.geti("data.dim_t"), cfg.geti("data.dim_v"), cfg.geti("data.dim_a")},
        cfg.getd("data.redundancy"), cfg.getd("data.noise_sigma"), seed);
    save_dataset(ds, out_dir);
    cfg.write_resolved((fs::path(out_dir) / "config.resolved").string());
    std::ifstream mf(fs::path(out_dir) / "manifest.txt");
    std::cout << mf.rdbuf();
    return 0;
}

int cmd_train(const RunConfig& cfg, const std::string& data_dir, const std::string& out_dir,
              uint64_t seed) {
    fs::create_directories(out_dir);
    Dataset ds = load_dataset(data_dir);
    ModelConfig mcfg = model_config_from(cfg);
    adapt_to_dataset(mcfg, ds);
    TrainResult res = train_model(ds, mcfg, train_config_from(cfg, seed));
    save_model(*res.model, (fs::path(out_dir) / "model.bin").string());
    write_history_csv(res.history, (fs::path(out_dir) / "history.csv").string());
    cfg.write_resolved((fs::path(out_dir) / "config.resolved").string());
    std::cout << "best epoch " << res.best_epoch << ", valid MAE " << res.best_valid_mae << "\n";
    return 0;
}

int cmd_eval(const RunConfig& cfg, const std::string& model_path, const std::string& data_dir,
             const std::string& protocol, const std::string& out_dir, uint64_t seed) {
    fs::create_directories(out_dir);
    fs::path out(out_dir);
    Dataset ds = load_dataset(data_dir);
    cfg.write_resolved((out / "config.resolved").string());

    if (protocol == "intra" || protocol == "inter") {
        auto model = load_model(model_path);
        EvalReport report = protocol == "intra" ? eval_intra(*model, ds.test, seed)
                                                : eval_inter(*model, ds.test);
        write_report_csv(report, (out / ("report_" + protocol + ".csv")).string());
        for (const auto& row : report.rows) {
            std::string cond = row.condition;
            for (auto& c : cond)
                if (c == '{' || c == '}' || c == ',' || c == '=') c = '_';
            write_confusion_csv(row.metrics, (out / ("confusion_" + cond + ".csv")).string());
        }
        if (protocol == "intra") emit_intra_plots(report, out);
        std::cout << "wrote " << (out / ("report_" + protocol + ".csv")).string() << "\n";
        return 0;
    }
    if (protocol != "ablation")
        throw std::runtime_error("unknown protocol '" + protocol + "'");

    // Ablation retrains with module switches and reports each variant.
    struct Variant {
        std::string name;
        void (*apply)(ModelConfig&);
    };
    const std::vector<Variant> variants{
        {"full", [](ModelConfig&) {}},
        {"wo_hed", [](ModelConfig& m) { m.use_hed = false; }},
        {"wo_mlcr", [](ModelConfig& m) { m.use_mlcr = false; }},
        {"l1_only",
         [](ModelConfig& m) { m.recon_level2 = m.recon_level3 = false; }},
        {"l2_only",
         [](ModelConfig& m) { m.recon_level1 = m.recon_level3 = false; }},
        {"l3_only",
         [](ModelConfig& m) { m.recon_level1 = m.recon_level2 = false; }},
        {"wo_mrf", [](ModelConfig& m) { m.use_mrf = false; }},
    };
    for (const auto& v : variants) {
        ModelConfig mcfg = model_config_from(cfg);
        adapt_to_dataset(mcfg, ds);
        v.apply(mcfg);
        TrainResult res = train_model(ds, mcfg, train_config_from(cfg, seed));
        EvalReport intra = eval_intra(*res.model, ds.test, seed);
        EvalReport inter = eval_inter(*res.model, ds.test);
        write_report_csv(intra, (out / ("report_ablation_" + v.name + "_intra.csv")).string());
        write_report_csv(inter, (out / ("report_ablation_" + v.name + "_inter.csv")).string());
        std::cout << "ablation " << v.name << ": avg MAE "
                  << intra.rows.back().metrics.mae << "\n";
    }
    return 0;
}

struct SweepCell {
    std::string axis_value;
    RunConfig cfg;
    uint64_t seed;
};

int cmd_sweep(const RunConfig& base, const std::string& data_dir, const std::string& axis,
              const std::string& out_dir, uint64_t seed) {
    fs::create_directories(out_dir);
    Dataset ds = load_dataset(data_dir);
    base.write_resolved((fs::path(out_dir) / "config.resolved").string());

    std::vector<SweepCell> cells;
    if (axis == "experts") {
        for (long k = 1; k <= 5; ++k) {
            RunConfig c = base;
            c.set("model.k_private", std::to_string(k));
            c.set("model.k_shared", base.get("sweep.k_shared_fixed"));
            cells.push_back({"k_private=" + std::to_string(k), c, seed});
        }
        for (long k = 1; k <= 5; ++k) {
            RunConfig c = base;
            c.set("model.k_private", base.get("sweep.k_private_fixed"));
            c.set("model.k_shared", std::to_string(k));
            cells.push_back({"k_shared=" + std::to_string(k), c, seed});
        }
    } else if (axis == "rate") {
        for (double r : {0.1, 0.3, 0.5, 0.7, 0.9}) {
            RunConfig c = base;
            char buf[16];
            std::snprintf(buf, sizeof buf, "%.1f", r);
            c.set("train.selection_rate", buf);
            cells.push_back({std::string("selection_rate=") + buf, c, seed});
        }
    } else if (axis == "seeds") {
        long n = base.geti("sweep.num_seeds");
        for (long i = 0; i < n; ++i)
            cells.push_back({"seed=" + std::to_string(seed + i), base, seed + i});
    } else {
        throw std::runtime_error("unknown sweep axis '" + axis + "'");
    }

    struct CellResult {
        bool ok = false;
        std::string error;
        MetricRecord avg;
    };
    std::vector<CellResult> results(cells.size());
    std::atomic<size_t> next{0};
    auto run_cells = [&]() {
        for (size_t i = next.fetch_add(1); i < cells.size(); i = next.fetch_add(1)) {
            try {
                ModelConfig mcfg = model_config_from(cells[i].cfg);
                adapt_to_dataset(mcfg, ds);
                TrainResult res =
                    train_model(ds, mcfg, train_config_from(cells[i].cfg, cells[i].seed));
                EvalReport rep = eval_intra(*res.model, ds.test, cells[i].seed);
                results[i].avg = rep.rows.back().metrics;
                results[i].ok = true;
            } catch (const std::exception& e) {
                results[i].error = e.what();
            }
        }
    };
    int workers = std::min<int>(worker_count(), static_cast<int>(cells.size()));
    std::vector<std::thread> pool;
    for (int w = 1; w < workers; ++w) pool.emplace_back(run_cells);
    run_cells();
    for (auto& t : pool) t.join();

    std::ofstream f(fs::path(out_dir) / ("sweep_" + axis + ".csv"));
    f << "cell,status," << report_csv_header().substr(10) << "\n";
    char buf[320];
    for (size_t i = 0; i < cells.size(); ++i) {
        const auto& r = results[i];
        if (!r.ok) {
            f << cells[i].axis_value << ",error: " << r.error << ",,,,,,,,\n";
            continue;
        }
        std::snprintf(buf, sizeof buf, "%s,ok,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g\n",
                      cells[i].axis_value.c_str(), r.avg.mae, r.avg.corr, r.avg.acc2_neg_nonneg,
                      r.avg.acc2_neg_pos, r.avg.f1_neg_nonneg, r.avg.f1_neg_pos, r.avg.acc5,
                      r.avg.acc7);
        f << buf;
    }
    if (axis == "seeds") {
        auto stat = [&](auto get) {
            double mean = 0, var = 0;
            long n = 0;
            for (const auto& r : results)
                if (r.ok) {
                    mean += get(r.avg);
                    ++n;
                }
            if (n) mean /= n;
            for (const auto& r : results)
                if (r.ok) var += (get(r.avg) - mean) * (get(r.avg) - mean);
            return std::pair{mean, n > 1 ? std::sqrt(var / (n - 1)) : 0.0};
        };
        auto [mmae, smae] = stat([](const MetricRecord& m) { return m.mae; });
        auto [mcorr, scorr] = stat([](const MetricRecord& m) { return m.corr; });
        auto [macc7, sacc7] = stat([](const MetricRecord& m) { return m.acc7; });
        std::snprintf(buf, sizeof buf,
                      "mean,ok,%.10g,%.10g,,,,,,%.10g\nstd,ok,%.10g,%.10g,,,,,,%.10g\n", mmae,
                      mcorr, macc7, smae, scorr, sacc7);
        f << buf;
    }
    std::cout << "wrote sweep_" << axis << ".csv (" << cells.size() << " cells)\n";
    return 0;
}

int cmd_plot(const std::string& report_path, const std::string& out_dir) {
    fs::create_directories(out_dir);
    std::ifstream f(report_path);
    if (!f) throw std::runtime_error("cannot open report: " + report_path);
    std::string line;
    std::getline(f, line);
    if (line != report_csv_header())
        throw std::runtime_error("unexpected report header in " + report_path);
    SvgSeries mae{"MAE", {}, {}}, corr{"Corr", {}, {}}, acc7{"Acc-7", {}, {}};
    while (std::getline(f, line)) {
        std::istringstream is(line);
        std::string cond, field;
        std::getline(is, cond, ',');
        if (cond.rfind("r=", 0) != 0) continue;
        double r = std::stod(cond.substr(2));
        std::vector<double> vals;
        while (std::getline(is, field, ',')) vals.push_back(std::stod(field));
        mae.x.push_back(r);
        mae.y.push_back(vals[0]);
        corr.x.push_back(r);
        corr.y.push_back(vals[1]);
        acc7.x.push_back(r);
        acc7.y.push_back(vals[7]);
    }
    write_line_chart({mae, corr, acc7}, "Metrics vs missing rate", "missing rate r", "metric",
                     (fs::path(out_dir) / "metrics.svg").string());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"DERL multimodal sentiment engine"};
    app.require_subcommand(1);

    std::string config_path, out_dir = "out", data_dir, model_path, protocol = "intra",
                axis = "experts", report_path;
    std::vector<std::string> overrides;
    long seed_flag = -1;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "config file (key = value lines)");
        sub->add_option("--set", overrides, "override config key, e.g. --set train.epochs=5")
            ->take_all();
        sub->add_option("--out", out_dir, "output directory");
        sub->add_option("--seed", seed_flag, "random seed (overrides config)");
    };

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
    add_common(gen);
    auto* train = app.add_subcommand("train", "train a model");
    add_common(train);
    train->add_option("--data", data_dir, "dataset directory")->required();
    auto* eval = app.add_subcommand("eval", "evaluate a model under a missing protocol");
    add_common(eval);
    eval->add_option("--data", data_dir, "dataset directory")->required();
    eval->add_option("--model", model_path, "trained model file");
    eval->add_option("--protocol", protocol, "intra | inter | ablation")
        ->check(CLI::IsMember({"intra", "inter", "ablation"}));
    auto* sweep = app.add_subcommand("sweep", "train/evaluate along an axis");
    add_common(sweep);
    sweep->add_option("--data", data_dir, "dataset directory")->required();
    sweep->add_option("--axis", axis, "experts | rate | seeds")
        ->check(CLI::IsMember({"experts", "rate", "seeds"}));
    auto* plot = app.add_subcommand("plot", "re-emit SVG charts from a report CSV");
    plot->add_option("--report", report_path, "report CSV")->required();
    plot->add_option("--out", out_dir, "output directory");

    CLI11_PARSE(app, argc, argv);

    try {
        RunConfig cfg;
        if (!config_path.empty()) cfg.load_file(config_path);
        for (const auto& ov : overrides) {
            auto pos = ov.find('=');
            if (pos == std::string::npos)
                throw std::runtime_error("--set expects key=value, got '" + ov + "'");
            cfg.set(ov.substr(0, pos), ov.substr(pos + 1));
        }
        if (seed_flag >= 0) cfg.set("seed", std::to_string(seed_flag));
        uint64_t seed = static_cast<uint64_t>(cfg.geti("seed"));

        if (gen->parsed()) return cmd_gen_data(cfg, out_dir, seed);
        if (train->parsed()) return cmd_train(cfg, data_dir, out_dir, seed);
        if (eval->parsed())
            return cmd_eval(cfg, model_path, data_dir, protocol, out_dir, seed);
        if (sweep->parsed()) return cmd_sweep(cfg, data_dir, axis, out_dir, seed);
        if (plot->parsed()) return cmd_plot(report_path, out_dir);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
