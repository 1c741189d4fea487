#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

const char* cli_path() { return DERL_CLI_PATH; }

int run(const std::string& args) {
    std::string cmd = std::string(cli_path()) + " " + args + " >/dev/null 2>&1";
    return std::system(cmd.c_str());
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    REQUIRE(f.good());
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("derl_cli_" + std::to_string(std::rand()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string sub(const std::string& name) const { return (path / name).string(); }
};

// Small-everything overrides so the end-to-end runs stay fast.
const std::string kTinyData =
    " --set data.n=48 data.len_t=4 data.len_v=4 data.len_a=4"
    " data.dim_t=5 data.dim_v=4 data.dim_a=3";
const std::string kTinyTrain =
    " --set model.dim=8 model.bottleneck=2 train.epochs=2 train.batch_size=8 train.lr=1e-3";

}  // namespace

TEST_CASE("cli: bad invocations fail loudly") {
    CHECK(run("") != 0);                        // subcommand required
    CHECK(run("train") != 0);                   // --data required
    CHECK(run("frobnicate") != 0);              // unknown subcommand
    TempDir tmp;
    CHECK(run("gen-data --out " + tmp.sub("d") + " --set data.unknown_key=1") != 0);
    CHECK(run("eval --data /nonexistent --protocol intra --model none") != 0);
}

TEST_CASE("cli: gen-data is deterministic and loadable") {
    TempDir tmp;
    REQUIRE(run("gen-data --seed 11 --out " + tmp.sub("a") + kTinyData) == 0);
    REQUIRE(run("gen-data --seed 11 --out " + tmp.sub("b") + kTinyData) == 0);
    REQUIRE(run("gen-data --seed 12 --out " + tmp.sub("c") + kTinyData) == 0);
    for (const char* f : {"manifest.txt", "train_t.f64", "valid_v.f64", "test_a.f64",
                          "train_labels.f64"}) {
        CAPTURE(f);
        CHECK(slurp(tmp.path / "a" / f) == slurp(tmp.path / "b" / f));
    }
    CHECK(slurp(tmp.path / "a" / "train_t.f64") != slurp(tmp.path / "c" / "train_t.f64"));
    // The resolved config snapshot records every effective setting.
    std::string resolved = slurp(tmp.path / "a" / "config.resolved");
    CHECK(resolved.find("data.n = 48") != std::string::npos);
    CHECK(resolved.find("seed = 11") != std::string::npos);
}

TEST_CASE("cli: train, eval and plot round trip reproducibly") {
    TempDir tmp;
    REQUIRE(run("gen-data --seed 3 --out " + tmp.sub("data") + kTinyData) == 0);

    std::string train_args = " --data " + tmp.sub("data") + " --seed 5" + kTinyTrain;
    REQUIRE(run("train --out " + tmp.sub("run1") + train_args) == 0);
    REQUIRE(run("train --out " + tmp.sub("run2") + train_args) == 0);
    CHECK(slurp(tmp.path / "run1" / "model.bin") == slurp(tmp.path / "run2" / "model.bin"));
    CHECK(slurp(tmp.path / "run1" / "history.csv") == slurp(tmp.path / "run2" / "history.csv"));

    std::string hist = slurp(tmp.path / "run1" / "history.csv");
    CHECK(hist.rfind("epoch,lr,loss_task,loss_dec,loss_rec,loss_total,valid_mae", 0) == 0);

    std::string eval_args = " --data " + tmp.sub("data") + " --model " +
                            tmp.sub("run1") + "/model.bin --seed 9" + kTinyTrain;
    REQUIRE(run("eval --protocol intra --out " + tmp.sub("ev1") + eval_args) == 0);
    REQUIRE(run("eval --protocol intra --out " + tmp.sub("ev2") + eval_args) == 0);
    CHECK(slurp(tmp.path / "ev1" / "report_intra.csv") ==
          slurp(tmp.path / "ev2" / "report_intra.csv"));

    std::string report = slurp(tmp.path / "ev1" / "report_intra.csv");
    CHECK(report.rfind("condition,MAE,Corr,Acc2_neg_nonneg,Acc2_neg_pos,"
                       "F1_neg_nonneg,F1_neg_pos,Acc5,Acc7", 0) == 0);
    CHECK(report.find("r=0.0,") != std::string::npos);
    CHECK(report.find("r=0.9,") != std::string::npos);
    CHECK(report.find("average,") != std::string::npos);
    CHECK(fs::exists(tmp.path / "ev1" / "confusion_r_0.5.csv"));
    CHECK(fs::exists(tmp.path / "ev1" / "intra_metrics.svg"));
    // SVG emission is deterministic too.
    CHECK(slurp(tmp.path / "ev1" / "intra_metrics.svg") ==
          slurp(tmp.path / "ev2" / "intra_metrics.svg"));

    REQUIRE(run("eval --protocol inter --out " + tmp.sub("ei") + eval_args) == 0);
    std::string inter = slurp(tmp.path / "ei" / "report_inter.csv");
    CHECK(inter.find("{t}") != std::string::npos);
    CHECK(inter.find("{t,v,a}") != std::string::npos);
    CHECK(inter.find("average,") != std::string::npos);

    REQUIRE(run("plot --report " + tmp.sub("ev1") + "/report_intra.csv --out " +
                tmp.sub("plots")) == 0);
    CHECK(fs::exists(tmp.path / "plots" / "metrics.svg"));
}

TEST_CASE("cli: config file plus --set override precedence") {
    TempDir tmp;
    std::ofstream cfg(tmp.path / "run.cfg");
    cfg << "# comment line\n"
        << "data.n: 48\n"
        << "data.len_t = 4\ndata.len_v = 4\ndata.len_a = 4\n"
        << "data.dim_t = 5\ndata.dim_v = 4\ndata.dim_a = 3\n"
        << "seed = 21\n";
    cfg.close();
    REQUIRE(run("gen-data --config " + tmp.sub("run.cfg") + " --out " + tmp.sub("a")) == 0);
    // The flag wins over the file.
    REQUIRE(run("gen-data --config " + tmp.sub("run.cfg") + " --seed 22 --out " +
                tmp.sub("b")) == 0);
    CHECK(slurp(tmp.path / "a" / "train_t.f64") != slurp(tmp.path / "b" / "train_t.f64"));
    std::string resolved = slurp(tmp.path / "b" / "config.resolved");
    CHECK(resolved.find("seed = 22") != std::string::npos);
}
