#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "prgen/checkpoint.hpp"
#include "prgen/config.hpp"
#include "prgen/csv.hpp"

using namespace prgen;
namespace fs = std::filesystem;

#ifndef PRGEN_CLI_PATH
#define PRGEN_CLI_PATH "prgen"
#endif

namespace {

int run_cli(const std::string& args) {
    const std::string cmd = std::string(PRGEN_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

fs::path temp_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string read_file(const fs::path& p) {
    std::ifstream is(p);
    return std::string(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("csv rows round-trip with zero loss") {
    std::vector<csv::CsvRow> rows;
    csv::CsvRow a;
    a.run_id = "r1";
    a.method = "cdiv";
    a.method_params = "alpha=1.4";
    a.temperature = 0.123456789;
    a.precision = 0.999999;
    a.recall = 1.0 / 9801.0;
    a.n_samples = 20000;
    a.seed = 42;
    rows.push_back(a);
    csv::CsvRow b;
    b.run_id = "r2";
    b.method = "artcase";
    b.method_params = "V=100;K=20";
    b.temperature = 10.0;
    b.lambda = 0.4675;
    b.precision = 0.85;
    b.recall = 0.17;
    rows.push_back(b);

    const fs::path path = temp_dir("prgen_csv") / "t.csv";
    csv::write_rows(path.string(), rows);
    const std::string first = read_file(path);
    csv::write_rows(path.string(), csv::read_rows(path.string()));
    CHECK(read_file(path) == first);

    const auto back = csv::read_rows(path.string());
    REQUIRE(back.size() == 2);
    CHECK(back[0].method_params == "alpha=1.4");
    CHECK_FALSE(back[0].lambda.has_value());
    CHECK(back[1].lambda.has_value());

    CHECK_THROWS_AS(csv::to_line(csv::CsvRow{.run_id = "has,comma"}), csv::CsvError);
}

TEST_CASE("config parsing is strict about keys and values") {
    using config::parse_config;
    using nlohmann::json;

    const json good = json::parse(R"({
        "task": {"skew_b_level": 0.1, "dataset_size": 1000},
        "model": {"seed": 5},
        "train": {"epochs": 3, "loss": {"method": "cdiv", "alpha": 1.4}},
        "eval": {"t_grid": [1.0], "n_per_point": 100}
    })");
    const config::ExperimentConfig cfg = parse_config(good);
    CHECK(cfg.train.loss.method == losses::LossMethod::CDiv);
    CHECK(cfg.train.loss.alpha == 1.4);
    CHECK(cfg.model.vocab_size == 12);
    CHECK(cfg.train.dataset_size == 1000);
    CHECK(cfg.train.loss.seq_len == 8);

    json typo = good;
    typo["train"]["learnig_rate"] = 0.001;
    try {
        parse_config(typo);
        FAIL("expected ConfigError");
    } catch (const config::ConfigError& e) {
        CHECK(std::string(e.what()).find("learnig_rate") != std::string::npos);
    }

    json bad_method = good;
    bad_method["train"]["loss"]["method"] = "focal";
    CHECK_THROWS_AS(parse_config(bad_method), config::ConfigError);

    json gold = good;
    gold["train"]["loss"] = {{"method", "gold"}};
    const config::ExperimentConfig g = parse_config(gold);
    CHECK(g.train.loss.method == losses::LossMethod::CDiv);
    CHECK(g.train.loss.alpha == 0.5);

    // resolved config re-parses to the same resolution
    const config::ExperimentConfig twice = parse_config(config::resolved_json(cfg));
    CHECK(config::resolved_json(twice) == config::resolved_json(cfg));
}

TEST_CASE("cli end-to-end: train, sweep, reruns and failure codes") {
    const fs::path dir = temp_dir("prgen_cli_e2e");
    const fs::path cfg_path = dir / "cfg.json";
    {
        std::ofstream os(cfg_path);
        os << R"({
            "run_id": "e2e",
            "task": {"skew_b_level": 0.5, "dataset_size": 600},
            "model": {"n_layers": 1, "d_model": 16, "n_heads": 2, "d_ff": 32, "seed": 3},
            "train": {"epochs": 2, "batch_size": 128, "seed": 7, "loss": {"method": "trunc", "delta_frac": 0.25}},
            "eval": {"t_grid": [1.0], "n_per_point": 100},
            "output": {"dir": ")" << (dir / "run").string() << R"("}
        })";
    }
    REQUIRE(run_cli("train --config " + cfg_path.string() + " --threads 2") == 0);
    CHECK(fs::exists(dir / "run" / "model.ckpt"));
    CHECK(fs::exists(dir / "run" / "config.resolved.json"));
    CHECK(fs::exists(dir / "run" / "dataset.txt"));

    const std::string log = read_file(dir / "run" / "train_log.csv");
    CHECK(log.rfind("epoch,loss,mean_weight,kept_fraction,floor_hits\n", 0) == 0);

    const std::string sweep_args = " --t-grid 0.5,1 --n 200 --seed 5 --threads 2";
    REQUIRE(run_cli("sweep --checkpoint " + (dir / "run" / "model.ckpt").string() + " --out " +
                    (dir / "a.csv").string() + sweep_args) == 0);
    REQUIRE(run_cli("sweep --checkpoint " + (dir / "run" / "model.ckpt").string() + " --out " +
                    (dir / "b.csv").string() + sweep_args) == 0);
    CHECK(read_file(dir / "a.csv") == read_file(dir / "b.csv"));

    const auto rows = csv::read_rows((dir / "a.csv").string());
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].method == "trunc");
    CHECK(rows[0].method_params == "delta=0.25");

    // unknown config key exits 2 naming the key (message checked at the
    // library level above)
    {
        std::ofstream os(dir / "bad.json");
        os << R"({"train": {"learnig_rate": 0.001}})";
    }
    CHECK(run_cli("train --config " + (dir / "bad.json").string()) == 2);
    CHECK(run_cli("train --config " + (dir / "missing.json").string()) == 2);

    // corrupt checkpoint exits 4
    {
        std::ofstream os(dir / "corrupt.ckpt", std::ios::binary);
        os << "not a checkpoint";
    }
    CHECK(run_cli("sweep --checkpoint " + (dir / "corrupt.ckpt").string() + " --out " +
                  (dir / "c.csv").string()) == 4);

    // zero-epoch run: checkpoint equals initialization, log has header only
    {
        std::ofstream os(dir / "zero.json");
        os << R"({
            "task": {"skew_b_level": 0.5, "dataset_size": 600},
            "model": {"n_layers": 1, "d_model": 16, "n_heads": 2, "d_ff": 32, "seed": 3},
            "train": {"epochs": 0, "batch_size": 128, "seed": 7},
            "eval": {"t_grid": [1.0], "n_per_point": 100},
            "output": {"dir": ")" << (dir / "zero").string() << R"("}
        })";
    }
    REQUIRE(run_cli("train --config " + (dir / "zero.json").string()) == 0);
    CHECK(read_file(dir / "zero" / "train_log.csv") ==
          "epoch,loss,mean_weight,kept_fraction,floor_hits\n");
    {
        const auto ck = nn::load_checkpoint<float>((dir / "zero" / "model.ckpt").string());
        const auto fresh = nn::Model<float>::init(ck.model.cfg);
        CHECK(ck.model.params == fresh.params);
        CHECK(ck.opt.step == 0);
    }

    fs::remove_all(dir);
}

TEST_CASE("cli artcase and sparsity subcommands") {
    const fs::path dir = temp_dir("prgen_cli_art");
    REQUIRE(run_cli("artcase --out " + (dir / "art.csv").string() +
                    " --t-grid 0.5,1 --lambda-grid 0.5,2") == 0);
    const auto rows = csv::read_rows((dir / "art.csv").string());
    REQUIRE(rows.size() == 4);
    CHECK(rows[0].lambda.has_value());
    CHECK(fs::exists(dir / "art.csv.check.csv"));

    CHECK(run_cli("artcase --K 20 --rho 0.43 --out " + (dir / "x.csv").string()) == 2);

    REQUIRE(run_cli("sparsity --reference uniform --n 50 --p 0.9 --out " +
                    (dir / "hist.csv").string()) == 0);
    CHECK(read_file(dir / "hist.csv").rfind("position,support_k,count\n", 0) == 0);
    fs::remove_all(dir);
}
