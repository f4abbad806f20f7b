// Command-line front end: train models on the mod-97 task, sweep
// temperatures, emit analytic artificial-case curves, probe conditional
// sparsity and run the verification suite.
//
// Exit codes: 0 ok, 1 verify failure, 2 config/parameter error,
// 3 training divergence, 4 I/O or corruption.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "prgen/artificial_case.hpp"
#include "prgen/checkpoint.hpp"
#include "prgen/config.hpp"
#include "prgen/csv.hpp"
#include "prgen/modmul.hpp"
#include "prgen/train.hpp"
#include "prgen/verify.hpp"

namespace fs = std::filesystem;
using namespace prgen;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitVerify = 1;
constexpr int kExitConfig = 2;
constexpr int kExitDivergence = 3;
constexpr int kExitIo = 4;

std::vector<double> parse_grid(const std::string& text) {
    std::vector<double> out;
    std::string cur;
    for (char ch : text + ",") {
        if (ch == ',') {
            if (!cur.empty()) {
                out.push_back(std::stod(cur));
                cur.clear();
            }
        } else {
            cur.push_back(ch);
        }
    }
    if (out.empty()) {
        throw config::ConfigError("empty grid: " + text);
    }
    return out;
}

nn::Decoding parse_decoding(const std::string& text) {
    nn::Decoding d;
    if (text == "plain") {
        return d;
    }
    if (text.rfind("top_p:", 0) == 0) {
        d.kind = nn::Decoding::Kind::TopP;
        d.p = std::stod(text.substr(6));
        if (!(d.p > 0.0) || d.p > 1.0) {
            throw config::ConfigError("top_p parameter must lie in (0, 1]");
        }
        return d;
    }
    throw config::ConfigError("unknown decoding '" + text + "', expected plain or top_p:<p>");
}

std::string resolve_out_dir(const std::string& flag_dir, const std::string& cfg_dir) {
    if (!flag_dir.empty()) return flag_dir;
    if (!cfg_dir.empty()) return cfg_dir;
    if (const char* env = std::getenv("PRGEN_OUT_DIR"); env != nullptr && *env != '\0') {
        return env;
    }
    return ".";
}

void write_train_log(const std::string& path, const std::vector<nn::EpochLog>& log) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) {
        throw csv::CsvError("cannot open " + path + " for writing");
    }
    os << "epoch,loss,mean_weight,kept_fraction,floor_hits\n";
    for (const nn::EpochLog& row : log) {
        os << row.epoch << ',' << csv::format_number(row.loss) << ','
           << csv::format_number(row.mean_weight) << ',' << csv::format_number(row.kept_fraction)
           << ',' << row.floor_hits << '\n';
    }
}

int cmd_train(const std::string& config_path, const std::string& out_flag, std::size_t threads,
              std::int64_t seed_override) {
    config::ExperimentConfig cfg = config::load_config(config_path);
    if (seed_override >= 0) {
        cfg.train.seed = static_cast<std::uint64_t>(seed_override);
    }
    cfg.train.n_threads = threads;
    const fs::path dir = resolve_out_dir(out_flag, cfg.output.dir);
    fs::create_directories(dir);

    Rng data_rng(derive_seed(cfg.train.seed, 1));
    modmul::SkewSpec skew{cfg.task.skew_b_level};
    const std::vector<modmul::MulSample> samples =
        modmul::gen_dataset(cfg.task.dataset_size, skew, data_rng);
    std::vector<TokenSeq> dataset;
    dataset.reserve(samples.size());
    {
        std::ofstream ds(dir / "dataset.txt", std::ios::trunc);
        for (const modmul::MulSample& s : samples) {
            dataset.push_back(s.tokens);
            ds << modmul::render_text(s.tokens) << '\n';
        }
    }

    nn::Model<float> model = nn::Model<float>::init(cfg.model);
    nn::AdamState<float> opt = nn::AdamState<float>::zeros_like(model);
    const nn::TrainResult result = nn::train(model, opt, dataset, cfg.train);

    const std::string method = losses::method_name(cfg.train.loss.method);
    const std::string tag = method + "|" + config::method_params_label(cfg.train.loss);
    nn::save_checkpoint((dir / cfg.output.checkpoint).string(), model, opt, tag);
    write_train_log((dir / cfg.output.train_log_csv).string(), result.log);
    {
        std::ofstream rc(dir / "config.resolved.json", std::ios::trunc);
        rc << config::resolved_json(cfg).dump(2) << '\n';
    }
    std::printf("trained %s (%zu epochs) -> %s\n", method.c_str(), cfg.train.epochs,
                (dir / cfg.output.checkpoint).c_str());
    if (!result.log.empty()) {
        std::printf("final loss %.6g, mean weight %.6g, kept fraction %.6g\n",
                    result.log.back().loss, result.log.back().mean_weight,
                    result.log.back().kept_fraction);
    }
    return kExitOk;
}

int cmd_sweep(const std::string& ckpt_path, const std::string& out_csv, const std::string& grid,
              std::size_t n, std::uint64_t seed, const std::string& decoding_text,
              std::size_t threads, const std::string& run_id, std::size_t denominator) {
    const nn::Checkpoint<float> ckpt = nn::load_checkpoint<float>(ckpt_path);
    const std::vector<double> t_grid = parse_grid(grid);
    const nn::Decoding decoding = parse_decoding(decoding_text);

    std::string method = ckpt.tag, params;
    if (const std::size_t bar = ckpt.tag.find('|'); bar != std::string::npos) {
        method = ckpt.tag.substr(0, bar);
        params = ckpt.tag.substr(bar + 1);
    }
    if (method.empty()) {
        method = "model";
    }

    const std::vector<modmul::EvalReport> reports =
        modmul::temperature_sweep(ckpt.model, t_grid, n, decoding, seed, threads, denominator);
    std::vector<csv::CsvRow> rows;
    for (const modmul::EvalReport& rep : reports) {
        csv::CsvRow row;
        row.run_id = run_id;
        row.method = method;
        row.method_params = params;
        row.temperature = rep.temperature;
        row.precision = rep.precision;
        row.recall = rep.recall;
        row.n_samples = rep.n_samples;
        row.seed = rep.seed;
        rows.push_back(row);
        std::printf("t=%-6g precision=%.4f recall=%.4f (wellformed %zu, correct %zu, unique %zu)\n",
                    rep.temperature, rep.precision, rep.recall, rep.n_wellformed, rep.n_correct,
                    rep.n_unique);
    }
    csv::write_rows(out_csv, rows);
    std::printf("wrote %s\n", out_csv.c_str());
    return kExitOk;
}

int cmd_artcase(const artcase::ArtCaseParams& params, const std::string& t_grid_text,
                const std::string& lambda_grid_text, const std::string& out_csv, double budget) {
    params.validate();
    const std::vector<double> t_grid = parse_grid(t_grid_text);
    const std::vector<double> lambda_grid = parse_grid(lambda_grid_text);

    char label[128];
    std::snprintf(label, sizeof(label), "V=%zu;K=%zu;L=%zu;l1=%zu;l2=%zu;rho=%g;a=%g;eps=%g",
                  params.vocab_size, params.supp_size, params.length, params.l1, params.l2,
                  params.rho, params.a, params.epsilon);

    const bool enumerable = pow_size(params.vocab_size, params.length) <= budget;
    std::vector<csv::CsvRow> rows;
    double max_dev = 0.0;
    std::ofstream check;
    if (enumerable) {
        check.open(out_csv + ".check.csv", std::ios::trunc);
        check << "temperature,lambda,alpha_closed,beta_closed,alpha_enum,beta_enum,abs_dev\n";
    }
    const FactorizedSeqDist target = artcase::build_p(params);
    const FactorizedSeqDist model = artcase::build_q(params);
    for (double t : t_grid) {
        const FactorizedSeqDist tempered =
            enumerable ? artcase::temper_each(model, t) : FactorizedSeqDist{};
        for (double lam : lambda_grid) {
            const PRPoint pt = artcase::pr_closed_form(params, t, lam);
            csv::CsvRow row;
            row.run_id = "artcase";
            row.method = "artcase";
            row.method_params = label;
            row.temperature = t;
            row.lambda = lam;
            row.precision = pt.alpha;
            row.recall = pt.beta;
            rows.push_back(row);
            if (enumerable) {
                const PRPoint ex = pr_point_exact(target, tempered, lam, budget);
                const double dev =
                    std::max(std::abs(ex.alpha - pt.alpha), std::abs(ex.beta - pt.beta));
                max_dev = std::max(max_dev, dev);
                check << csv::format_number(t) << ',' << csv::format_number(lam) << ','
                      << csv::format_number(pt.alpha) << ',' << csv::format_number(pt.beta) << ','
                      << csv::format_number(ex.alpha) << ',' << csv::format_number(ex.beta) << ','
                      << csv::format_number(dev) << '\n';
            }
        }
    }
    csv::write_rows(out_csv, rows);
    if (enumerable) {
        std::printf("closed form vs enumeration: max abs deviation %.3e (%s)\n", max_dev,
                    max_dev <= 1e-9 ? "ok" : "EXCEEDS 1e-9");
        std::printf("wrote %s and %s.check.csv\n", out_csv.c_str(), out_csv.c_str());
    } else {
        std::printf("V^L exceeds the enumeration budget; closed form only\n");
        std::printf("wrote %s\n", out_csv.c_str());
    }
    return kExitOk;
}

int cmd_verify(std::size_t threads) {
    const std::vector<verify::CheckResult> results = verify::run_all(threads);
    bool all = true;
    for (const verify::CheckResult& r : results) {
        std::printf("[%s] %-34s %7.2fs  %s\n", r.passed ? "PASS" : "FAIL", r.name.c_str(),
                    r.seconds, r.detail.c_str());
        all = all && r.passed;
    }
    std::printf(all ? "verify: all %zu properties hold\n" : "verify: FAILURES detected\n",
                results.size());
    return all ? kExitOk : kExitVerify;
}

int cmd_sparsity(const std::string& ckpt_path, const std::string& reference, double p,
                 std::size_t n, std::uint64_t seed, double skew_b, const std::string& out_csv) {
    Rng rng(derive_seed(seed, 2));
    modmul::SkewSpec skew{skew_b};
    std::vector<TokenSeq> samples;
    for (const modmul::MulSample& s : modmul::gen_dataset(n, skew, rng)) {
        samples.push_back(s.tokens);
    }

    modmul::SparsityProbe probe;
    if (!ckpt_path.empty()) {
        const nn::Checkpoint<float> ckpt = nn::load_checkpoint<float>(ckpt_path);
        probe = modmul::sparsity_probe(nn::as_seq_dist(ckpt.model), samples, p);
    } else if (reference == "uniform") {
        probe = modmul::sparsity_probe(modmul::reference_dist(), samples, p);
    } else if (reference.rfind("skew:", 0) == 0) {
        modmul::SkewSpec ref_skew{std::stod(reference.substr(5))};
        probe = modmul::sparsity_probe(modmul::train_dist(ref_skew), samples, p);
    } else {
        throw config::ConfigError("pass --checkpoint or --reference uniform|skew:<b>");
    }

    std::ofstream os(out_csv, std::ios::trunc);
    if (!os) {
        throw csv::CsvError("cannot open " + out_csv + " for writing");
    }
    os << "position,support_k,count\n";
    for (std::size_t l = 0; l < probe.histogram.size(); ++l) {
        for (const auto& [k, count] : probe.histogram[l]) {
            os << l << ',' << k << ',' << count << '\n';
        }
    }
    std::printf("geometric mean of per-sample max support size at p=%g: %.6g\n", p,
                probe.geometric_mean);
    std::printf("wrote %s\n", out_csv.c_str());
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Precision/Recall analytics and training for discrete sequence models"};
    app.require_subcommand(1);

    std::string config_path, out_path, ckpt_path, grid = "0.2,0.5,1,1.5,2,3,5";
    std::string lambda_grid = "0.05,0.1,0.2,0.5,1,2,5";
    std::string decoding = "plain", run_id = "run", reference;
    std::size_t threads = 0, n = 20000, denominator = modmul::kPairSpace;
    std::uint64_t seed = 1234;
    std::int64_t train_seed = -1;
    double p_mass = 0.9, skew_b = 0.5, budget = 1e7;
    artcase::ArtCaseParams ap;
    ap.vocab_size = 100;
    ap.supp_size = 20;
    ap.length = 2;
    ap.l1 = 1;
    ap.l2 = 2;
    ap.rho = 0.5;
    ap.a = 0.725;
    ap.epsilon = 0.15;

    CLI::App* train = app.add_subcommand("train", "train a model per the experiment config");
    train->add_option("--config", config_path, "experiment config (json)")->required();
    train->add_option("--out", out_path, "output directory (overrides config)");
    train->add_option("--threads", threads, "worker threads (0 = hardware)");
    train->add_option("--seed", train_seed, "override the training seed");

    CLI::App* sweep = app.add_subcommand("sweep", "temperature sweep of a trained checkpoint");
    sweep->add_option("--checkpoint", ckpt_path, "model checkpoint")->required();
    sweep->add_option("--out", out_path, "output csv path")->required();
    sweep->add_option("--t-grid", grid, "comma-separated temperatures");
    sweep->add_option("--n", n, "samples per grid point");
    sweep->add_option("--seed", seed, "evaluation seed");
    sweep->add_option("--decoding", decoding, "plain or top_p:<p>");
    sweep->add_option("--threads", threads, "worker threads (0 = hardware)");
    sweep->add_option("--run-id", run_id, "run id recorded in the csv");
    sweep->add_option("--recall-denominator", denominator, "pair-space size for recall");

    CLI::App* art = app.add_subcommand("artcase", "closed-form artificial-case PR table");
    art->add_option("--V", ap.vocab_size, "vocabulary size");
    art->add_option("--K", ap.supp_size, "acceptable ids per position");
    art->add_option("--L", ap.length, "sequence length");
    art->add_option("--l1", ap.l1, "over-representation position (1-based)");
    art->add_option("--l2", ap.l2, "noise position (1-based)");
    art->add_option("--rho", ap.rho, "proportion of over-represented ids");
    art->add_option("--a", ap.a, "mass on the over-represented ids");
    art->add_option("--epsilon", ap.epsilon, "off-support noise mass");
    art->add_option("--t-grid", grid, "comma-separated temperatures");
    art->add_option("--lambda-grid", lambda_grid, "comma-separated trade-offs");
    art->add_option("--out", out_path, "output csv path")->required();
    art->add_option("--budget", budget, "enumeration budget in outcomes");

    CLI::App* ver = app.add_subcommand("verify", "run the oracle/property suite");
    ver->add_option("--threads", threads, "worker threads (0 = hardware)");

    CLI::App* spars = app.add_subcommand("sparsity", "support-size probe of a model or reference");
    spars->add_option("--checkpoint", ckpt_path, "model checkpoint");
    spars->add_option("--reference", reference, "uniform or skew:<b> instead of a checkpoint");
    spars->add_option("--p", p_mass, "coverage mass threshold");
    spars->add_option("--n", n, "number of probe samples");
    spars->add_option("--seed", seed, "probe sampling seed");
    spars->add_option("--skew", skew_b, "skew of the probe dataset");
    spars->add_option("--out", out_path, "histogram csv path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (train->parsed()) {
            return cmd_train(config_path, out_path, threads, train_seed);
        }
        if (sweep->parsed()) {
            if (grid == "0.2,0.5,1,1.5,2,3,5" && sweep->count("--t-grid") == 0) {
                // default grid is the paper-style sweep
            }
            return cmd_sweep(ckpt_path, out_path, grid, n, seed, decoding, threads, run_id,
                             denominator);
        }
        if (art->parsed()) {
            if (art->count("--t-grid") == 0) {
                grid = "0.1,0.5,1,2,10";
            }
            return cmd_artcase(ap, grid, lambda_grid, out_path, budget);
        }
        if (ver->parsed()) {
            return cmd_verify(threads);
        }
        if (spars->parsed()) {
            return cmd_sparsity(ckpt_path, reference, p_mass, n, seed, skew_b, out_path);
        }
    } catch (const config::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitConfig;
    } catch (const nn::DivergenceError& e) {
        std::fprintf(stderr, "training diverged: %s\n", e.what());
        return kExitDivergence;
    } catch (const nn::CheckpointError& e) {
        std::fprintf(stderr, "checkpoint error: %s\n", e.what());
        return kExitIo;
    } catch (const std::domain_error& e) {
        std::fprintf(stderr, "parameter error: %s\n", e.what());
        return kExitConfig;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitIo;
    }
    return kExitOk;
}
