#pragma once

// JSON experiment configuration with strict validation: unknown keys are
// rejected with a field-level message rather than ignored, and every run
// writes its fully resolved config next to its outputs.

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "prgen/losses.hpp"
#include "prgen/modmul.hpp"
#include "prgen/train.hpp"
#include "prgen/transformer.hpp"

namespace prgen::config {

using nlohmann::json;

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TaskConfig {
    double skew_b_level = 0.1;
    std::size_t dataset_size = 25000;
    std::size_t recall_denominator = modmul::kPairSpace;
};

struct EvalConfig {
    std::vector<double> t_grid{0.2, 0.5, 1.0, 1.5, 2.0, 3.0, 5.0};
    std::size_t n_per_point = 20000;
    nn::Decoding decoding;
    std::uint64_t seed = 1234;
};

struct OutputConfig {
    std::string dir;  // empty: --out flag, then PRGEN_OUT_DIR, then "."
    std::string checkpoint = "model.ckpt";
    std::string train_log_csv = "train_log.csv";
    std::string sweep_csv = "sweep.csv";
};

struct ExperimentConfig {
    TaskConfig task;
    nn::ModelConfig model;
    nn::TrainConfig train;
    EvalConfig eval;
    OutputConfig output;
    std::string run_id = "run";
};

namespace detail {

inline void reject_unknown(const json& j, const std::string& section,
                           std::initializer_list<const char*> known) {
    for (const auto& [key, value] : j.items()) {
        bool ok = false;
        for (const char* k : known) {
            if (key == k) {
                ok = true;
                break;
            }
        }
        if (!ok) {
            throw ConfigError("unknown key '" + key + "' in " + section);
        }
    }
}

template <typename T>
void read_field(const json& j, const std::string& section, const char* key, T& out) {
    if (!j.contains(key)) {
        return;
    }
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError("bad value for '" + std::string(key) + "' in " + section);
    }
}

inline losses::LossMethod parse_method(const std::string& name) {
    if (name == "nll") return losses::LossMethod::Nll;
    if (name == "trunc") return losses::LossMethod::Trunc;
    if (name == "truncr") return losses::LossMethod::TruncR;
    if (name == "cdiv") return losses::LossMethod::CDiv;
    if (name == "gold") return losses::LossMethod::CDiv;  // alpha fixed below
    if (name == "tailr") return losses::LossMethod::TaiLr;
    if (name == "lambda_pr") return losses::LossMethod::LambdaPR;
    throw ConfigError("unknown loss method '" + name + "' in train.loss");
}

}  // namespace detail

inline ExperimentConfig parse_config(const json& root) {
    ExperimentConfig cfg;
    cfg.model.vocab_size = modmul::kVocab;
    cfg.model.seq_len = modmul::kSeqLen;

    detail::reject_unknown(root, "config", {"task", "model", "train", "eval", "output", "run_id"});
    detail::read_field(root, "config", "run_id", cfg.run_id);

    if (root.contains("task")) {
        const json& j = root.at("task");
        detail::reject_unknown(j, "task", {"skew_b_level", "dataset_size", "recall_denominator"});
        detail::read_field(j, "task", "skew_b_level", cfg.task.skew_b_level);
        detail::read_field(j, "task", "dataset_size", cfg.task.dataset_size);
        detail::read_field(j, "task", "recall_denominator", cfg.task.recall_denominator);
    }

    if (root.contains("model")) {
        const json& j = root.at("model");
        detail::reject_unknown(
            j, "model", {"vocab_size", "seq_len", "n_layers", "d_model", "n_heads", "d_ff", "seed", "arch"});
        detail::read_field(j, "model", "vocab_size", cfg.model.vocab_size);
        detail::read_field(j, "model", "seq_len", cfg.model.seq_len);
        detail::read_field(j, "model", "n_layers", cfg.model.n_layers);
        detail::read_field(j, "model", "d_model", cfg.model.d_model);
        detail::read_field(j, "model", "n_heads", cfg.model.n_heads);
        detail::read_field(j, "model", "d_ff", cfg.model.d_ff);
        detail::read_field(j, "model", "seed", cfg.model.seed);
        std::string arch = "llama";
        detail::read_field(j, "model", "arch", arch);
        if (arch == "llama") {
            cfg.model.arch = nn::Arch::Llama;
        } else if (arch == "absolute") {
            cfg.model.arch = nn::Arch::Absolute;
        } else {
            throw ConfigError("bad value for 'arch' in model: expected llama or absolute");
        }
    }

    if (root.contains("train")) {
        const json& j = root.at("train");
        detail::reject_unknown(j, "train",
                               {"learning_rate", "weight_decay", "epochs", "batch_size", "seed",
                                "warmup_epochs", "quantile_capacity", "loss"});
        detail::read_field(j, "train", "learning_rate", cfg.train.learning_rate);
        detail::read_field(j, "train", "weight_decay", cfg.train.weight_decay);
        detail::read_field(j, "train", "epochs", cfg.train.epochs);
        detail::read_field(j, "train", "batch_size", cfg.train.batch_size);
        detail::read_field(j, "train", "seed", cfg.train.seed);
        detail::read_field(j, "train", "warmup_epochs", cfg.train.warmup_epochs);
        detail::read_field(j, "train", "quantile_capacity", cfg.train.quantile_capacity);
        if (j.contains("loss")) {
            const json& l = j.at("loss");
            detail::reject_unknown(l, "train.loss",
                                   {"method", "delta_frac", "alpha", "gamma", "lambda"});
            std::string method = "nll";
            detail::read_field(l, "train.loss", "method", method);
            cfg.train.loss.method = detail::parse_method(method);
            if (method == "gold") {
                cfg.train.loss.alpha = 0.5;
            }
            detail::read_field(l, "train.loss", "delta_frac", cfg.train.loss.delta_frac);
            if (method != "gold") {
                detail::read_field(l, "train.loss", "alpha", cfg.train.loss.alpha);
            }
            detail::read_field(l, "train.loss", "gamma", cfg.train.loss.gamma);
            detail::read_field(l, "train.loss", "lambda", cfg.train.loss.lambda);
        }
    }

    if (root.contains("eval")) {
        const json& j = root.at("eval");
        detail::reject_unknown(j, "eval", {"t_grid", "n_per_point", "decoding", "seed"});
        detail::read_field(j, "eval", "t_grid", cfg.eval.t_grid);
        detail::read_field(j, "eval", "n_per_point", cfg.eval.n_per_point);
        detail::read_field(j, "eval", "seed", cfg.eval.seed);
        if (j.contains("decoding")) {
            const json& d = j.at("decoding");
            detail::reject_unknown(d, "eval.decoding", {"method", "p"});
            std::string method = "plain";
            detail::read_field(d, "eval.decoding", "method", method);
            if (method == "plain") {
                cfg.eval.decoding.kind = nn::Decoding::Kind::Plain;
            } else if (method == "top_p") {
                cfg.eval.decoding.kind = nn::Decoding::Kind::TopP;
                detail::read_field(d, "eval.decoding", "p", cfg.eval.decoding.p);
            } else {
                throw ConfigError("bad value for 'method' in eval.decoding: expected plain or top_p");
            }
        }
    }

    if (root.contains("output")) {
        const json& j = root.at("output");
        detail::reject_unknown(j, "output", {"dir", "checkpoint", "train_log_csv", "sweep_csv"});
        detail::read_field(j, "output", "dir", cfg.output.dir);
        detail::read_field(j, "output", "checkpoint", cfg.output.checkpoint);
        detail::read_field(j, "output", "train_log_csv", cfg.output.train_log_csv);
        detail::read_field(j, "output", "sweep_csv", cfg.output.sweep_csv);
    }

    cfg.train.dataset_size = cfg.task.dataset_size;
    cfg.train.loss.seq_len = cfg.model.seq_len;
    try {
        cfg.model.validate();
        cfg.train.validate();
        modmul::SkewSpec{cfg.task.skew_b_level}.validate();
    } catch (const std::domain_error& e) {
        throw ConfigError(e.what());
    }
    if (cfg.eval.t_grid.empty() || cfg.eval.n_per_point == 0) {
        throw ConfigError("eval: t_grid must be non-empty and n_per_point positive");
    }
    for (double t : cfg.eval.t_grid) {
        if (t < 0.0) {
            throw ConfigError("eval: temperatures must be >= 0");
        }
    }
    return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) {
        throw ConfigError("cannot open config file " + path);
    }
    json root;
    try {
        root = json::parse(is);
    } catch (const json::exception& e) {
        throw ConfigError("config parse error: " + std::string(e.what()));
    }
    return parse_config(root);
}

inline json resolved_json(const ExperimentConfig& cfg) {
    json root;
    root["run_id"] = cfg.run_id;
    root["task"] = {{"skew_b_level", cfg.task.skew_b_level},
                    {"dataset_size", cfg.task.dataset_size},
                    {"recall_denominator", cfg.task.recall_denominator}};
    root["model"] = {{"vocab_size", cfg.model.vocab_size},
                     {"seq_len", cfg.model.seq_len},
                     {"n_layers", cfg.model.n_layers},
                     {"d_model", cfg.model.d_model},
                     {"n_heads", cfg.model.n_heads},
                     {"d_ff", cfg.model.d_ff},
                     {"seed", cfg.model.seed},
                     {"arch", cfg.model.arch == nn::Arch::Llama ? "llama" : "absolute"}};
    json loss = {{"method", losses::method_name(cfg.train.loss.method)},
                 {"delta_frac", cfg.train.loss.delta_frac},
                 {"alpha", cfg.train.loss.alpha},
                 {"gamma", cfg.train.loss.gamma},
                 {"lambda", cfg.train.loss.lambda}};
    root["train"] = {{"learning_rate", cfg.train.learning_rate},
                     {"weight_decay", cfg.train.weight_decay},
                     {"epochs", cfg.train.epochs},
                     {"batch_size", cfg.train.batch_size},
                     {"seed", cfg.train.seed},
                     {"warmup_epochs", cfg.train.warmup_epochs},
                     {"quantile_capacity", cfg.train.quantile_capacity},
                     {"loss", loss}};
    json decoding;
    if (cfg.eval.decoding.kind == nn::Decoding::Kind::Plain) {
        decoding = {{"method", "plain"}};
    } else {
        decoding = {{"method", "top_p"}, {"p", cfg.eval.decoding.p}};
    }
    root["eval"] = {{"t_grid", cfg.eval.t_grid},
                    {"n_per_point", cfg.eval.n_per_point},
                    {"decoding", decoding},
                    {"seed", cfg.eval.seed}};
    root["output"] = {{"dir", cfg.output.dir},
                      {"checkpoint", cfg.output.checkpoint},
                      {"train_log_csv", cfg.output.train_log_csv},
                      {"sweep_csv", cfg.output.sweep_csv}};
    return root;
}

/// Short label of the loss hyperparameters for CSV method_params columns.
inline std::string method_params_label(const losses::LossSpec& spec) {
    char buf[96];
    switch (spec.method) {
        case losses::LossMethod::Nll:
            return "";
        case losses::LossMethod::Trunc:
        case losses::LossMethod::TruncR:
            std::snprintf(buf, sizeof(buf), "delta=%g", spec.delta_frac);
            return buf;
        case losses::LossMethod::CDiv:
            std::snprintf(buf, sizeof(buf), "alpha=%g", spec.alpha);
            return buf;
        case losses::LossMethod::TaiLr:
            std::snprintf(buf, sizeof(buf), "gamma=%g", spec.gamma);
            return buf;
        case losses::LossMethod::LambdaPR:
            std::snprintf(buf, sizeof(buf), "gamma=%g;lambda=%g", spec.gamma, spec.lambda);
            return buf;
    }
    return "";
}

}  // namespace prgen::config
