#pragma once

// Versioned binary checkpoint: model config, flat parameters, Adam moments
// and the step counter. Scalars are written raw (little endian), so a
// save/load round trip is bit exact.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>

#include "prgen/train.hpp"
#include "prgen/transformer.hpp"

namespace prgen::nn {

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {

constexpr std::uint32_t kCkptMagic = 0x5052474Eu;  // "PRGN"
constexpr std::uint32_t kCkptVersion = 1;

template <typename T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void read_pod(std::istream& is, T& v) {
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) {
        throw CheckpointError("checkpoint: truncated file");
    }
}

}  // namespace detail

template <typename S>
void save_checkpoint(const std::string& path, const Model<S>& model, const AdamState<S>& opt,
                     const std::string& tag = "") {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) {
        throw CheckpointError("checkpoint: cannot open " + path + " for writing");
    }
    detail::write_pod(os, detail::kCkptMagic);
    detail::write_pod(os, detail::kCkptVersion);
    detail::write_pod(os, static_cast<std::uint8_t>(model.cfg.arch == Arch::Llama ? 0 : 1));
    detail::write_pod(os, static_cast<std::uint8_t>(sizeof(S)));
    detail::write_pod(os, static_cast<std::uint16_t>(0));
    for (std::uint64_t v : {static_cast<std::uint64_t>(model.cfg.vocab_size),
                            static_cast<std::uint64_t>(model.cfg.seq_len),
                            static_cast<std::uint64_t>(model.cfg.n_layers),
                            static_cast<std::uint64_t>(model.cfg.d_model),
                            static_cast<std::uint64_t>(model.cfg.n_heads),
                            static_cast<std::uint64_t>(model.cfg.d_ff), model.cfg.seed}) {
        detail::write_pod(os, v);
    }
    detail::write_pod(os, static_cast<std::uint32_t>(tag.size()));
    os.write(tag.data(), static_cast<std::streamsize>(tag.size()));
    detail::write_pod(os, static_cast<std::uint64_t>(model.params.size()));
    os.write(reinterpret_cast<const char*>(model.params.data()),
             static_cast<std::streamsize>(model.params.size() * sizeof(S)));
    detail::write_pod(os, opt.step);
    os.write(reinterpret_cast<const char*>(opt.m.data()),
             static_cast<std::streamsize>(opt.m.size() * sizeof(S)));
    os.write(reinterpret_cast<const char*>(opt.v.data()),
             static_cast<std::streamsize>(opt.v.size() * sizeof(S)));
    if (!os) {
        throw CheckpointError("checkpoint: write failed for " + path);
    }
}

template <typename S>
struct Checkpoint {
    Model<S> model;
    AdamState<S> opt;
    std::string tag;  // free-form label, e.g. the training method
};

template <typename S>
Checkpoint<S> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw CheckpointError("checkpoint: cannot open " + path);
    }
    std::uint32_t magic = 0, version = 0;
    detail::read_pod(is, magic);
    detail::read_pod(is, version);
    if (magic != detail::kCkptMagic || version != detail::kCkptVersion) {
        throw CheckpointError("checkpoint: bad magic or version in " + path);
    }
    std::uint8_t arch = 0, scalar = 0;
    std::uint16_t pad = 0;
    detail::read_pod(is, arch);
    detail::read_pod(is, scalar);
    detail::read_pod(is, pad);
    if (scalar != sizeof(S)) {
        throw CheckpointError("checkpoint: scalar width " + std::to_string(int(scalar)) +
                              " does not match this build");
    }
    std::uint64_t vals[7];
    for (std::uint64_t& v : vals) {
        detail::read_pod(is, v);
    }
    ModelConfig cfg;
    cfg.vocab_size = vals[0];
    cfg.seq_len = vals[1];
    cfg.n_layers = vals[2];
    cfg.d_model = vals[3];
    cfg.n_heads = vals[4];
    cfg.d_ff = vals[5];
    cfg.seed = vals[6];
    cfg.arch = arch == 0 ? Arch::Llama : Arch::Absolute;
    cfg.validate();

    Checkpoint<S> out{Model<S>::init(cfg), AdamState<S>{}, ""};
    std::uint32_t tag_len = 0;
    detail::read_pod(is, tag_len);
    if (tag_len > 4096) {
        throw CheckpointError("checkpoint: implausible tag length in " + path);
    }
    out.tag.assign(tag_len, ' ');
    is.read(out.tag.data(), tag_len);
    std::uint64_t n_params = 0;
    detail::read_pod(is, n_params);
    if (n_params != out.model.params.size()) {
        throw CheckpointError("checkpoint: parameter count mismatch in " + path);
    }
    is.read(reinterpret_cast<char*>(out.model.params.data()),
            static_cast<std::streamsize>(n_params * sizeof(S)));
    out.opt.m.assign(n_params, S(0));
    out.opt.v.assign(n_params, S(0));
    detail::read_pod(is, out.opt.step);
    is.read(reinterpret_cast<char*>(out.opt.m.data()),
            static_cast<std::streamsize>(n_params * sizeof(S)));
    is.read(reinterpret_cast<char*>(out.opt.v.data()),
            static_cast<std::streamsize>(n_params * sizeof(S)));
    if (!is) {
        throw CheckpointError("checkpoint: truncated file " + path);
    }
    return out;
}

}  // namespace prgen::nn
