#pragma once

// Checkpoint file, version 1. Little-endian throughout.
//
//   bytes  "CSLRCKPT"
//   u64    version (1)
//   u64    num_classes, input_dim, channels, hidden, layers, batch_norm (0/1)
//   str    temporal variant name
//   u64    tensor count
//   per tensor, in ModelParams::for_each order:
//     str  name
//     u64  partition (0 = visual, 1 = alignment)
//     u64  trainable (0/1)
//     u64  rank, then rank x u64 dims
//     f64  values, row-major
// A str is a u64 byte length followed by the bytes. BN running moments are
// stored as non-trainable visual tensors.

#include <filesystem>
#include <string>

#include "cslr/binary_io.hpp"
#include "cslr/error.hpp"
#include "cslr/seqnet.hpp"

namespace cslr {

inline constexpr std::string_view kCheckpointMagic = "CSLRCKPT";
inline constexpr std::uint64_t kCheckpointVersion = 1;

inline std::string encode_checkpoint(const ModelConfig& cfg, const ModelParams& params) {
    std::string out(kCheckpointMagic);
    io::put_u64(out, kCheckpointVersion);
    for (std::uint64_t v : {cfg.num_classes, cfg.input_dim, cfg.channels, cfg.hidden, cfg.layers})
        io::put_u64(out, v);
    io::put_u64(out, cfg.batch_norm ? 1 : 0);
    io::put_string(out, variant_name(cfg.variant));
    std::uint64_t count = 0;
    params.for_each([&](const Tensor&) { ++count; });
    io::put_u64(out, count);
    params.for_each([&](const Tensor& t) {
        io::put_string(out, t.name);
        io::put_u64(out, t.partition == Partition::Visual ? 0 : 1);
        io::put_u64(out, t.trainable ? 1 : 0);
        io::put_u64(out, t.shape.size());
        for (auto d : t.shape) io::put_u64(out, d);
        for (double v : t.data) io::put_f64(out, v);
    });
    return out;
}

inline SequenceModel decode_checkpoint(std::string_view bytes, const std::string& source = "checkpoint") {
    io::Reader r(bytes, source);
    if (r.raw(kCheckpointMagic.size()) != kCheckpointMagic) throw IoError(source + ": not a checkpoint file");
    const auto version = r.u64();
    if (version != kCheckpointVersion)
        throw IoError(source + ": unsupported checkpoint version " + std::to_string(version));
    ModelConfig cfg;
    cfg.num_classes = r.u64();
    cfg.input_dim = r.u64();
    cfg.channels = r.u64();
    cfg.hidden = r.u64();
    cfg.layers = r.u64();
    cfg.batch_norm = r.u64() != 0;
    try {
        cfg.variant = parse_variant(r.string());
    } catch (const ConfigError& e) {
        throw IoError(source + ": " + e.what());
    }
    ModelParams params;
    try {
        params = make_params(cfg);
    } catch (const ConfigError& e) {
        throw IoError(source + ": " + e.what());
    }
    std::uint64_t expected = 0;
    params.for_each([&](const Tensor&) { ++expected; });
    if (r.u64() != expected) throw IoError(source + ": tensor count does not match the model layout");
    params.for_each([&](Tensor& t) {
        const auto name = r.string();
        if (name != t.name) throw IoError(source + ": expected tensor " + t.name + ", found " + name);
        const bool visual = r.u64() == 0;
        if (visual != (t.partition == Partition::Visual)) throw IoError(source + ": partition tag mismatch for " + name);
        if ((r.u64() != 0) != t.trainable) throw IoError(source + ": trainable flag mismatch for " + name);
        const auto rank = r.u64();
        if (rank != t.shape.size()) throw IoError(source + ": rank mismatch for " + name);
        for (auto d : t.shape)
            if (r.u64() != d) throw IoError(source + ": shape mismatch for " + name);
        for (double& v : t.data) v = r.f64();
    });
    if (!r.done()) throw IoError(source + ": trailing bytes");
    return SequenceModel(cfg, std::move(params));
}

inline void save_checkpoint(const std::filesystem::path& path, const SequenceModel& model) {
    io::write_file(path, encode_checkpoint(model.config(), model.params()));
}

inline SequenceModel load_checkpoint(const std::filesystem::path& path) {
    return decode_checkpoint(io::read_file(path), path.string());
}

}  // namespace cslr
