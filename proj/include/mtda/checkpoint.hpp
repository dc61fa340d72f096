#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "mtda/errors.hpp"
#include "mtda/model.hpp"
#include "mtda/rng.hpp"

namespace mtda {

namespace detail {

constexpr char kCheckpointMagic[8] = {'M', 'T', 'D', 'A', 'C', 'K', 'P', '1'};

inline void write_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
inline void write_i32(std::ostream& out, std::int32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
inline void write_f64(std::ostream& out, double v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
inline void write_string(std::ostream& out, const std::string& s) {
  write_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::uint32_t read_u32(std::istream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!in) throw IoError("checkpoint: truncated file");
  return v;
}
inline std::int32_t read_i32(std::istream& in) {
  std::int32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!in) throw IoError("checkpoint: truncated file");
  return v;
}
inline double read_f64(std::istream& in) {
  double v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!in) throw IoError("checkpoint: truncated file");
  return v;
}
inline std::string read_string(std::istream& in) {
  const std::uint32_t len = read_u32(in);
  std::string s(len, '\0');
  in.read(s.data(), static_cast<std::streamsize>(len));
  if (!in) throw IoError("checkpoint: truncated file");
  return s;
}

}  // namespace detail

/// Writes the full model state: architecture, every parameter and batch-norm
/// running statistic (fixed name order), and the random generator state.
inline void save_checkpoint(const std::string& path, ModelBundle& bundle,
                            const Rng& rng) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("checkpoint: cannot open '" + path + "' for writing");
  out.write(detail::kCheckpointMagic, sizeof(detail::kCheckpointMagic));

  const ArchitectureConfig& cfg = bundle.config();
  detail::write_i32(out, cfg.backbone == BackboneKind::kMlp ? 0 : 1);
  detail::write_i32(out, cfg.n_classes);
  detail::write_i32(out, cfg.input_dim);
  detail::write_i32(out, cfg.hidden_dim);
  detail::write_i32(out, cfg.feature_dim);
  detail::write_i32(out, cfg.disc_hidden);
  detail::write_f64(out, cfg.conv_dropout);
  detail::write_f64(out, cfg.disc_dropout);

  detail::write_string(out, rng.save_state());

  const nn::NamedState state = bundle.named_state();
  detail::write_u32(out, static_cast<std::uint32_t>(state.size()));
  for (const auto& [name, matrix] : state) {
    detail::write_string(out, name);
    detail::write_u32(out, static_cast<std::uint32_t>(matrix->rows()));
    detail::write_u32(out, static_cast<std::uint32_t>(matrix->cols()));
    out.write(reinterpret_cast<const char*>(matrix->data()),
              static_cast<std::streamsize>(sizeof(double) * matrix->size()));
  }
  if (!out) throw IoError("checkpoint: write to '" + path + "' failed");
}

struct Checkpoint {
  ModelBundle bundle;
  Rng rng;
};

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint: cannot open '" + path + "'");
  char magic[sizeof(detail::kCheckpointMagic)] = {};
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, detail::kCheckpointMagic, sizeof(magic)) != 0)
    throw IoError("checkpoint: '" + path + "' is not a model checkpoint");

  ArchitectureConfig cfg;
  cfg.backbone = detail::read_i32(in) == 0 ? BackboneKind::kMlp : BackboneKind::kSmallConv;
  cfg.n_classes = detail::read_i32(in);
  cfg.input_dim = detail::read_i32(in);
  cfg.hidden_dim = detail::read_i32(in);
  cfg.feature_dim = detail::read_i32(in);
  cfg.disc_hidden = detail::read_i32(in);
  cfg.conv_dropout = detail::read_f64(in);
  cfg.disc_dropout = detail::read_f64(in);

  const std::string rng_state = detail::read_string(in);

  Checkpoint ckpt;
  Rng init_rng(0);  // weights are overwritten below
  ckpt.bundle = ModelBundle(cfg, init_rng);
  ckpt.rng.load_state(rng_state);

  const nn::NamedState state = ckpt.bundle.named_state();
  const std::uint32_t count = detail::read_u32(in);
  if (count != state.size())
    throw IoError("checkpoint: expected " + std::to_string(state.size()) +
                  " tensors, found " + std::to_string(count));
  for (auto& [name, matrix] : state) {
    const std::string stored = detail::read_string(in);
    if (stored != name)
      throw IoError("checkpoint: tensor order mismatch, expected '" + name +
                    "', found '" + stored + "'");
    const std::uint32_t rows = detail::read_u32(in);
    const std::uint32_t cols = detail::read_u32(in);
    if (rows != static_cast<std::uint32_t>(matrix->rows()) ||
        cols != static_cast<std::uint32_t>(matrix->cols()))
      throw IoError("checkpoint: tensor '" + name + "' has shape " +
                    std::to_string(rows) + "x" + std::to_string(cols) +
                    ", expected " + std::to_string(matrix->rows()) + "x" +
                    std::to_string(matrix->cols()));
    in.read(reinterpret_cast<char*>(matrix->data()),
            static_cast<std::streamsize>(sizeof(double) * matrix->size()));
    if (!in) throw IoError("checkpoint: truncated tensor data in '" + path + "'");
  }
  return ckpt;
}

}  // namespace mtda
