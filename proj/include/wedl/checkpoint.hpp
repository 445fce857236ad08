#pragma once

#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>

#include "wedl/compressor.hpp"
#include "wedl/ensemble.hpp"

namespace wedl {

// Model checkpoint, single binary file:
//   magic "WEDL" | u8 version | u8 mode | u8 equal_weights | u8 literal_dist
//   | u8 member_count | member kinds (u8 each) | u8 has_regressor
//   | u32 feature_dim | u32 embed_dim | u32 train_classes
//   | u64 ema_iteration | f64 ema_smoothing
// followed by length-prefixed little-endian f64 blocks (u32 rows, u32 cols,
// rows*cols values) in this fixed order:
//   coefficients, ema means, each head, proxies (if present),
//   classifier weight, classifier bias (if present),
//   regressor transform, regressor bias (if present).
inline constexpr char kCheckpointMagic[4] = {'W', 'E', 'D', 'L'};
inline constexpr unsigned char kCheckpointVersion = 1;

namespace detail {

inline void write_block(std::ostream& os, const Matrix& m) {
  write_u32_le(os, std::uint32_t(m.rows));
  write_u32_le(os, std::uint32_t(m.cols));
  for (double v : m.data) write_f64_le(os, v);
}

inline Matrix read_block(std::istream& is) {
  const std::uint32_t rows = read_u32_le(is);
  const std::uint32_t cols = read_u32_le(is);
  Matrix m(rows, cols);
  for (auto& v : m.data) v = read_f64_le(is);
  return m;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const EnsembleModel& model,
                            const CompressionRegressor* regressor = nullptr) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot write '" + path + "'");
  os.write(kCheckpointMagic, 4);
  os.put(char(kCheckpointVersion));
  os.put(char(int(model.cfg.mode)));
  os.put(char(model.cfg.equal_weights ? 1 : 0));
  os.put(char(model.cfg.literal_printed_distance ? 1 : 0));
  os.put(char(model.member_count()));
  for (LossKind k : model.cfg.members) os.put(char(int(k)));
  os.put(char(regressor ? 1 : 0));
  detail::write_u32_le(os, std::uint32_t(model.feature_dim));
  detail::write_u32_le(os, std::uint32_t(model.cfg.embed_dim));
  detail::write_u32_le(os, std::uint32_t(model.train_classes));
  detail::write_u64_le(os, std::uint64_t(model.ema.iteration));
  detail::write_f64_le(os, model.ema.smoothing);

  detail::write_block(os, model.coeffs.value);
  Matrix ema_means(1, model.ema.means.size());
  for (std::size_t j = 0; j < model.ema.means.size(); ++j) ema_means(0, j) = model.ema.means[j];
  detail::write_block(os, ema_means);
  for (const EmbeddingHead& h : model.heads) detail::write_block(os, h.weight.value);
  if (model.proxies) detail::write_block(os, model.proxies->proxies.value);
  if (model.classifier) {
    detail::write_block(os, model.classifier->weight.value);
    detail::write_block(os, model.classifier->bias.value);
  }
  if (regressor) {
    detail::write_block(os, regressor->transform.value);
    detail::write_block(os, regressor->bias.value);
  }
  if (!os) throw std::runtime_error("checkpoint: write failed for '" + path + "'");
}

struct LoadedCheckpoint {
  EnsembleModel model;
  std::optional<CompressionRegressor> regressor;
};

// Rebuilds the model from a checkpoint. Structure (mode, members, dimensions,
// distance flag) comes from the file; training hyperparameters and lr scales
// come from the supplied base config.
inline LoadedCheckpoint load_checkpoint(const std::string& path,
                                        const EnsembleConfig& base = {}) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
  char magic[4] = {};
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != std::string(kCheckpointMagic, 4))
    throw std::runtime_error("checkpoint: bad magic in '" + path + "'");
  const int version = is.get();
  if (version != kCheckpointVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));

  EnsembleConfig cfg = base;
  cfg.mode = EnsembleMode(is.get());
  cfg.equal_weights = is.get() != 0;
  cfg.literal_printed_distance = is.get() != 0;
  const int m = is.get();
  if (m < 1 || m > 16) throw std::runtime_error("checkpoint: bad member count");
  cfg.members.clear();
  for (int j = 0; j < m; ++j) cfg.members.push_back(LossKind(is.get()));
  const bool has_regressor = is.get() != 0;
  const int feature_dim = int(detail::read_u32_le(is));
  cfg.embed_dim = int(detail::read_u32_le(is));
  const int train_classes = int(detail::read_u32_le(is));
  const auto ema_iteration = (long long)(detail::read_u64_le(is));
  cfg.ema_smoothing = detail::read_f64_le(is);

  Rng scratch(0);  // values are overwritten below
  EnsembleModel model = EnsembleModel::create(cfg, feature_dim, train_classes, scratch);
  model.coeffs.value = detail::read_block(is);
  model.coeffs.grad = Matrix::zeros_like(model.coeffs.value);
  const Matrix ema_means = detail::read_block(is);
  model.ema.iteration = ema_iteration;
  model.ema.means.assign(ema_means.data.begin(), ema_means.data.end());
  for (EmbeddingHead& h : model.heads) {
    h.weight.value = detail::read_block(is);
    h.weight.grad = Matrix::zeros_like(h.weight.value);
  }
  if (model.proxies) {
    model.proxies->proxies.value = detail::read_block(is);
    model.proxies->proxies.grad = Matrix::zeros_like(model.proxies->proxies.value);
  }
  if (model.classifier) {
    model.classifier->weight.value = detail::read_block(is);
    model.classifier->weight.grad = Matrix::zeros_like(model.classifier->weight.value);
    model.classifier->bias.value = detail::read_block(is);
    model.classifier->bias.grad = Matrix::zeros_like(model.classifier->bias.value);
  }
  LoadedCheckpoint out{std::move(model), std::nullopt};
  if (has_regressor) {
    CompressionRegressor reg;
    reg.transform = Param("regressor_transform", detail::read_block(is));
    reg.bias = Param("regressor_bias", detail::read_block(is));
    out.regressor = std::move(reg);
  }
  if (!is) throw std::runtime_error("checkpoint: truncated file '" + path + "'");
  return out;
}

}  // namespace wedl
