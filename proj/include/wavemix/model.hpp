#pragma once

#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "wavemix/blocks.hpp"

namespace wavemix {

enum class BlockKind { wavemix, wavemix_lite, fnet2d, mlpmixer2d };

std::string to_string(BlockKind kind);
/// Accepts the canonical names plus the dashed spellings ("wavemix-lite").
BlockKind parse_block_kind(std::string_view name);

/// wavemix_lite above 64 channels, wavemix otherwise.
BlockKind select_block_variant(Index channels);

/// Smallest power-of-two stem strides (s1, s2) bringing max(H,W) to <= 64.
std::pair<Index, Index> stem_strides(Index height, Index width);

struct ModelConfig {
  std::optional<BlockKind> block;  // empty: select_block_variant(embedding)
  Index embedding = 16;
  Index depth = 5;
  int levels = 0;  // 0: compute_levels at the stem output size
  Index in_channels = 1;
  Index height = 28;
  Index width = 28;
  Index num_classes = 10;
  double dropout = 0.5;
  Index stem_stride1 = 0;  // 0: stem_strides()
  Index stem_stride2 = 0;
  Index lite_expansion = 2;
  Index mlp_expansion = 2;

  /// Copy with every automatic field filled in; throws on invalid configs.
  ModelConfig resolved() const;
  void validate() const;
  /// "WaveMix-32/5", "FNet2D-32/5", ...
  std::string name() const;
  /// Spatial size after the stem.
  std::pair<Index, Index> stem_output_size() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

struct ParamReport {
  std::vector<std::pair<std::string, Index>> groups;
  Index total = 0;

  double millions() const { return static_cast<double>(total) / 1e6; }
  std::string table() const;
};

template <typename T>
class Model {
 public:
  /// Resolves `config` and initializes all weights from `seed`.
  Model(const ModelConfig& config, std::uint64_t seed);

  /// images (B, Cin, H, W) -> logits (B, K)
  Tensor<T> forward(const Tensor<T>& images, bool training);

  const ModelConfig& config() const { return config_; }
  ParamReport count_params() const;
  /// Learnable tensors and running statistics, names prefixed by module.
  Registry<T> registry() const;
  std::vector<Tensor<T>> parameters() const { return registry().parameter_tensors(); }
  Rng& dropout_rng() { return dropout_rng_; }
  const std::vector<std::unique_ptr<MixingBlock<T>>>& blocks() const { return blocks_; }

 private:
  void register_stem(Registry<T>& reg) const;
  void register_head(Registry<T>& reg) const;

  ModelConfig config_;
  Conv2d<T> stem1_, stem2_;
  std::vector<std::unique_ptr<MixingBlock<T>>> blocks_;
  Conv2d<T> head_conv_;
  Linear<T> classifier_;
  Rng dropout_rng_;
};

}  // namespace wavemix
