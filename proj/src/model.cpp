#include "wavemix/model.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "wavemix/baselines.hpp"
#include "wavemix/dwt.hpp"

namespace wavemix {

std::string to_string(BlockKind kind) {
  switch (kind) {
    case BlockKind::wavemix: return "wavemix";
    case BlockKind::wavemix_lite: return "wavemix_lite";
    case BlockKind::fnet2d: return "fnet2d";
    case BlockKind::mlpmixer2d: return "mlpmixer2d";
  }
  return "?";
}

BlockKind parse_block_kind(std::string_view name) {
  std::string n(name);
  std::replace(n.begin(), n.end(), '-', '_');
  if (n == "wavemix") return BlockKind::wavemix;
  if (n == "wavemix_lite") return BlockKind::wavemix_lite;
  if (n == "fnet2d") return BlockKind::fnet2d;
  if (n == "mlpmixer2d") return BlockKind::mlpmixer2d;
  throw std::invalid_argument("unknown block kind '" + std::string(name) +
                              "' (expected wavemix, wavemix-lite, fnet2d or mlpmixer2d)");
}

BlockKind select_block_variant(Index channels) {
  if (channels < 1) throw std::invalid_argument("select_block_variant: channels must be positive");
  return channels > 64 ? BlockKind::wavemix_lite : BlockKind::wavemix;
}

std::pair<Index, Index> stem_strides(Index height, Index width) {
  Index size = std::max(height, width);
  int k = 0;
  while (size > 64) {
    size = (size + 1) / 2;
    ++k;
  }
  const int k1 = (k + 1) / 2, k2 = k / 2;
  return {Index{1} << k1, Index{1} << k2};
}

std::pair<Index, Index> ModelConfig::stem_output_size() const {
  const auto [s1, s2] = (stem_stride1 > 0 && stem_stride2 > 0) ? std::pair{stem_stride1, stem_stride2}
                                                               : stem_strides(height, width);
  const auto out = [&](Index v) { return conv_output_size(conv_output_size(v, 3, s1, 1), 3, s2, 1); };
  return {out(height), out(width)};
}

void ModelConfig::validate() const {
  const auto fail = [](const std::string& m) { throw std::invalid_argument("invalid model config: " + m); };
  if (embedding < 2 || embedding % 2 != 0) fail("embedding dimension must be a positive even number");
  if (depth < 0) fail("depth must be non-negative");
  if (in_channels < 1) fail("in_channels must be positive");
  if (height < 1 || width < 1) fail("input size must be positive");
  if (num_classes < 2) fail("num_classes must be at least 2");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must be in [0, 1)");
  if (stem_stride1 < 0 || stem_stride2 < 0) fail("stem strides must be positive (or 0 for automatic)");
  if (lite_expansion < 1 || mlp_expansion < 1) fail("expansions must be >= 1");
  if (levels < 0) fail("levels must be non-negative");
  const BlockKind kind = block.value_or(select_block_variant(embedding));
  if (kind == BlockKind::wavemix_lite && embedding % 4 != 0) {
    fail("WaveMix-Lite needs an embedding dimension divisible by 4, got " + std::to_string(embedding));
  }
  const auto [oh, ow] = stem_output_size();
  if (std::min(oh, ow) > 64) {
    fail("stem output " + std::to_string(oh) + "x" + std::to_string(ow) + " exceeds 64; raise the stem strides");
  }
  if (kind == BlockKind::wavemix && depth > 0) {
    if (std::min(oh, ow) < 4) fail("WaveMix blocks need a stem output of at least 4x4");
    const int auto_levels = compute_levels(oh, ow);
    if (levels > auto_levels) {
      fail(std::to_string(levels) + " levels is too many for a " + std::to_string(oh) + "x" + std::to_string(ow) +
           " feature map (maximum " + std::to_string(auto_levels) + ")");
    }
    if (embedding < (levels ? levels : auto_levels)) fail("embedding dimension is smaller than the level count");
  }
  if (kind == BlockKind::wavemix_lite && std::min(oh, ow) < 2) fail("WaveMix-Lite needs a stem output of at least 2x2");
}

ModelConfig ModelConfig::resolved() const {
  validate();
  ModelConfig r = *this;
  if (!r.block) r.block = select_block_variant(embedding);
  if (r.stem_stride1 == 0 || r.stem_stride2 == 0) std::tie(r.stem_stride1, r.stem_stride2) = stem_strides(height, width);
  if (*r.block == BlockKind::wavemix) {
    const auto [oh, ow] = r.stem_output_size();
    if (r.levels == 0) r.levels = depth > 0 ? compute_levels(oh, ow) : 1;
  } else {
    r.levels = 0;
  }
  return r;
}

std::string ModelConfig::name() const {
  const BlockKind kind = block.value_or(select_block_variant(embedding));
  std::string family;
  switch (kind) {
    case BlockKind::wavemix:
    case BlockKind::wavemix_lite: family = "WaveMix"; break;
    case BlockKind::fnet2d: family = "FNet2D"; break;
    case BlockKind::mlpmixer2d: family = "MLPMixer2D"; break;
  }
  return family + "-" + std::to_string(embedding) + "/" + std::to_string(depth);
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"block", c.block ? to_string(*c.block) : "auto"},
                     {"embedding", c.embedding},
                     {"depth", c.depth},
                     {"levels", c.levels},
                     {"in_channels", c.in_channels},
                     {"height", c.height},
                     {"width", c.width},
                     {"num_classes", c.num_classes},
                     {"dropout", c.dropout},
                     {"stem_stride1", c.stem_stride1},
                     {"stem_stride2", c.stem_stride2},
                     {"lite_expansion", c.lite_expansion},
                     {"mlp_expansion", c.mlp_expansion}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  static const char* const known[] = {"block",        "embedding",    "depth",          "levels",
                                      "in_channels",  "height",       "width",          "num_classes",
                                      "dropout",      "stem_stride1", "stem_stride2",   "lite_expansion",
                                      "mlp_expansion"};
  for (const auto& [key, value] : j.items()) {
    if (std::find(std::begin(known), std::end(known), key) == std::end(known)) {
      throw std::invalid_argument("unknown model config key '" + key + "'");
    }
  }
  ModelConfig d;
  if (j.contains("block")) {
    const auto b = j.at("block").get<std::string>();
    d.block = b == "auto" ? std::nullopt : std::optional(parse_block_kind(b));
  }
  d.embedding = j.value("embedding", d.embedding);
  d.depth = j.value("depth", d.depth);
  d.levels = j.value("levels", d.levels);
  d.in_channels = j.value("in_channels", d.in_channels);
  d.height = j.value("height", d.height);
  d.width = j.value("width", d.width);
  d.num_classes = j.value("num_classes", d.num_classes);
  d.dropout = j.value("dropout", d.dropout);
  d.stem_stride1 = j.value("stem_stride1", d.stem_stride1);
  d.stem_stride2 = j.value("stem_stride2", d.stem_stride2);
  d.lite_expansion = j.value("lite_expansion", d.lite_expansion);
  d.mlp_expansion = j.value("mlp_expansion", d.mlp_expansion);
  c = d;
}

std::string ParamReport::table() const {
  std::size_t width = 5;
  for (const auto& [name, n] : groups) width = std::max(width, name.size());
  std::ostringstream os;
  char line[128];
  for (const auto& [name, n] : groups) {
    std::snprintf(line, sizeof line, "%-*s %12lld\n", static_cast<int>(width), name.c_str(), static_cast<long long>(n));
    os << line;
  }
  std::snprintf(line, sizeof line, "%-*s %12lld  (%.3f M)\n", static_cast<int>(width), "total",
                static_cast<long long>(total), millions());
  os << line;
  return os.str();
}

// ---------------------------------------------------------------- Model

namespace {

ConvSpec conv3x3(Index in, Index out, Index stride) {
  ConvSpec s;
  s.in_channels = in;
  s.out_channels = out;
  s.kernel_h = s.kernel_w = 3;
  s.geometry.stride_h = s.geometry.stride_w = stride;
  s.geometry.pad_h = s.geometry.pad_w = 1;
  return s;
}

}  // namespace

template <typename T>
Model<T>::Model(const ModelConfig& config, std::uint64_t seed)
    : config_(config.resolved()), dropout_rng_(seed, 1) {
  Rng init(seed, 0);
  const ModelConfig& c = config_;
  stem1_ = Conv2d<T>(conv3x3(c.in_channels, c.embedding / 2, c.stem_stride1), init);
  stem2_ = Conv2d<T>(conv3x3(c.embedding / 2, c.embedding, c.stem_stride2), init);
  const auto [oh, ow] = c.stem_output_size();
  for (Index i = 0; i < c.depth; ++i) {
    switch (*c.block) {
      case BlockKind::wavemix:
        blocks_.push_back(std::make_unique<WaveMixBlock<T>>(
            WaveMixBlockOptions{c.embedding, c.levels, c.mlp_expansion}, init));
        break;
      case BlockKind::wavemix_lite:
        blocks_.push_back(
            std::make_unique<WaveMixLiteBlock<T>>(WaveMixLiteBlockOptions{c.embedding, c.lite_expansion}, init));
        break;
      case BlockKind::fnet2d:
        blocks_.push_back(std::make_unique<FNet2DBlock<T>>(c.embedding, oh, ow, init, c.mlp_expansion));
        break;
      case BlockKind::mlpmixer2d:
        blocks_.push_back(std::make_unique<MLPMixer2DBlock<T>>(c.embedding, oh, ow, init, c.mlp_expansion));
        break;
    }
  }
  ConvSpec head;
  head.in_channels = head.out_channels = c.embedding;
  head_conv_ = Conv2d<T>(head, init);
  classifier_ = Linear<T>(c.embedding, c.num_classes, init);
}

template <typename T>
Tensor<T> Model<T>::forward(const Tensor<T>& images, bool training) {
  detail::require_rank(images.shape(), 4, "Model::forward");
  if (images.dim(1) != config_.in_channels || images.dim(2) != config_.height || images.dim(3) != config_.width) {
    throw ShapeError(config_.name() + " expects images (B," + std::to_string(config_.in_channels) + "," +
                     std::to_string(config_.height) + "," + std::to_string(config_.width) + "), got " +
                     to_string(images.shape()));
  }
  Tensor<T> x = stem2_(gelu(stem1_(images)));
  for (auto& block : blocks_) x = block->forward(x, training);
  x = dropout(gelu(head_conv_(x)), config_.dropout, training, dropout_rng_);
  return classifier_(global_avg_pool(x));
}

template <typename T>
void Model<T>::register_stem(Registry<T>& reg) const {
  stem1_.register_into("stem.conv1", reg);
  stem2_.register_into("stem.conv2", reg);
}

template <typename T>
void Model<T>::register_head(Registry<T>& reg) const {
  head_conv_.register_into("head.conv", reg);
  classifier_.register_into("head.linear", reg);
}

template <typename T>
Registry<T> Model<T>::registry() const {
  Registry<T> reg;
  register_stem(reg);
  for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i]->register_into("block" + std::to_string(i + 1), reg);
  register_head(reg);
  return reg;
}

template <typename T>
ParamReport Model<T>::count_params() const {
  ParamReport r;
  {
    Registry<T> reg;
    register_stem(reg);
    r.groups.emplace_back("stem", reg.parameter_count());
  }
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    r.groups.emplace_back("block" + std::to_string(i + 1) + " (" + std::string(blocks_[i]->kind()) + ")",
                          blocks_[i]->parameter_count());
  }
  {
    Registry<T> reg;
    register_head(reg);
    r.groups.emplace_back("head", reg.parameter_count());
  }
  for (const auto& g : r.groups) r.total += g.second;
  return r;
}

template class Model<float>;
template class Model<double>;

}  // namespace wavemix
