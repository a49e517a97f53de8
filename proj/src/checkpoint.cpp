#include "wavemix/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace fs = std::filesystem;

namespace wavemix {

namespace {

template <typename V>
constexpr DType dtype_of() {
  if constexpr (std::is_same_v<V, float>) return DType::f32;
  else if constexpr (std::is_same_v<V, double>) return DType::f64;
  else if constexpr (std::is_same_v<V, std::uint64_t>) return DType::u64;
  else return DType::u8;
}

std::size_t dtype_size(DType d) {
  switch (d) {
    case DType::f32: return 4;
    case DType::f64: return 8;
    case DType::u64: return 8;
    case DType::u8: return 1;
  }
  throw CheckpointError("unknown dtype tag " + std::to_string(static_cast<int>(d)));
}

const char* dtype_name(DType d) {
  switch (d) {
    case DType::f32: return "f32";
    case DType::f64: return "f64";
    case DType::u64: return "u64";
    case DType::u8: return "u8";
  }
  return "?";
}

// Element-wise byte order conversion between host and little-endian.
void to_little_endian(std::uint8_t* data, std::size_t count, std::size_t width) {
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < count; ++i) std::reverse(data + i * width, data + (i + 1) * width);
  } else {
    (void)data, (void)count, (void)width;
  }
}

class Writer {
 public:
  std::vector<std::uint8_t> out;
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out.insert(out.end(), b, b + n);
  }
  template <typename I>
  void integer(I v) {
    for (std::size_t i = 0; i < sizeof(I); ++i) out.push_back(static_cast<std::uint8_t>(static_cast<std::uint64_t>(v) >> (8 * i)));
  }
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : b_(b) {}
  const std::uint8_t* take(std::size_t n, const char* what) {
    if (n > b_.size() - pos_) throw CheckpointError(std::string("checkpoint truncated while reading ") + what);
    const std::uint8_t* p = b_.data() + pos_;
    pos_ += n;
    return p;
  }
  template <typename I>
  I integer(const char* what) {
    const std::uint8_t* p = take(sizeof(I), what);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(I); ++i) v |= std::uint64_t{p[i]} << (8 * i);
    return static_cast<I>(v);
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  const std::vector<std::uint8_t>& b_;
  std::size_t pos_ = 0;
};

}  // namespace

template <typename V>
void Archive::put(const std::string& name, Shape shape, const std::vector<V>& values) {
  if (static_cast<Index>(values.size()) != numel(shape)) {
    throw std::invalid_argument("Archive::put: " + name + " has " + std::to_string(values.size()) +
                                " values for shape " + to_string(shape));
  }
  ArchiveEntry e;
  e.dtype = dtype_of<V>();
  e.shape = std::move(shape);
  e.bytes.resize(values.size() * sizeof(V));
  if (!values.empty()) std::memcpy(e.bytes.data(), values.data(), e.bytes.size());
  entries_[name] = std::move(e);
}

void Archive::put_text(const std::string& name, const std::string& text) {
  put(name, {static_cast<Index>(text.size())}, std::vector<std::uint8_t>(text.begin(), text.end()));
}

template <typename V>
std::vector<V> Archive::get(const std::string& name, Shape* shape) const {
  const auto it = entries_.find(name);
  if (it == entries_.end()) throw CheckpointError("checkpoint has no entry '" + name + "'");
  const ArchiveEntry& e = it->second;
  if (e.dtype != dtype_of<V>()) {
    throw CheckpointError("checkpoint entry '" + name + "' is " + dtype_name(e.dtype) + ", expected " +
                          dtype_name(dtype_of<V>()));
  }
  std::vector<V> out(e.bytes.size() / sizeof(V));
  if (!out.empty()) std::memcpy(out.data(), e.bytes.data(), e.bytes.size());
  if (shape) *shape = e.shape;
  return out;
}

std::string Archive::get_text(const std::string& name) const {
  const auto b = get<std::uint8_t>(name);
  return std::string(b.begin(), b.end());
}

std::vector<std::uint8_t> Archive::serialize() const {
  Writer w;
  w.bytes("WVMX", 4);
  w.integer<std::uint32_t>(kCheckpointVersion);
  const std::string json = config.dump();
  w.integer<std::uint64_t>(json.size());
  w.bytes(json.data(), json.size());
  w.integer<std::uint32_t>(static_cast<std::uint32_t>(entries_.size()));
  for (const auto& [name, e] : entries_) {
    w.integer<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.integer<std::uint8_t>(static_cast<std::uint8_t>(e.dtype));
    w.integer<std::uint32_t>(static_cast<std::uint32_t>(e.shape.size()));
    for (Index d : e.shape) w.integer<std::int64_t>(d);
    const std::size_t at = w.out.size();
    w.bytes(e.bytes.data(), e.bytes.size());
    to_little_endian(w.out.data() + at, e.bytes.size() / dtype_size(e.dtype), dtype_size(e.dtype));
  }
  return w.out;
}

Archive Archive::deserialize(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  if (std::memcmp(r.take(4, "magic"), "WVMX", 4) != 0) throw CheckpointError("not a WVMX checkpoint (bad magic)");
  const auto version = r.integer<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version) + " (this build reads " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  Archive ar;
  const auto json_len = r.integer<std::uint64_t>("config length");
  const auto* json = r.take(static_cast<std::size_t>(json_len), "config");
  try {
    ar.config = nlohmann::json::parse(json, json + json_len);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint config is not valid JSON: ") + e.what());
  }
  const auto count = r.integer<std::uint32_t>("entry count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.integer<std::uint32_t>("name length");
    const auto* name = r.take(name_len, "name");
    ArchiveEntry e;
    e.dtype = static_cast<DType>(r.integer<std::uint8_t>("dtype"));
    const std::size_t width = dtype_size(e.dtype);
    const auto rank = r.integer<std::uint32_t>("rank");
    if (rank > 8) throw CheckpointError("implausible tensor rank " + std::to_string(rank));
    for (std::uint32_t k = 0; k < rank; ++k) {
      const auto d = r.integer<std::int64_t>("extent");
      if (d < 0) throw CheckpointError("negative extent in checkpoint");
      e.shape.push_back(d);
    }
    const auto n = static_cast<std::size_t>(numel(e.shape));
    if (n > bytes.size()) throw CheckpointError("checkpoint truncated while reading payload");
    const auto* payload = r.take(n * width, "payload");
    e.bytes.assign(payload, payload + n * width);
    to_little_endian(e.bytes.data(), n, width);  // the swap is its own inverse
    ar.entries_[std::string(reinterpret_cast<const char*>(name), name_len)] = std::move(e);
  }
  if (!r.done()) throw CheckpointError("trailing bytes after checkpoint entries");
  return ar;
}

void Archive::save(const fs::path& path) const {
  const auto bytes = serialize();
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw CheckpointError("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

Archive Archive::load(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

// ---------------------------------------------------------------- model / optimizer

namespace {

template <typename T>
void restore_tensors(const Archive& ar, const std::string& prefix, const std::vector<NamedTensor<T>>& items) {
  std::size_t stored = 0;
  for (const auto& [name, e] : ar.entries()) stored += name.rfind(prefix, 0) == 0;
  if (stored != items.size()) {
    throw CheckpointError("checkpoint holds " + std::to_string(stored) + " '" + prefix + "' tensors, model has " +
                          std::to_string(items.size()));
  }
  for (const auto& item : items) {
    Shape shape;
    const auto values = ar.get<T>(prefix + item.name, &shape);
    if (shape != item.tensor.shape()) {
      throw CheckpointError("checkpoint tensor '" + item.name + "' has shape " + to_string(shape) + ", model expects " +
                            to_string(item.tensor.shape()));
    }
    Tensor<T> t = item.tensor;
    std::copy(values.begin(), values.end(), t.mutable_data().begin());
  }
}

}  // namespace

template <typename T>
void store_model(Archive& ar, Model<T>& model) {
  const Registry<T> reg = model.registry();
  for (const auto& p : reg.parameters) {
    ar.put("param/" + p.name, p.tensor.shape(), std::vector<T>(p.tensor.data().begin(), p.tensor.data().end()));
  }
  for (const auto& b : reg.buffers) {
    ar.put("buffer/" + b.name, b.tensor.shape(), std::vector<T>(b.tensor.data().begin(), b.tensor.data().end()));
  }
  ar.put_text("rng/dropout", model.dropout_rng().serialize());
}

template <typename T>
void restore_model(const Archive& ar, Model<T>& model) {
  const Registry<T> reg = model.registry();
  restore_tensors(ar, "param/", reg.parameters);
  restore_tensors(ar, "buffer/", reg.buffers);
  model.dropout_rng().deserialize(ar.get_text("rng/dropout"));
}

template <typename T>
void store_optimizer(Archive& ar, const Adam<T>& opt) {
  const AdamState& s = opt.state();
  ar.put<std::uint64_t>("adam/step", {1}, {static_cast<std::uint64_t>(s.step)});
  for (std::size_t i = 0; i < s.m.size(); ++i) {
    ar.put("adam/m/" + std::to_string(i), {static_cast<Index>(s.m[i].size())}, s.m[i]);
    ar.put("adam/v/" + std::to_string(i), {static_cast<Index>(s.v[i].size())}, s.v[i]);
  }
}

template <typename T>
void restore_optimizer(const Archive& ar, Adam<T>& opt) {
  AdamState s;
  s.step = static_cast<std::int64_t>(ar.get<std::uint64_t>("adam/step").at(0));
  const std::size_t n = opt.state().m.size();
  for (std::size_t i = 0; i < n; ++i) {
    s.m.push_back(ar.get<double>("adam/m/" + std::to_string(i)));
    s.v.push_back(ar.get<double>("adam/v/" + std::to_string(i)));
  }
  if (ar.contains("adam/m/" + std::to_string(n))) throw CheckpointError("checkpoint has more optimizer slots than the model");
  opt.load_state(std::move(s));
}

template void Archive::put<float>(const std::string&, Shape, const std::vector<float>&);
template void Archive::put<double>(const std::string&, Shape, const std::vector<double>&);
template void Archive::put<std::uint64_t>(const std::string&, Shape, const std::vector<std::uint64_t>&);
template void Archive::put<std::uint8_t>(const std::string&, Shape, const std::vector<std::uint8_t>&);
template std::vector<float> Archive::get<float>(const std::string&, Shape*) const;
template std::vector<double> Archive::get<double>(const std::string&, Shape*) const;
template std::vector<std::uint64_t> Archive::get<std::uint64_t>(const std::string&, Shape*) const;
template std::vector<std::uint8_t> Archive::get<std::uint8_t>(const std::string&, Shape*) const;

template void store_model<float>(Archive&, Model<float>&);
template void store_model<double>(Archive&, Model<double>&);
template void restore_model<float>(const Archive&, Model<float>&);
template void restore_model<double>(const Archive&, Model<double>&);
template void store_optimizer<float>(Archive&, const Adam<float>&);
template void store_optimizer<double>(Archive&, const Adam<double>&);
template void restore_optimizer<float>(const Archive&, Adam<float>&);
template void restore_optimizer<double>(const Archive&, Adam<double>&);

}  // namespace wavemix
