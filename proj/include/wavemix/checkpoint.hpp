#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "wavemix/model.hpp"
#include "wavemix/optim.hpp"

namespace wavemix {

// Layout (all integers little-endian):
//   "WVMX" | u32 version | u64 json_len | json (UTF-8 run config)
//   u32 count | count x { u32 name_len | name | u8 dtype | u32 rank | i64 extents[rank] | payload }
// dtype: 1 = f32, 2 = f64, 3 = u64, 4 = u8.

inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class DType : std::uint8_t { f32 = 1, f64 = 2, u64 = 3, u8 = 4 };

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ArchiveEntry {
  DType dtype = DType::f32;
  Shape shape;
  std::vector<std::uint8_t> bytes;  // host-order element storage
};

/// Named typed arrays plus a JSON blob; entries are written in name order.
class Archive {
 public:
  nlohmann::json config = nlohmann::json::object();

  template <typename V>
  void put(const std::string& name, Shape shape, const std::vector<V>& values);
  void put_text(const std::string& name, const std::string& text);

  template <typename V>
  std::vector<V> get(const std::string& name, Shape* shape = nullptr) const;
  std::string get_text(const std::string& name) const;

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  const std::map<std::string, ArchiveEntry>& entries() const { return entries_; }

  void save(const std::filesystem::path& path) const;
  static Archive load(const std::filesystem::path& path);

  std::vector<std::uint8_t> serialize() const;
  static Archive deserialize(const std::vector<std::uint8_t>& bytes);

 private:
  std::map<std::string, ArchiveEntry> entries_;
};

/// "param/<name>", "buffer/<name>" and the dropout RNG state.
template <typename T>
void store_model(Archive& ar, Model<T>& model);
/// Every stored tensor must exist in the model with the same shape and dtype.
template <typename T>
void restore_model(const Archive& ar, Model<T>& model);

template <typename T>
void store_optimizer(Archive& ar, const Adam<T>& opt);
template <typename T>
void restore_optimizer(const Archive& ar, Adam<T>& opt);

}  // namespace wavemix
