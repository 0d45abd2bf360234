#pragma once

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "eegldm/nd/tensor.hpp"

namespace eegldm::nd {

class CorruptContainerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Named tensors plus free-form metadata in one file:
//
//   bytes 0..7   magic "EEGLDMT1"
//   bytes 8..15  manifest length M, uint64 little-endian
//   next M bytes manifest JSON: {"endianness":"little","entries":[{name,dtype,shape,offset,bytes}],
//                                "meta":{...}}
//   remainder    payload; each entry's raw little-endian values at its offset
//
// The file size must equal 16 + M + payload bytes exactly.
class TensorContainer {
 public:
  using Entry = std::variant<Tensor<float>, Tensor<double>>;

  void put(const std::string& name, Tensor<float> t) { entries_[name] = std::move(t); }
  void put(const std::string& name, Tensor<double> t) { entries_[name] = std::move(t); }

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  std::vector<std::string> names() const;
  std::size_t entry_count() const { return entries_.size(); }

  // Throws if the entry is missing or stored with a different dtype.
  template <typename T>
  const Tensor<T>& get(const std::string& name) const;

  nlohmann::json& meta() { return meta_; }
  const nlohmann::json& meta() const { return meta_; }

  std::string serialize() const;
  static TensorContainer deserialize(const std::string& bytes);

  void write(const std::filesystem::path& path) const;
  static TensorContainer read(const std::filesystem::path& path);

 private:
  std::map<std::string, Entry> entries_;
  nlohmann::json meta_ = nlohmann::json::object();
};

}  // namespace eegldm::nd
