#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "eegldm/nd/autograd.hpp"
#include "eegldm/nd/container.hpp"

namespace eegldm::nd {

template <typename T>
struct Parameter {
  std::string name;
  Var<T> var;  // leaf node; requires_grad mirrors trainable
  bool trainable = true;
};

// Named, ordered collection of parameters shared by reference with the layers
// that registered them. Names are unique slash- or dot-separated paths.
template <typename T>
class ParameterTree {
 public:
  Var<T> add(const std::string& name, Tensor<T> init, bool trainable = true);

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  const Parameter<T>& at(const std::string& name) const;
  Var<T> var(const std::string& name) const { return at(name).var; }
  std::vector<std::string> names() const;
  std::size_t size() const { return entries_.size(); }
  std::size_t value_count() const;

  // Applies to every parameter whose name starts with prefix.
  void set_trainable(const std::string& prefix, bool trainable);
  void zero_grad();

  // Copies values for names under src_prefix into dst_prefix (same suffixes, same shapes).
  void copy_values(const std::string& src_prefix, const std::string& dst_prefix);
  // Overwrites values from another tree with an identical name set and shapes.
  void assign(const ParameterTree& other);
  // Overwrites every parameter under prefix; each must be present in the container.
  void assign(const TensorContainer& c, const std::string& prefix = "");

  // Restricted to names starting with prefix (empty = all).
  TensorContainer to_container(const std::string& prefix = "") const;
  void save(const std::filesystem::path& path, const std::string& prefix = "") const;
  // SHA-256 hex digest of the serialized container (empty meta).
  std::string digest(const std::string& prefix = "") const;

  template <typename F>
  void for_each(F&& f) {
    for (auto& [name, p] : entries_) f(p);
  }
  template <typename F>
  void for_each(F&& f) const {
    for (const auto& [name, p] : entries_) f(p);
  }

 private:
  std::map<std::string, Parameter<T>> entries_;
};

std::string sha256_hex(const std::string& bytes);

extern template class ParameterTree<float>;
extern template class ParameterTree<double>;

}  // namespace eegldm::nd
