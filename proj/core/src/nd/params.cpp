#include "eegldm/nd/params.hpp"

#include <openssl/evp.h>

#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace eegldm::nd {

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("SHA-256 digest failed");
  }
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) {
    os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  }
  return os.str();
}

template <typename T>
Var<T> ParameterTree<T>::add(const std::string& name, Tensor<T> init, bool trainable) {
  if (name.empty()) throw std::invalid_argument("parameter name must not be empty");
  if (entries_.count(name)) throw std::invalid_argument("duplicate parameter name '" + name + "'");
  if (!init.all_finite()) throw NumericError("non-finite initial value for '" + name + "'");
  Parameter<T> p{name, Var<T>(std::move(init), trainable), trainable};
  auto v = p.var;
  entries_.emplace(name, std::move(p));
  return v;
}

template <typename T>
const Parameter<T>& ParameterTree<T>::at(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::out_of_range("no parameter named '" + name + "'");
  return it->second;
}

template <typename T>
std::vector<std::string> ParameterTree<T>::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [k, v] : entries_) out.push_back(k);
  return out;
}

template <typename T>
std::size_t ParameterTree<T>::value_count() const {
  std::size_t n = 0;
  for (const auto& [k, v] : entries_) n += v.var.size();
  return n;
}

template <typename T>
void ParameterTree<T>::set_trainable(const std::string& prefix, bool trainable) {
  for (auto& [name, p] : entries_) {
    if (name.rfind(prefix, 0) != 0) continue;
    p.trainable = trainable;
    p.var.set_requires_grad(trainable);
    if (!trainable) p.var.zero_grad();
  }
}

template <typename T>
void ParameterTree<T>::zero_grad() {
  for (auto& [name, p] : entries_) p.var.zero_grad();
}

template <typename T>
void ParameterTree<T>::copy_values(const std::string& src_prefix, const std::string& dst_prefix) {
  std::size_t copied = 0;
  for (auto& [name, p] : entries_) {
    if (name.rfind(src_prefix, 0) != 0) continue;
    const std::string dst = dst_prefix + name.substr(src_prefix.size());
    auto it = entries_.find(dst);
    if (it == entries_.end()) throw std::out_of_range("copy_values: no destination '" + dst + "'");
    require_same_shape(p.var.shape(), it->second.var.shape(), "copy_values");
    it->second.var.mutable_value() = p.var.value();
    ++copied;
  }
  if (copied == 0) throw std::out_of_range("copy_values: nothing under '" + src_prefix + "'");
}

template <typename T>
void ParameterTree<T>::assign(const ParameterTree& other) {
  if (other.names() != names()) throw std::invalid_argument("assign: parameter name sets differ");
  for (auto& [name, p] : entries_) {
    const auto& src = other.at(name).var.value();
    require_same_shape(p.var.shape(), src.shape(), "assign");
    p.var.mutable_value() = src;
  }
}

template <typename T>
void ParameterTree<T>::assign(const TensorContainer& c, const std::string& prefix) {
  std::size_t matched = 0;
  for (auto& [name, p] : entries_) {
    if (name.rfind(prefix, 0) != 0) continue;
    if (!c.contains(name)) throw std::out_of_range("checkpoint lacks parameter '" + name + "'");
    const auto& src = c.get<T>(name);
    require_same_shape(p.var.shape(), src.shape(), ("checkpoint entry " + name).c_str());
    p.var.mutable_value() = src;
    ++matched;
  }
  if (matched == 0) throw std::out_of_range("checkpoint matched no parameters under '" + prefix + "'");
}

template <typename T>
TensorContainer ParameterTree<T>::to_container(const std::string& prefix) const {
  TensorContainer c;
  for (const auto& [name, p] : entries_) {
    if (name.rfind(prefix, 0) == 0) c.put(name, p.var.value());
  }
  return c;
}

template <typename T>
void ParameterTree<T>::save(const std::filesystem::path& path, const std::string& prefix) const {
  to_container(prefix).write(path);
}

template <typename T>
std::string ParameterTree<T>::digest(const std::string& prefix) const {
  return sha256_hex(to_container(prefix).serialize());
}

template class ParameterTree<float>;
template class ParameterTree<double>;

}  // namespace eegldm::nd
