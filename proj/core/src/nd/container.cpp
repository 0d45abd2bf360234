#include "eegldm/nd/container.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace eegldm::nd {
namespace {

constexpr char kMagic[8] = {'E', 'E', 'G', 'L', 'D', 'M', 'T', '1'};

template <typename U>
void append_le(std::string& out, U v) {
  char buf[sizeof(U)];
  std::memcpy(buf, &v, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(U));
  out.append(buf, sizeof(U));
}

template <typename U>
U read_le(const char* p) {
  char buf[sizeof(U)];
  std::memcpy(buf, p, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(U));
  U v;
  std::memcpy(&v, buf, sizeof(U));
  return v;
}

template <typename T>
const char* dtype_name() {
  return sizeof(T) == 4 ? "f32" : "f64";
}

}  // namespace

std::vector<std::string> TensorContainer::names() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : entries_) out.push_back(k);
  return out;
}

template <typename T>
const Tensor<T>& TensorContainer::get(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::out_of_range("container has no entry '" + name + "'");
  const auto* t = std::get_if<Tensor<T>>(&it->second);
  if (!t) {
    throw std::invalid_argument("container entry '" + name + "' is not " + dtype_name<T>());
  }
  return *t;
}

template const Tensor<float>& TensorContainer::get<float>(const std::string&) const;
template const Tensor<double>& TensorContainer::get<double>(const std::string&) const;

std::string TensorContainer::serialize() const {
  nlohmann::json manifest;
  manifest["format"] = "eegldm-tensors";
  manifest["version"] = 1;
  manifest["endianness"] = "little";
  manifest["meta"] = meta_;
  auto entries = nlohmann::json::array();
  std::string payload;
  for (const auto& [name, entry] : entries_) {
    std::visit(
        [&](const auto& t) {
          using T = typename std::decay_t<decltype(t)>::value_type;
          nlohmann::json e;
          e["name"] = name;
          e["dtype"] = dtype_name<T>();
          e["shape"] = t.shape();
          e["offset"] = payload.size();
          e["bytes"] = t.size() * sizeof(T);
          for (T v : t.values()) append_le(payload, v);
          entries.push_back(std::move(e));
        },
        entry);
  }
  manifest["entries"] = std::move(entries);
  const std::string text = manifest.dump(1);
  std::string out(kMagic, sizeof(kMagic));
  append_le<std::uint64_t>(out, text.size());
  out += text;
  out += payload;
  return out;
}

TensorContainer TensorContainer::deserialize(const std::string& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw CorruptContainerError("not a tensor container (bad magic)");
  }
  const auto mlen = read_le<std::uint64_t>(bytes.data() + 8);
  if (mlen > bytes.size() - 16) throw CorruptContainerError("manifest length exceeds file size");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + mlen);
  } catch (const nlohmann::json::exception& e) {
    throw CorruptContainerError(std::string("corrupt manifest: ") + e.what());
  }
  TensorContainer out;
  const std::size_t base = 16 + mlen;
  const std::size_t payload_size = bytes.size() - base;
  try {
    if (manifest.at("endianness") != "little") throw CorruptContainerError("unsupported endianness");
    out.meta_ = manifest.value("meta", nlohmann::json::object());
    std::size_t expected = 0;
    for (const auto& e : manifest.at("entries")) {
      const std::string name = e.at("name");
      const std::string dtype = e.at("dtype");
      const Shape shape = e.at("shape").get<Shape>();
      const std::size_t offset = e.at("offset");
      const std::size_t nbytes = e.at("bytes");
      const std::size_t width = dtype == "f32" ? 4 : dtype == "f64" ? 8 : 0;
      if (width == 0) throw CorruptContainerError("unknown dtype '" + dtype + "' for " + name);
      if (shape.empty() || shape_size(shape) * width != nbytes) {
        throw CorruptContainerError("entry '" + name + "' shape " + shape_to_string(shape) +
                                    " needs " + std::to_string(shape_size(shape) * width) +
                                    " bytes, manifest says " + std::to_string(nbytes));
      }
      if (offset != expected || offset + nbytes > payload_size) {
        throw CorruptContainerError("entry '" + name + "' payload out of bounds (truncated?)");
      }
      expected += nbytes;
      const char* p = bytes.data() + base + offset;
      const std::size_t count = shape_size(shape);
      if (width == 4) {
        std::vector<float> v(count);
        for (std::size_t i = 0; i < count; ++i) v[i] = read_le<float>(p + 4 * i);
        out.entries_[name] = Tensor<float>(shape, std::move(v));
      } else {
        std::vector<double> v(count);
        for (std::size_t i = 0; i < count; ++i) v[i] = read_le<double>(p + 8 * i);
        out.entries_[name] = Tensor<double>(shape, std::move(v));
      }
    }
    if (expected != payload_size) {
      throw CorruptContainerError("payload is " + std::to_string(payload_size) +
                                  " bytes, manifest accounts for " + std::to_string(expected));
    }
  } catch (const nlohmann::json::exception& e) {
    throw CorruptContainerError(std::string("corrupt manifest: ") + e.what());
  } catch (const ShapeError& e) {
    throw CorruptContainerError(std::string("corrupt manifest: ") + e.what());
  }
  return out;
}

void TensorContainer::write(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  const std::string bytes = serialize();
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

TensorContainer TensorContainer::read(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return deserialize(ss.str());
}

}  // namespace eegldm::nd
