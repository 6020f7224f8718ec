#include "empt/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "empt/error.hpp"

namespace empt {
namespace {

template <class T>
constexpr const char* dtype_name() {
  return sizeof(T) == 4 ? "f32" : "f64";
}

void to_little_endian(std::uint8_t* p, std::size_t width, std::size_t count) {
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < count; ++i) std::reverse(p + i * width, p + (i + 1) * width);
  }
}

template <class Src, class Dst>
std::vector<Dst> decode(const std::vector<std::uint8_t>& bytes) {
  std::vector<std::uint8_t> copy = bytes;
  to_little_endian(copy.data(), sizeof(Src), copy.size() / sizeof(Src));
  std::vector<Src> raw(copy.size() / sizeof(Src));
  std::memcpy(raw.data(), copy.data(), copy.size());
  return std::vector<Dst>(raw.begin(), raw.end());
}

}  // namespace

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::string& path, const std::string& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

template <class T>
void Checkpoint::put(const std::string& name, const Tensor<T>& t) {
  Entry e;
  e.shape = t.shape();
  e.dtype = dtype_name<T>();
  e.bytes.resize(t.numel() * sizeof(T));
  std::memcpy(e.bytes.data(), t.data().data(), e.bytes.size());
  to_little_endian(e.bytes.data(), sizeof(T), t.numel());
  if (!entries_.count(name)) order_.push_back(name);
  entries_[name] = std::move(e);
}

template <class T>
Tensor<T> Checkpoint::get(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw DataError("checkpoint has no tensor '" + name + "'");
  const Entry& e = it->second;
  std::vector<T> values = e.dtype == "f32" ? decode<float, T>(e.bytes) : decode<double, T>(e.bytes);
  return Tensor<T>(e.shape, std::move(values));
}

std::vector<std::string> Checkpoint::names() const { return order_; }

std::string Checkpoint::serialize() const {
  nlohmann::json manifest;
  manifest["format"] = "empt-checkpoint";
  manifest["version"] = 1;
  manifest["meta"] = meta_;
  auto tensors = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& name : order_) {
    const Entry& e = entries_.at(name);
    tensors.push_back({{"name", name},
                       {"shape", e.shape},
                       {"dtype", e.dtype},
                       {"offset", offset},
                       {"nbytes", e.bytes.size()}});
    offset += e.bytes.size();
  }
  manifest["tensors"] = std::move(tensors);
  const std::string header = manifest.dump();

  std::string out(8, '\0');
  std::uint64_t len = header.size();
  for (int i = 0; i < 8; ++i) out[i] = static_cast<char>((len >> (8 * i)) & 0xff);
  out += header;
  out.reserve(out.size() + offset);
  for (const auto& name : order_) {
    const auto& b = entries_.at(name).bytes;
    out.append(reinterpret_cast<const char*>(b.data()), b.size());
  }
  return out;
}

Checkpoint Checkpoint::deserialize(const std::string& bytes) {
  if (bytes.size() < 8) throw DataError("checkpoint truncated before header length");
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(bytes[i])) << (8 * i);
  if (bytes.size() < 8 + len) throw DataError("checkpoint truncated inside manifest");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(len));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint manifest: ") + e.what());
  }
  Checkpoint ck;
  ck.meta_ = manifest.value("meta", nlohmann::json::object());
  const std::size_t base = 8 + len;
  for (const auto& t : manifest.at("tensors")) {
    Entry e;
    e.shape = t.at("shape").get<Shape>();
    e.dtype = t.at("dtype").get<std::string>();
    if (e.dtype != "f32" && e.dtype != "f64") throw DataError("unsupported dtype " + e.dtype);
    const std::size_t off = t.at("offset").get<std::size_t>();
    const std::size_t nb = t.at("nbytes").get<std::size_t>();
    const std::size_t width = e.dtype == "f32" ? 4 : 8;
    if (nb != shape_numel(e.shape) * width) throw DataError("size mismatch for " + t.at("name").get<std::string>());
    if (base + off + nb > bytes.size()) throw DataError("checkpoint truncated inside tensor data");
    e.bytes.assign(bytes.begin() + static_cast<std::ptrdiff_t>(base + off),
                   bytes.begin() + static_cast<std::ptrdiff_t>(base + off + nb));
    const auto name = t.at("name").get<std::string>();
    ck.order_.push_back(name);
    ck.entries_[name] = std::move(e);
  }
  return ck;
}

void Checkpoint::save(const std::string& path) const { write_file_atomic(path, serialize()); }

Checkpoint Checkpoint::load(const std::string& path) { return deserialize(read_file(path)); }

template void Checkpoint::put<float>(const std::string&, const Tensor<float>&);
template void Checkpoint::put<double>(const std::string&, const Tensor<double>&);
template Tensor<float> Checkpoint::get<float>(const std::string&) const;
template Tensor<double> Checkpoint::get<double>(const std::string&) const;

}  // namespace empt
