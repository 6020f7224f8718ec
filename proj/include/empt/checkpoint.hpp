#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "empt/tensor.hpp"

namespace empt {

// Single-file tensor container:
//   u64 little-endian manifest length | manifest (JSON text) | raw values
// The manifest lists {name, shape, dtype, offset, nbytes} per tensor, with
// offsets relative to the start of the raw section, plus a free-form "meta"
// object. Values are stored little-endian as "f32" or "f64".
class Checkpoint {
 public:
  struct Entry {
    Shape shape;
    std::string dtype;
    std::vector<std::uint8_t> bytes;
  };

  template <class T>
  void put(const std::string& name, const Tensor<T>& t);
  template <class T>
  Tensor<T> get(const std::string& name) const;  // converts between f32/f64
  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  std::vector<std::string> names() const;  // insertion order

  nlohmann::json& meta() { return meta_; }
  const nlohmann::json& meta() const { return meta_; }

  // Writes to a temporary file and renames it into place, so an existing
  // checkpoint at `path` is never left half-written.
  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);

  std::string serialize() const;
  static Checkpoint deserialize(const std::string& bytes);

 private:
  std::vector<std::string> order_;
  std::map<std::string, Entry> entries_;
  nlohmann::json meta_ = nlohmann::json::object();
};

std::string read_file(const std::string& path);
void write_file_atomic(const std::string& path, const std::string& bytes);

}  // namespace empt
