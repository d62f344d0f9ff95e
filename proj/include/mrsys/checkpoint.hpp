#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mrsys/tensor.hpp"

namespace mrsys {

/// Named-tensor container stored in the MRSYS1 binary format:
///   "MRSYS1" | u32 record count | records...
///   record = u32 name length | name bytes | u32 rank | u64 dims[rank] | f64 payload
/// All integers and floats little-endian.
class Checkpoint {
 public:
  void put(const std::string& name, Tensor tensor);
  void put_scalar(const std::string& name, double value);
  void put(const std::string& prefix, const ParamList& params);

  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
  const Tensor& get(const std::string& name) const;
  /// Throws a ValidationError naming the tensor when the stored shape differs.
  const Tensor& get(const std::string& name, const std::vector<std::size_t>& shape) const;
  double scalar(const std::string& name) const;
  /// Copies stored values into every parameter, checking shapes.
  void restore(const std::string& prefix, const ParamList& params) const;

  const std::map<std::string, Tensor>& tensors() const { return tensors_; }

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

 private:
  std::map<std::string, Tensor> tensors_;
};

}  // namespace mrsys
