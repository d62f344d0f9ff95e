#include "mrsys/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "mrsys/error.hpp"

namespace mrsys {

namespace {

constexpr char kMagic[] = {'M', 'R', 'S', 'Y', 'S', '1'};

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

template <typename T>
void put_raw(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  Reader(const std::string& bytes, std::string source) : bytes_(bytes), source_(std::move(source)) {}

  template <typename T>
  T take() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string take_string(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n)
      throw ValidationError("truncated checkpoint " + source_ + ": expected " +
                            std::to_string(pos_ + n) + " bytes, got " +
                            std::to_string(bytes_.size()));
  }
  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

}  // namespace

void Checkpoint::put(const std::string& name, Tensor tensor) { tensors_[name] = std::move(tensor); }

void Checkpoint::put_scalar(const std::string& name, double value) {
  tensors_[name] = Tensor({1}, value);
}

void Checkpoint::put(const std::string& prefix, const ParamList& params) {
  for (const auto& p : params) tensors_[prefix + p.name] = *p.value;
}

const Tensor& Checkpoint::get(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw ValidationError("checkpoint has no tensor '" + name + "'");
  return it->second;
}

const Tensor& Checkpoint::get(const std::string& name, const std::vector<std::size_t>& shape) const {
  const Tensor& t = get(name);
  if (t.shape() != shape) {
    auto fmt = [](const std::vector<std::size_t>& s) {
      std::string out = "[";
      for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
      return out + "]";
    };
    throw ValidationError("dimension mismatch for '" + name + "': stored " + fmt(t.shape()) +
                          ", expected " + fmt(shape));
  }
  return t;
}

double Checkpoint::scalar(const std::string& name) const { return get(name, {1})[0]; }

void Checkpoint::restore(const std::string& prefix, const ParamList& params) const {
  for (const auto& p : params) *p.value = get(prefix + p.name, p.value->shape());
}

void Checkpoint::save(const std::filesystem::path& path) const {
  std::string out(kMagic, sizeof kMagic);
  put_raw<std::uint32_t>(out, static_cast<std::uint32_t>(tensors_.size()));
  for (const auto& [name, t] : tensors_) {
    put_raw<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_raw<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) put_raw<std::uint64_t>(out, d);
    for (double v : t.data()) put_raw<double>(out, v);
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw RuntimeError("cannot write checkpoint " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw RuntimeError("write failed for " + path.string());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot open checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (bytes.size() < sizeof kMagic || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0)
    throw ValidationError(path.string() + " is not an MRSYS1 container");

  Reader in(bytes, path.string());
  in.take_string(sizeof kMagic);
  Checkpoint ckpt;
  const auto count = in.take<std::uint32_t>();
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto name_len = in.take<std::uint32_t>();
    std::string name = in.take_string(name_len);
    const auto rank = in.take<std::uint32_t>();
    std::vector<std::size_t> shape(rank);
    std::size_t n = 1;
    for (auto& d : shape) {
      d = static_cast<std::size_t>(in.take<std::uint64_t>());
      n *= d;
    }
    in.need(n * sizeof(double));
    std::vector<double> data(n);
    for (auto& v : data) v = in.take<double>();
    ckpt.tensors_[std::move(name)] = Tensor(std::move(shape), std::move(data));
  }
  if (!in.at_end()) throw ValidationError(path.string() + ": trailing bytes after last record");
  return ckpt;
}

}  // namespace mrsys
