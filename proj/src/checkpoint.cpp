#include "capro/checkpoint.hpp"

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "capro/dataset_io.hpp"
#include "capro/errors.hpp"

namespace capro {
namespace {

namespace fs = std::filesystem;

constexpr char kMagic[4] = {'C', 'A', 'P', 'M'};
constexpr std::uint32_t kVersion = 1;

struct Tensor {
  std::vector<std::uint64_t> dims;
  std::vector<double> values;
};

template <class T>
void put(std::string& out, T value) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  out.append(bytes, sizeof(T));
}

void put_tensor(std::string& out, const std::string& name, std::vector<std::uint64_t> dims,
                std::span<const double> values) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
  out.append(name);
  put<std::uint64_t>(out, dims.size());
  for (std::uint64_t d : dims) {
    put<std::uint64_t>(out, d);
  }
  for (double v : values) {
    put<double>(out, v);
  }
}

class Reader {
 public:
  Reader(std::string data, fs::path path) : data_(std::move(data)), path_(std::move(path)) {}

  bool done() const { return offset_ == data_.size(); }
  std::size_t offset() const { return offset_; }

  template <class T>
  T take(const char* what) {
    need(sizeof(T), what);
    T value;
    std::memcpy(&value, data_.data() + offset_, sizeof(T));
    offset_ += sizeof(T);
    return value;
  }

  std::string take_bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s = data_.substr(offset_, n);
    offset_ += n;
    return s;
  }

  [[noreturn]] void fail(const std::string& msg, std::size_t at) const {
    throw DataError(path_.string() + ": " + msg + " at byte offset " + std::to_string(at));
  }

 private:
  void need(std::size_t n, const char* what) const {
    if (n > data_.size() - offset_) {
      fail(std::string("truncated ") + what, offset_);
    }
  }

  std::string data_;
  fs::path path_;
  std::size_t offset_ = 0;
};

void add_dense(std::string& out, const std::string& prefix, const Dense& layer) {
  put_tensor(out, prefix + ".weight", {layer.weight.rows(), layer.weight.cols()},
             layer.weight.values());
  put_tensor(out, prefix + ".bias", {layer.bias.size()}, layer.bias);
}

void fill_dense(std::map<std::string, Tensor>& tensors, const std::string& prefix, Dense& layer,
                const fs::path& path) {
  auto take = [&](const std::string& name, std::size_t rank) {
    auto it = tensors.find(name);
    if (it == tensors.end()) {
      throw DataError(path.string() + ": missing tensor '" + name + "'");
    }
    if (it->second.dims.size() != rank) {
      throw DataError(path.string() + ": tensor '" + name + "' has rank " +
                      std::to_string(it->second.dims.size()));
    }
    Tensor t = std::move(it->second);
    tensors.erase(it);
    return t;
  };
  Tensor w = take(prefix + ".weight", 2);
  Tensor b = take(prefix + ".bias", 1);
  if (b.dims[0] != w.dims[0]) {
    throw DataError(path.string() + ": tensor '" + prefix + ".bias' does not match its weight");
  }
  layer.weight = Matrix(w.dims[0], w.dims[1]);
  std::copy(w.values.begin(), w.values.end(), layer.weight.values().begin());
  layer.bias = std::move(b.values);
}

}  // namespace

void save_checkpoint(const fs::path& path, const Checkpoint& checkpoint) {
  std::string out(kMagic, 4);
  put<std::uint32_t>(out, kVersion);
  for_each_layer(checkpoint.params.query, [&](std::string_view name, const Dense& layer, LayerGroup) {
    add_dense(out, "query." + std::string(name), layer);
  });
  for_each_layer(checkpoint.params.key, [&](std::string_view name, const Dense& layer, LayerGroup) {
    add_dense(out, "key." + std::string(name), layer);
  });
  if (checkpoint.prototypes) {
    const Matrix& p = *checkpoint.prototypes;
    put_tensor(out, "prototypes", {p.rows(), p.cols()}, p.values());
  }
  write_file_atomic(path, out);
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw DataError(path.string() + ": cannot open");
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  Reader r(ss.str(), path);
  if (r.take_bytes(4, "magic") != std::string(kMagic, 4)) {
    r.fail("bad magic", 0);
  }
  if (const auto v = r.take<std::uint32_t>("version"); v != kVersion) {
    r.fail("unsupported version " + std::to_string(v), 4);
  }
  std::map<std::string, Tensor> tensors;
  while (!r.done()) {
    const std::size_t start = r.offset();
    const auto name_len = r.take<std::uint32_t>("name length");
    std::string name = r.take_bytes(name_len, "name");
    const auto rank = r.take<std::uint64_t>("rank");
    if (rank > 8) {
      r.fail("implausible rank " + std::to_string(rank), start);
    }
    Tensor t;
    std::uint64_t count = 1;
    for (std::uint64_t d = 0; d < rank; ++d) {
      t.dims.push_back(r.take<std::uint64_t>("dimension"));
      if (t.dims.back() != 0 && count > (std::uint64_t{1} << 40) / t.dims.back()) {
        r.fail("implausible tensor size", start);
      }
      count *= t.dims.back();
    }
    t.values.resize(count);
    for (double& v : t.values) {
      v = r.take<double>("tensor data");
    }
    if (!tensors.emplace(name, std::move(t)).second) {
      r.fail("duplicate tensor '" + name + "'", start);
    }
  }
  Checkpoint c;
  for_each_layer(c.params.query, [&](std::string_view name, Dense& layer, LayerGroup) {
    fill_dense(tensors, "query." + std::string(name), layer, path);
  });
  for_each_layer(c.params.key, [&](std::string_view name, Dense& layer, LayerGroup) {
    fill_dense(tensors, "key." + std::string(name), layer, path);
  });
  if (auto it = tensors.find("prototypes"); it != tensors.end()) {
    if (it->second.dims.size() != 2) {
      throw DataError(path.string() + ": tensor 'prototypes' must have rank 2");
    }
    Matrix p(it->second.dims[0], it->second.dims[1]);
    std::copy(it->second.values.begin(), it->second.values.end(), p.values().begin());
    c.prototypes = std::move(p);
    tensors.erase(it);
  }
  if (!tensors.empty()) {
    throw DataError(path.string() + ": unexpected tensor '" + tensors.begin()->first + "'");
  }
  return c;
}

}  // namespace capro
