#include "capro/dataset_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>

#include "capro/errors.hpp"

namespace capro {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr char kMatrixMagic[4] = {'C', 'A', 'P', 'D'};
constexpr std::uint32_t kMatrixVersion = 1;
constexpr int kManifestVersion = 1;
constexpr std::size_t kHeaderBytes = 4 + 4 + 8 + 8;

static_assert(std::endian::native == std::endian::little, "little-endian host required");

template <class T>
void put(std::string& out, T value) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  out.append(bytes, sizeof(T));
}

template <class T>
T take(const std::string& in, std::size_t& offset, const fs::path& path, const char* field) {
  if (offset + sizeof(T) > in.size()) {
    throw DataError(path.string() + ": truncated " + field + " at byte offset " +
                    std::to_string(offset));
  }
  T value;
  std::memcpy(&value, in.data() + offset, sizeof(T));
  offset += sizeof(T);
  return value;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw DataError(path.string() + ": cannot open");
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json parse_json_file(const fs::path& path) {
  const std::string text = slurp(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw DataError(path.string() + ": malformed JSON at byte offset " + std::to_string(e.byte));
  }
}

template <class T>
T field(const json& j, const char* key, const std::string& where) {
  auto it = j.find(key);
  if (it == j.end()) {
    throw DataError(where + ": missing field '" + key + "'");
  }
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw DataError(where + ": field '" + key + "' has the wrong type");
  }
}

/// Required field that may hold null.
template <class T>
std::optional<T> nullable_field(const json& j, const char* key, const std::string& where) {
  const json value = field<json>(j, key, where);
  if (value.is_null()) {
    return std::nullopt;
  }
  try {
    return value.get<T>();
  } catch (const json::exception&) {
    throw DataError(where + ": field '" + key + "' has the wrong type");
  }
}

}  // namespace

void write_file_atomic(const fs::path& path, std::string_view contents) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw DataError(tmp.string() + ": cannot open for writing");
    }
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) {
      throw DataError(tmp.string() + ": write failed");
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp);
    throw DataError(path.string() + ": rename failed: " + ec.message());
  }
}

void write_matrix_file(const fs::path& path, const Matrix& m) {
  std::string out;
  out.reserve(kHeaderBytes + m.values().size() * sizeof(float));
  out.append(kMatrixMagic, 4);
  put<std::uint32_t>(out, kMatrixVersion);
  put<std::uint64_t>(out, m.rows());
  put<std::uint64_t>(out, m.cols());
  for (double v : m.values()) {
    put<float>(out, static_cast<float>(v));
  }
  write_file_atomic(path, out);
}

Matrix read_matrix_file(const fs::path& path) {
  const std::string in = slurp(path);
  if (in.size() < 4 || std::memcmp(in.data(), kMatrixMagic, 4) != 0) {
    throw DataError(path.string() + ": bad magic at byte offset 0");
  }
  std::size_t offset = 4;
  const auto version = take<std::uint32_t>(in, offset, path, "version");
  if (version != kMatrixVersion) {
    throw DataError(path.string() + ": unsupported version " + std::to_string(version) +
                    " at byte offset 4");
  }
  const auto rows = take<std::uint64_t>(in, offset, path, "row count");
  const auto cols = take<std::uint64_t>(in, offset, path, "column count");
  if (cols != 0 && rows > (in.size() - kHeaderBytes) / sizeof(float) / cols) {
    throw DataError(path.string() + ": truncated payload at byte offset " +
                    std::to_string(in.size()));
  }
  const std::size_t expected = kHeaderBytes + rows * cols * sizeof(float);
  if (in.size() < expected) {
    throw DataError(path.string() + ": truncated payload at byte offset " +
                    std::to_string(in.size()));
  }
  if (in.size() > expected) {
    throw DataError(path.string() + ": trailing bytes at byte offset " + std::to_string(expected));
  }
  Matrix m(rows, cols);
  for (double& v : m.values()) {
    v = take<float>(in, offset, path, "value");
  }
  return m;
}

void write_dataset(const fs::path& dir, const Dataset& data, const TextualPrototypes& protos,
                   const std::optional<GeneratorSpec>& generator) {
  fs::create_directories(dir);
  std::vector<Instance> all = data.train;
  all.insert(all.end(), data.test.begin(), data.test.end());
  write_matrix_file(dir / "inputs.capd", stack_inputs(all));
  write_matrix_file(dir / "texts.capd", stack_texts(all, data.text_dim));
  write_matrix_file(dir / "prototypes.capd", protos.embeddings);

  nlohmann::ordered_json m;
  m["format"] = "capro-dataset";
  m["version"] = kManifestVersion;
  m["num_classes"] = data.num_classes;
  m["input_dim"] = data.input_dim;
  m["text_dim"] = data.text_dim;
  m["num_train"] = data.train.size();
  m["num_test"] = data.test.size();
  m["prototype_provenance"] = protos.provenance;
  if (generator) {
    m["generator"] = to_json(*generator);
  }
  if (!data.corruption.empty()) {
    const CorruptionCounts c = count_corruption(data);
    m["corruption_counts"] = {{"clean", c.clean},
                              {"flip", c.flip},
                              {"ood", c.ood},
                              {"semantic", c.semantic},
                              {"missing_text", c.missing_text}};
  }
  auto instances = nlohmann::ordered_json::array();
  auto describe = [&](const Instance& inst, Split split, std::optional<Corruption> kind) {
    nlohmann::ordered_json e;
    e["id"] = inst.id;
    e["split"] = split == Split::train ? "train" : "test";
    e["web_label"] = inst.web_label;
    e["true_label"] = inst.true_label == kUnknownLabel ? json(nullptr) : json(inst.true_label);
    e["corruption"] = kind ? json(std::string(to_string(*kind))) : json(nullptr);
    e["text_missing"] = !inst.text.has_value();
    instances.push_back(std::move(e));
  };
  for (std::size_t i = 0; i < data.train.size(); ++i) {
    describe(data.train[i], Split::train,
             data.corruption.empty() ? std::nullopt : std::optional(data.corruption[i]));
  }
  for (const Instance& inst : data.test) {
    describe(inst, Split::test, std::nullopt);
  }
  m["instances"] = std::move(instances);
  write_file_atomic(dir / "manifest.json", m.dump(2) + "\n");
}

LoadedDataset read_dataset(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  const json m = parse_json_file(manifest_path);
  const std::string where = manifest_path.string();
  if (!m.is_object() || field<std::string>(m, "format", where) != "capro-dataset") {
    throw DataError(where + ": not a dataset manifest");
  }
  if (field<int>(m, "version", where) != kManifestVersion) {
    throw DataError(where + ": unsupported manifest version");
  }
  LoadedDataset out;
  Dataset& data = out.dataset;
  data.num_classes = field<std::size_t>(m, "num_classes", where);
  data.input_dim = field<std::size_t>(m, "input_dim", where);
  data.text_dim = field<std::size_t>(m, "text_dim", where);
  const auto num_train = field<std::size_t>(m, "num_train", where);
  const auto num_test = field<std::size_t>(m, "num_test", where);
  if (data.num_classes < 1) {
    throw DataError(where + ": num_classes must be positive");
  }
  if (auto it = m.find("generator"); it != m.end()) {
    try {
      out.generator = generator_spec_from_json(*it);
    } catch (const ConfigError& e) {
      throw DataError(where + ": " + e.what());
    }
  }

  const Matrix inputs = read_matrix_file(dir / "inputs.capd");
  const Matrix texts = read_matrix_file(dir / "texts.capd");
  out.prototypes.embeddings = read_matrix_file(dir / "prototypes.capd");
  out.prototypes.provenance = field<std::string>(m, "prototype_provenance", where);
  const std::size_t total = num_train + num_test;
  if (inputs.rows() != total || inputs.cols() != data.input_dim) {
    throw DataError((dir / "inputs.capd").string() + ": shape does not match the manifest");
  }
  if (texts.rows() != total || texts.cols() != data.text_dim) {
    throw DataError((dir / "texts.capd").string() + ": shape does not match the manifest");
  }
  if (out.prototypes.embeddings.rows() != data.num_classes ||
      out.prototypes.embeddings.cols() != data.text_dim) {
    throw DataError((dir / "prototypes.capd").string() + ": shape does not match the manifest");
  }
  out.prototypes.validate();

  const json list = field<json>(m, "instances", where);
  if (!list.is_array() || list.size() != total) {
    throw DataError(where + ": instance list does not match num_train + num_test");
  }
  bool has_corruption = false;
  for (std::size_t r = 0; r < total; ++r) {
    const json& e = list[r];
    const std::string at = where + ": instances[" + std::to_string(r) + "]";
    Instance inst;
    inst.id = field<std::size_t>(e, "id", at);
    inst.web_label = field<ClassId>(e, "web_label", at);
    if (!is_class(inst.web_label, data.num_classes)) {
      throw DataError(at + ": web_label out of range");
    }
    const auto truth = nullable_field<ClassId>(e, "true_label", at);
    inst.true_label = truth.value_or(kUnknownLabel);
    if (inst.true_label != kUnknownLabel && !is_class(inst.true_label, data.num_classes)) {
      throw DataError(at + ": true_label out of range");
    }
    inst.current_label = inst.web_label;
    const auto x = inputs.row(r);
    inst.input.assign(x.begin(), x.end());
    if (!field<bool>(e, "text_missing", at)) {
      const auto s = texts.row(r);
      inst.text = Vector(s.begin(), s.end());
    }
    const bool is_train = field<std::string>(e, "split", at) == "train";
    if (is_train != (r < num_train)) {
      throw DataError(at + ": split out of order");
    }
    if (is_train) {
      const auto kind = nullable_field<std::string>(e, "corruption", at);
      if (kind) {
        if (r > 0 && !has_corruption) {
          throw DataError(at + ": corruption recorded for only some instances");
        }
        has_corruption = true;
        try {
          data.corruption.push_back(corruption_from_string(*kind));
        } catch (const Error& err) {
          throw DataError(at + ": " + err.what());
        }
      } else if (has_corruption) {
        throw DataError(at + ": corruption recorded for only some instances");
      }
      data.train.push_back(std::move(inst));
    } else {
      data.test.push_back(std::move(inst));
    }
  }
  return out;
}

}  // namespace capro
