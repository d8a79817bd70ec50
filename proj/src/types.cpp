#include "capro/types.hpp"

#include <algorithm>
#include <string>

#include "capro/errors.hpp"

namespace capro {

std::string_view to_string(Corruption c) {
  switch (c) {
    case Corruption::clean:
      return "clean";
    case Corruption::flip:
      return "flip";
    case Corruption::ood:
      return "ood";
    case Corruption::semantic:
      return "semantic";
  }
  return "clean";
}

Corruption corruption_from_string(std::string_view s) {
  if (s == "clean") return Corruption::clean;
  if (s == "flip") return Corruption::flip;
  if (s == "ood") return Corruption::ood;
  if (s == "semantic") return Corruption::semantic;
  throw DataError("unknown corruption kind '" + std::string(s) + "'");
}

Matrix stack_inputs(const std::vector<Instance>& instances) {
  if (instances.empty()) {
    return {};
  }
  Matrix m(instances.size(), instances.front().input.size());
  for (std::size_t i = 0; i < instances.size(); ++i) {
    std::copy(instances[i].input.begin(), instances[i].input.end(), m.row(i).begin());
  }
  return m;
}

Matrix stack_texts(const std::vector<Instance>& instances, std::size_t text_dim) {
  Matrix m(instances.size(), text_dim);
  for (std::size_t i = 0; i < instances.size(); ++i) {
    if (instances[i].text) {
      std::copy(instances[i].text->begin(), instances[i].text->end(), m.row(i).begin());
    }
  }
  return m;
}

}  // namespace capro
