#pragma once

#include <string>
#include <utility>
#include <vector>

#include "datcft/network.hpp"

namespace datcft {

// Versioned little-endian container: magic, a JSON metadata blob, then named
// float64 tensors.  Round trips are bit-exact.
struct NamedTensorFile {
  std::string meta_json;
  std::vector<std::pair<std::string, Tensor>> tensors;
};

void save_named_tensors(const std::string& path, const std::string& meta_json,
                        const std::vector<std::pair<std::string, const Tensor*>>& items);
NamedTensorFile load_named_tensors(const std::string& path);

// checkpoint = model config + every named parameter
void save_checkpoint(const std::string& path, const Model& m);
Model load_checkpoint(const std::string& path);

}  // namespace datcft
