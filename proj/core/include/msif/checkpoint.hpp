#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace msif {

// On-disk snapshot: a small string-to-string metadata block plus named
// float-64 tensors. Tensors are written sorted by name so the byte stream is
// a pure function of the contents.
struct Checkpoint {
  std::map<std::string, std::string> meta;
  std::map<std::string, std::vector<std::int64_t>> shapes;
  std::map<std::string, std::vector<double>> tensors;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace msif
