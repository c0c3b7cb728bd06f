#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "metaco/net.hpp"

namespace metaco {

struct NamedArray {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> data;
};

/// Container of key=value header lines followed by named f64 arrays.
///
///   metaco-checkpoint 1
///   <key>=<value>            (one per line, sorted by key)
///   arrays <count>
///   <name> f64 <rank> <d0> ... <dk>\n<little-endian payload>
///
/// Save followed by load reproduces every value bit for bit.
struct Checkpoint {
  std::map<std::string, std::string> header;
  std::vector<NamedArray> arrays;

  const NamedArray* find(const std::string& name) const noexcept;
};

void save_checkpoint(const Checkpoint& ckpt, std::ostream& out);
Checkpoint load_checkpoint(std::istream& in);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Architecture goes to the header; tensors become arrays under their names.
Checkpoint to_checkpoint(const NetParams& params);
NetParams params_from_checkpoint(const Checkpoint& ckpt);

Checkpoint theta_checkpoint(const Theta& theta, const std::string& instance_id);
Theta theta_from_checkpoint(const Checkpoint& ckpt);

/// 64-bit FNV-1a of a file's bytes, as 16 hex digits.
std::string file_digest(const std::filesystem::path& path);

}  // namespace metaco
