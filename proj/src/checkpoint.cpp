#include "metaco/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "metaco/errors.hpp"

namespace metaco {

namespace {

constexpr const char* kMagic = "metaco-checkpoint 1";

std::uint64_t to_little_endian(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    std::uint64_t r = 0;
    for (int i = 0; i < 8; ++i) r |= ((v >> (8 * i)) & 0xffULL) << (8 * (7 - i));
    return r;
  }
}

Scope scope_for(const std::string& name) {
  if (name == kGnnOutName) return Scope::GnnOut;
  if (name.starts_with("mlp.")) return Scope::Mlp;
  return Scope::Gnn;
}

}  // namespace

const NamedArray* Checkpoint::find(const std::string& name) const noexcept {
  for (const auto& a : arrays)
    if (a.name == name) return &a;
  return nullptr;
}

void save_checkpoint(const Checkpoint& ckpt, std::ostream& out) {
  out << kMagic << '\n';
  for (const auto& [k, v] : ckpt.header) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos)
      throw ParameterError("header entries may not contain '=' in keys or newlines");
    out << k << '=' << v << '\n';
  }
  out << "arrays " << ckpt.arrays.size() << '\n';
  for (const auto& a : ckpt.arrays) {
    if (a.name.find_first_of(" \n") != std::string::npos) throw ParameterError("array names may not contain spaces");
    std::size_t count = 1;
    for (auto d : a.shape) count *= d;
    if (count != a.data.size()) throw ShapeError("array '" + a.name + "' shape does not match its data");
    out << a.name << " f64 " << a.shape.size();
    for (auto d : a.shape) out << ' ' << d;
    out << '\n';
    for (double v : a.data) {
      const std::uint64_t bits = to_little_endian(std::bit_cast<std::uint64_t>(v));
      char buf[8];
      std::memcpy(buf, &bits, 8);
      out.write(buf, 8);
    }
  }
  if (!out) throw Error("checkpoint write failed");
}

Checkpoint load_checkpoint(std::istream& in) {
  Checkpoint ckpt;
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(in, line) || line != kMagic) throw ParseError("not a metaco checkpoint", lineno);
  std::size_t count = 0;
  while (true) {
    ++lineno;
    if (!std::getline(in, line)) throw ParseError("truncated checkpoint header", lineno);
    if (line.starts_with("arrays ")) {
      try {
        count = std::stoull(line.substr(7));
      } catch (const std::logic_error&) {
        throw ParseError("malformed array count", lineno);
      }
      break;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("expected key=value header line", lineno);
    ckpt.header[line.substr(0, eq)] = line.substr(eq + 1);
  }
  for (std::size_t i = 0; i < count; ++i) {
    ++lineno;
    if (!std::getline(in, line)) throw ParseError("truncated checkpoint", lineno);
    std::istringstream ls(line);
    NamedArray a;
    std::string dtype;
    std::size_t rank = 0;
    if (!(ls >> a.name >> dtype >> rank) || dtype != "f64") throw ParseError("malformed array header", lineno);
    std::size_t total = 1;
    for (std::size_t r = 0; r < rank; ++r) {
      std::size_t d = 0;
      if (!(ls >> d)) throw ParseError("malformed array shape", lineno);
      a.shape.push_back(d);
      total *= d;
    }
    a.data.resize(total);
    for (auto& v : a.data) {
      char buf[8];
      if (!in.read(buf, 8)) throw ParseError("truncated payload for '" + a.name + "'", lineno);
      std::uint64_t bits;
      std::memcpy(&bits, buf, 8);
      v = std::bit_cast<double>(to_little_endian(bits));
    }
    ckpt.arrays.push_back(std::move(a));
  }
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  save_checkpoint(ckpt, out);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return load_checkpoint(in);
}

Checkpoint to_checkpoint(const NetParams& params) {
  Checkpoint c;
  for (const auto& [k, v] : params.arch.to_kv()) c.header["arch." + k] = v;
  for (const auto& t : params.tensors) {
    NamedArray a;
    a.name = t.name;
    a.shape = {static_cast<std::size_t>(t.value.rows()), static_cast<std::size_t>(t.value.cols())};
    a.data.assign(t.value.data(), t.value.data() + t.value.size());
    c.arrays.push_back(std::move(a));
  }
  return c;
}

NetParams params_from_checkpoint(const Checkpoint& ckpt) {
  std::map<std::string, std::string> kv;
  for (const auto& [k, v] : ckpt.header)
    if (k.starts_with("arch.")) kv[k.substr(5)] = v;
  NetParams p;
  p.arch = ArchConfig::from_kv(kv);
  for (const auto& a : ckpt.arrays) {
    if (a.name.starts_with("adam.")) continue;
    if (a.shape.size() != 2) throw ShapeError("parameter array '" + a.name + "' is not rank 2");
    Matrix m(static_cast<Eigen::Index>(a.shape[0]), static_cast<Eigen::Index>(a.shape[1]));
    std::copy(a.data.begin(), a.data.end(), m.data());
    p.add(a.name, scope_for(a.name), std::move(m));
  }
  p.validate();
  return p;
}

Checkpoint theta_checkpoint(const Theta& theta, const std::string& instance_id) {
  Checkpoint c;
  c.header["kind"] = "theta";
  c.header["problem"] = to_string(theta.problem);
  c.header["instance"] = instance_id;
  c.arrays.push_back({"theta", {theta.values.size()}, theta.values});
  return c;
}

Theta theta_from_checkpoint(const Checkpoint& ckpt) {
  auto it = ckpt.header.find("problem");
  const auto* arr = ckpt.find("theta");
  if (it == ckpt.header.end() || !arr) throw ParseError("checkpoint does not hold a theta vector", 0);
  Theta t;
  t.problem = it->second == "mis" ? Problem::Mis : Problem::Tsp;
  t.values = arr->data;
  return t;
}

std::string file_digest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[4096];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

}  // namespace metaco
