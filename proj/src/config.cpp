#include "metaco/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fstream>
#include <sstream>

#include "metaco/errors.hpp"

namespace metaco {

namespace {

KeyValues flatten(const boost::property_tree::ptree& tree) {
  KeyValues kv;
  for (const auto& [key, node] : tree) {
    if (node.empty()) {
      kv[key] = node.data();
      continue;
    }
    for (const auto& [sub, leaf] : node) kv[key + "." + sub] = leaf.data();
  }
  return kv;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

KeyValues parse_config(const std::string& text) {
  std::istringstream in(text);
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ParseError(e.message(), static_cast<std::size_t>(e.line()));
  }
  return flatten(tree);
}

KeyValues read_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

void apply_overrides(KeyValues& kv, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) throw ParameterError("override must be key=value: " + o);
    kv[trim(o.substr(0, eq))] = trim(o.substr(eq + 1));
  }
}

KeyValues section(const KeyValues& kv, const std::string& name) {
  KeyValues out;
  for (const auto& [k, v] : kv)
    if (k.find('.') == std::string::npos) out[k] = v;
  const std::string prefix = name + ".";
  for (const auto& [k, v] : kv)
    if (k.starts_with(prefix)) out[k.substr(prefix.size())] = v;
  return out;
}

double get_double(const KeyValues& kv, const std::string& key, double fallback) {
  const auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  try {
    std::size_t used = 0;
    const double v = std::stod(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument(key);
    return v;
  } catch (const std::exception&) {
    throw ParameterError("expected a number for " + key + ": '" + it->second + "'");
  }
}

long get_long(const KeyValues& kv, const std::string& key, long fallback) {
  const auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  try {
    std::size_t used = 0;
    const long v = std::stol(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument(key);
    return v;
  } catch (const std::exception&) {
    throw ParameterError("expected an integer for " + key + ": '" + it->second + "'");
  }
}

bool get_bool(const KeyValues& kv, const std::string& key, bool fallback) {
  const auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  const auto& v = it->second;
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw ParameterError("expected a boolean for " + key + ": '" + v + "'");
}

std::string get_string(const KeyValues& kv, const std::string& key, const std::string& fallback) {
  const auto it = kv.find(key);
  return it == kv.end() ? fallback : it->second;
}

}  // namespace metaco
