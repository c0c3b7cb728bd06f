#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace metaco {

/// Flat settings. Keys inside an ini section are stored as "section.key".
using KeyValues = std::map<std::string, std::string>;

/// Reads `key = value` lines with optional [section] headers.
/// Throws ParseError on malformed input.
KeyValues read_config(const std::filesystem::path& path);
KeyValues parse_config(const std::string& text);

/// Applies "key=value" strings on top of `kv`. Throws ParameterError when
/// an entry has no '='.
void apply_overrides(KeyValues& kv, const std::vector<std::string>& overrides);

/// Copy of the entries under `section.`, with the prefix stripped; top-level
/// keys without a dot are included as well and lose to sectioned ones.
KeyValues section(const KeyValues& kv, const std::string& name);

double get_double(const KeyValues& kv, const std::string& key, double fallback);
long get_long(const KeyValues& kv, const std::string& key, long fallback);
bool get_bool(const KeyValues& kv, const std::string& key, bool fallback);
std::string get_string(const KeyValues& kv, const std::string& key, const std::string& fallback);

}  // namespace metaco
