#pragma once

#include <string>
#include <string_view>

namespace bplab::io {

/// Writes to `path.tmp` then renames over `path`.
void write_file_atomic(const std::string& path, std::string_view bytes);

std::string read_file(const std::string& path);

std::string sha256_hex(std::string_view bytes);

}  // namespace bplab::io
