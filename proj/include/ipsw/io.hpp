#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

namespace ipsw {

/// File-system failure: missing input, unwritable output.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed document; the message carries the location.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shortest decimal string that parses back to the same double.
/// Infinities print as "inf" / "-inf", NaN as "nan".
std::string format_double(double v);

std::string read_text_file(const std::filesystem::path& path);
/// Creates parent directories as needed.
void write_text_file(const std::filesystem::path& path, const std::string& content);

}  // namespace ipsw
