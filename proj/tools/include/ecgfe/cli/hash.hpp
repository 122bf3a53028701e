#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace ecgfe::cli {

/// Lower-case hex SHA-256.
std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

/// Incremental digest for fingerprints built from many parts.
class Sha256 {
public:
  Sha256();
  ~Sha256();
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  /// Each part is length-prefixed so ("ab", "c") and ("a", "bc") differ.
  Sha256& add(std::string_view part);
  std::string hex();

private:
  void* ctx_;
};

} // namespace ecgfe::cli
