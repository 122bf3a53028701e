#include "ecgfe/cli/hash.hpp"

#include <array>
#include <cstdint>
#include <fstream>

#include <openssl/evp.h>

#include "ecgfe/error.hpp"

namespace ecgfe::cli {

namespace {

EVP_MD_CTX* as_ctx(void* p) { return static_cast<EVP_MD_CTX*>(p); }

std::string to_hex(const unsigned char* d, unsigned n) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s(2 * n, '0');
  for (unsigned i = 0; i < n; ++i) {
    s[2 * i] = digits[d[i] >> 4];
    s[2 * i + 1] = digits[d[i] & 15];
  }
  return s;
}

void update(void* ctx, const void* data, std::size_t n) {
  if (EVP_DigestUpdate(as_ctx(ctx), data, n) != 1) throw Error("sha256: update failed");
}

} // namespace

Sha256::Sha256() : ctx_(EVP_MD_CTX_new()) {
  if (!ctx_ || EVP_DigestInit_ex(as_ctx(ctx_), EVP_sha256(), nullptr) != 1) throw Error("sha256: init failed");
}

Sha256::~Sha256() { EVP_MD_CTX_free(as_ctx(ctx_)); }

Sha256& Sha256::add(std::string_view part) {
  const std::uint64_t n = part.size();
  update(ctx_, &n, sizeof n);
  update(ctx_, part.data(), part.size());
  return *this;
}

std::string Sha256::hex() {
  std::array<unsigned char, EVP_MAX_MD_SIZE> d{};
  unsigned n = 0;
  if (EVP_DigestFinal_ex(as_ctx(ctx_), d.data(), &n) != 1) throw Error("sha256: final failed");
  return to_hex(d.data(), n);
}

std::string sha256_hex(std::string_view bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> d{};
  unsigned n = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), d.data(), &n, EVP_sha256(), nullptr) != 1) throw Error("sha256 failed");
  return to_hex(d.data(), n);
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::array<unsigned char, EVP_MAX_MD_SIZE> d{};
  unsigned n = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) throw Error("sha256: init failed");
  std::array<char, 1 << 16> buf{};
  while (in) {
    in.read(buf.data(), buf.size());
    if (in.gcount() > 0) EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  const bool ok = EVP_DigestFinal_ex(ctx, d.data(), &n) == 1;
  EVP_MD_CTX_free(ctx);
  if (!ok) throw Error("sha256: final failed");
  return to_hex(d.data(), n);
}

} // namespace ecgfe::cli
