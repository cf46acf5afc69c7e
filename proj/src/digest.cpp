#include "toolwatch/digest.hpp"

#include <openssl/evp.h>

#include <memory>

#include "toolwatch/error.hpp"

namespace toolwatch {

namespace {

template <std::size_t N>
std::array<std::uint8_t, N> evp_digest(const EVP_MD* md, std::string_view bytes) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  std::array<std::uint8_t, N> out{};
  unsigned int len = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), md, nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), out.data(), &len) != 1 || len != N)
    throw Error("digest computation failed");
  return out;
}

}  // namespace

std::array<std::uint8_t, 16> md5(std::string_view bytes) { return evp_digest<16>(EVP_md5(), bytes); }

std::string sha256_hex(std::string_view bytes) {
  const auto d = evp_digest<32>(EVP_sha256(), bytes);
  return to_hex(d.data(), d.size());
}

std::string to_hex(const std::uint8_t* data, std::size_t n) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out(2 * n, '0');
  for (std::size_t i = 0; i < n; ++i) {
    out[2 * i] = kDigits[data[i] >> 4];
    out[2 * i + 1] = kDigits[data[i] & 0xF];
  }
  return out;
}

}  // namespace toolwatch
