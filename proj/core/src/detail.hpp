#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <string_view>

#include <Eigen/Core>

namespace oodbound::detail {

std::string sha256_hex(std::string_view bytes);

/// Deterministic generator keyed by an arbitrary tuple of 64-bit values.
template <class... Keys>
std::mt19937_64 keyed_rng(Keys... keys) {
  std::seed_seq seq{static_cast<std::uint32_t>(static_cast<std::uint64_t>(keys))...,
                    static_cast<std::uint32_t>(static_cast<std::uint64_t>(keys) >> 32)...};
  return std::mt19937_64(seq);
}

/// Writes via `writer` into a sibling temp file, then renames over `path`.
void write_atomically(const std::filesystem::path& path,
                      const std::function<void(std::ostream&)>& writer);

/// Appends the raw bytes of every coefficient.
void append_bits(std::string& out, const Eigen::Ref<const Eigen::MatrixXd>& m);

}  // namespace oodbound::detail
