#pragma once

#include <filesystem>
#include <string_view>

namespace oodbound {

/// Writes `text` to a sibling temp file and renames it over `path`, so a
/// failed write never leaves a partial file behind. Throws DataError.
void write_text_atomically(const std::filesystem::path& path, std::string_view text);

}  // namespace oodbound
