#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace comet::io {

std::string sha256_hex(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> read_bytes(const std::string& path);
void write_bytes(const std::string& path, std::span<const std::uint8_t> bytes);

std::string read_text(const std::string& path);
void write_text(const std::string& path, const std::string& text);

// "model.json" -> "model.bin"; falls back to appending ".bin"
std::string sidecar_path(const std::string& manifest_path);

bool file_exists(const std::string& path);
void ensure_dir(const std::string& path);

// Fixed-precision float formatting shared by CSV/SVG writers so that
// re-emitting the same data is byte-identical.
std::string fmt(double v, int decimals = 6);

}  // namespace comet::io
