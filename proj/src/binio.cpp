#include "softsense/binio.hpp"

#include <zlib.h>

#include <filesystem>
#include <fstream>

namespace softsense::binio {

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  std::size_t offset = 0;
  while (offset < bytes.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - offset, 1u << 30));
    crc = ::crc32(crc, bytes.data() + offset, chunk);
    offset += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

void verify_crc(std::span<const std::uint8_t> file, const std::string& what) {
  if (file.size() < 4) throw TruncatedFileError(what + ": file is truncated");
  const auto body = file.first(file.size() - 4);
  std::uint32_t stored;
  std::memcpy(&stored, file.data() + body.size(), 4);
  if (crc32(body) != stored) throw ChecksumError(what + ": checksum mismatch (file is corrupted)");
}

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  const auto size = static_cast<std::size_t>(in.tellg());
  std::vector<std::uint8_t> bytes(size);
  in.seekg(0);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
  if (!in) throw std::runtime_error("failed reading file: " + path);
  return bytes;
}

void write_file_atomic(const std::string& path, std::span<const std::uint8_t> bytes) {
  const std::string tmp = path + ".partial";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write file: " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      std::filesystem::remove(tmp);
      throw std::runtime_error("failed writing file: " + path);
    }
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace softsense::binio
