#include "dropwiper/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "dropwiper/error.hpp"

namespace dropwiper {

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint32_t get_u32(const std::string& in, std::size_t pos) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  return v;
}

[[noreturn]] void bad(const std::filesystem::path& path, const std::string& why) {
  throw Error(ErrorCode::kBadCheckpoint, path.string() + ": " + why);
}

}  // namespace

void Checkpoint::add(std::string name, const std::vector<double>& values) {
  arrays.emplace_back(std::move(name), std::vector<float>(values.begin(), values.end()));
}

std::vector<double> Checkpoint::get(const std::string& name, std::size_t expected_size) const {
  for (const auto& [n, values] : arrays) {
    if (n != name) continue;
    if (values.size() != expected_size) {
      throw Error(ErrorCode::kBadCheckpoint, "array '" + name + "' has size " + std::to_string(values.size()) +
                                                 ", expected " + std::to_string(expected_size));
    }
    return {values.begin(), values.end()};
  }
  throw Error(ErrorCode::kBadCheckpoint, "checkpoint has no array '" + name + "'");
}

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  nlohmann::json header{{"kind", ckpt.kind}, {"config", ckpt.config}, {"arrays", nlohmann::json::array()}};
  for (const auto& [name, values] : ckpt.arrays) header["arrays"].push_back({{"name", name}, {"size", values.size()}});
  const std::string text = header.dump();

  std::string out = "DWDN";
  put_u32(out, Checkpoint::kVersion);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  for (const auto& [name, values] : ckpt.arrays) {
    for (float v : values) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::kUnwritablePath, "cannot write " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw Error(ErrorCode::kUnwritablePath, "short write to " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::kFileNotFound, "cannot open checkpoint " + path.string());
  const std::string buf{std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
  if (buf.size() < 12 || buf.compare(0, 4, "DWDN") != 0) bad(path, "missing DWDN magic");
  const std::uint32_t version = get_u32(buf, 4);
  if (version != Checkpoint::kVersion) bad(path, "unsupported version " + std::to_string(version));
  const std::uint32_t len = get_u32(buf, 8);
  if (buf.size() < 12 + static_cast<std::size_t>(len)) bad(path, "truncated header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(buf.substr(12, len));
  } catch (const nlohmann::json::exception& e) {
    bad(path, e.what());
  }
  Checkpoint ckpt;
  ckpt.kind = header.value("kind", "");
  ckpt.config = header.value("config", nlohmann::json::object());
  std::size_t pos = 12 + len;
  for (const auto& a : header.at("arrays")) {
    const auto size = a.at("size").get<std::size_t>();
    if (buf.size() < pos + 4 * size) bad(path, "truncated weights");
    std::vector<float> values(size);
    for (std::size_t i = 0; i < size; ++i, pos += 4) values[i] = std::bit_cast<float>(get_u32(buf, pos));
    ckpt.arrays.emplace_back(a.at("name").get<std::string>(), std::move(values));
  }
  if (pos != buf.size()) bad(path, "trailing bytes after weights");
  return ckpt;
}

}  // namespace dropwiper
