#include "cyclecap/training/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace cyclecap::training {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'C', 'Y', 'C', 'L', 'E', 'C', 'A', 'P'};

}  // namespace

const NamedTensor& CheckpointData::tensor(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return t;
  throw CheckpointError("checkpoint has no tensor '" + name + "'");
}

void write_checkpoint(const std::filesystem::path& path, const CheckpointData& data) {
  nlohmann::json header{{"meta", data.meta}, {"tensors", nlohmann::json::array()}};
  std::uint64_t offset = 0;
  for (const auto& t : data.tensors) {
    if (ad::numel(t.shape) != t.values.size()) throw CheckpointError("tensor '" + t.name + "' shape/value mismatch");
    header["tensors"].push_back(
        {{"name", t.name}, {"dtype", "f32"}, {"shape", t.shape}, {"offset", offset}, {"count", t.values.size()}});
    offset += t.values.size() * sizeof(float);
  }
  const std::string text = header.dump();
  const std::uint64_t len = text.size();

  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write " + tmp.string());
    out.write(kMagic, sizeof kMagic);
    out.write(reinterpret_cast<const char*>(&kCheckpointVersion), sizeof kCheckpointVersion);
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& t : data.tensors)
      out.write(reinterpret_cast<const char*>(t.values.data()),
                static_cast<std::streamsize>(t.values.size() * sizeof(float)));
    out.flush();
    if (!out) throw CheckpointError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

CheckpointData read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  const auto file_size = std::filesystem::file_size(path);
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw CheckpointError(path.string() + " is not a checkpoint (bad magic)");
  }
  if (!in.read(reinterpret_cast<char*>(&version), sizeof version)) throw CheckpointError(path.string() + ": truncated header");
  if (version != kCheckpointVersion) {
    throw CheckpointError(path.string() + ": unsupported checkpoint version " + std::to_string(version) + " (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  if (!in.read(reinterpret_cast<char*>(&len), sizeof len)) throw CheckpointError(path.string() + ": truncated header");
  const std::uint64_t data_start = sizeof magic + sizeof version + sizeof len + len;
  if (data_start > file_size) throw CheckpointError(path.string() + ": truncated header");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));

  CheckpointData out;
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
    out.meta = header.at("meta");
    for (const auto& e : header.at("tensors")) {
      NamedTensor t;
      t.name = e.at("name").get<std::string>();
      if (e.at("dtype").get<std::string>() != "f32") throw CheckpointError("tensor '" + t.name + "' has unsupported dtype");
      t.shape = e.at("shape").get<ad::Shape>();
      const auto offset = e.at("offset").get<std::uint64_t>();
      const auto count = e.at("count").get<std::uint64_t>();
      if (count != ad::numel(t.shape)) throw CheckpointError("tensor '" + t.name + "' count does not match its shape");
      if (data_start + offset + count * sizeof(float) > file_size) {
        throw CheckpointError(path.string() + ": truncated data for tensor '" + t.name + "'");
      }
      t.values.resize(count);
      in.seekg(static_cast<std::streamoff>(data_start + offset));
      in.read(reinterpret_cast<char*>(t.values.data()), static_cast<std::streamsize>(count * sizeof(float)));
      out.tensors.push_back(std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(path.string() + ": malformed header: " + e.what());
  }
  return out;
}

}  // namespace cyclecap::training
