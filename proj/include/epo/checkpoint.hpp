#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace epo {

// Checkpoint container: magic, little-endian u64 manifest length, JSON
// manifest, then one binary blob of little-endian 64-bit reals. The manifest
// names each block with its shape and byte offset into the blob. Integer
// payloads (rng words, counters) are stored bit-cast, never arithmetically
// converted.

inline constexpr char kCheckpointMagic[8] = {'E', 'P', 'O', 'C', 'K', 'P', 'T', '1'};

static_assert(std::endian::native == std::endian::little,
              "checkpoint blob assumes a little-endian host");

class CheckpointWriter {
 public:
  void add_block(const std::string& name, std::span<const double> values,
                 std::size_t rows, std::size_t cols) {
    if (values.size() != rows * cols) {
      throw std::invalid_argument("checkpoint block " + name + ": shape mismatch");
    }
    nlohmann::json b;
    b["name"] = name;
    b["rows"] = rows;
    b["cols"] = cols;
    b["byte_offset"] = blob_.size() * sizeof(double);
    blocks_.push_back(std::move(b));
    blob_.insert(blob_.end(), values.begin(), values.end());
  }

  void add_u64_block(const std::string& name, std::span<const std::uint64_t> words) {
    std::vector<double> cast(words.size());
    for (std::size_t i = 0; i < words.size(); ++i) {
      cast[i] = std::bit_cast<double>(words[i]);
    }
    add_block(name, cast, 1, cast.size());
  }

  nlohmann::json& meta() { return meta_; }

  void write(const std::string& path) const {
    nlohmann::json manifest;
    manifest["meta"] = meta_;
    manifest["blocks"] = blocks_;
    manifest["blob_bytes"] = blob_.size() * sizeof(double);
    const std::string text = manifest.dump();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    const std::uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.write(reinterpret_cast<const char*>(blob_.data()),
              static_cast<std::streamsize>(blob_.size() * sizeof(double)));
    if (!out) throw std::runtime_error("checkpoint write failed: " + path);
  }

 private:
  nlohmann::json meta_;
  std::vector<nlohmann::json> blocks_;
  std::vector<double> blob_;
};

class CheckpointReader {
 public:
  explicit CheckpointReader(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
      throw std::runtime_error("not a checkpoint file: " + path);
    }
    std::uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof(len));
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    if (!in) throw std::runtime_error("truncated checkpoint manifest: " + path);
    manifest_ = nlohmann::json::parse(text);
    const std::uint64_t blob_bytes = manifest_.at("blob_bytes").get<std::uint64_t>();
    if (blob_bytes % sizeof(double) != 0) {
      throw std::runtime_error("corrupt checkpoint blob size: " + path);
    }
    blob_.resize(blob_bytes / sizeof(double));
    in.read(reinterpret_cast<char*>(blob_.data()),
            static_cast<std::streamsize>(blob_bytes));
    if (!in) throw std::runtime_error("truncated checkpoint blob: " + path);
    for (const auto& b : manifest_.at("blocks")) {
      index_[b.at("name").get<std::string>()] = b;
    }
  }

  const nlohmann::json& meta() const { return manifest_.at("meta"); }

  bool has_block(const std::string& name) const { return index_.count(name) > 0; }

  std::vector<std::string> block_names() const {
    std::vector<std::string> names;
    for (const auto& b : manifest_.at("blocks")) {
      names.push_back(b.at("name").get<std::string>());
    }
    return names;
  }

  std::span<const double> block(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) {
      throw std::runtime_error("checkpoint missing block: " + name);
    }
    const auto& b = it->second;
    const std::size_t offset = b.at("byte_offset").get<std::size_t>() / sizeof(double);
    const std::size_t count =
        b.at("rows").get<std::size_t>() * b.at("cols").get<std::size_t>();
    if (offset + count > blob_.size()) {
      throw std::runtime_error("checkpoint block out of range: " + name);
    }
    return {blob_.data() + offset, count};
  }

  std::vector<std::uint64_t> u64_block(const std::string& name) const {
    const auto vals = block(name);
    std::vector<std::uint64_t> out(vals.size());
    for (std::size_t i = 0; i < vals.size(); ++i) {
      out[i] = std::bit_cast<std::uint64_t>(vals[i]);
    }
    return out;
  }

 private:
  nlohmann::json manifest_;
  std::vector<double> blob_;
  std::map<std::string, nlohmann::json> index_;
};

}  // namespace epo
