#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cyclecap/autodiff/tensor.hpp"
#include "cyclecap/common/rng.hpp"
#include "cyclecap/data/attributes.hpp"
#include "cyclecap/data/text.hpp"

namespace cyclecap::data {

enum class Split { train, test };

struct Record {
  std::size_t id = 0;
  std::string image;  // relative to the dataset directory
  Attributes attrs;
  std::vector<std::string> captions;
  Split split = Split::train;

  bool operator==(const Record&) const = default;
};

/// Contents of manifest.json.
struct Manifest {
  static constexpr int kVersion = 1;
  int version = kVersion;
  std::size_t image_size = 0;
  std::uint64_t seed = 0;
  std::string vocab_file = "vocab.txt";
  std::vector<Record> records;

  void save(const std::filesystem::path& path) const;
  static Manifest load(const std::filesystem::path& path);
  std::vector<std::size_t> indices(Split split) const;

  bool operator==(const Manifest&) const = default;
};

/// Dataset directory loaded into memory: planar images and preprocessed
/// captions per record.
class Dataset {
 public:
  Dataset(const std::filesystem::path& dir, std::size_t seq_len);

  const Manifest& manifest() const { return manifest_; }
  const Vocab& vocab() const { return vocab_; }
  std::size_t seq_len() const { return seq_len_; }
  std::size_t image_size() const { return manifest_.image_size; }
  std::size_t size() const { return manifest_.records.size(); }
  const std::vector<float>& pixels(std::size_t record) const { return pixels_.at(record); }
  const std::vector<Caption>& captions(std::size_t record) const { return captions_.at(record); }
  const Record& record(std::size_t i) const { return manifest_.records.at(i); }
  std::vector<std::size_t> indices(Split split) const { return manifest_.indices(split); }

  /// [batch, 3, H, W] images of the given records.
  template <typename T>
  ad::Tensor<T> images(const std::vector<std::size_t>& records) const;

 private:
  Manifest manifest_;
  Vocab vocab_;
  std::size_t seq_len_;
  std::vector<std::vector<float>> pixels_;
  std::vector<std::vector<Caption>> captions_;
};

/// Which record's captions accompany each image. Paired: its own.
/// Unpaired: a uniform shuffle of the split, fixed for the whole run.
struct Pairing {
  bool unpaired = false;
  std::vector<std::size_t> records;      // record ids of the split
  std::vector<std::size_t> caption_of;   // same length; caption source per entry

  static Pairing paired(const std::vector<std::size_t>& records);
  static Pairing shuffled(const std::vector<std::size_t>& records, Rng& rng);
  std::size_t caption_source(std::size_t record) const;

  std::string to_json() const;
  static Pairing from_json(const std::string& text);
  bool operator==(const Pairing&) const = default;
};

struct Batch {
  std::vector<std::size_t> images;    // record ids of the images
  std::vector<Caption> captions;      // one per image, from its caption source
  std::vector<std::size_t> caption_records;
};

/// One epoch of record-id batches covering `records` exactly once in a
/// fresh order. A trailing batch of one joins the previous batch so that
/// batch statistics stay defined.
std::vector<std::vector<std::size_t>> epoch_batches(const std::vector<std::size_t>& records, std::size_t batch_size,
                                                    Rng& rng);

Batch make_batch(const Dataset& data, const std::vector<std::size_t>& images, const Pairing& pairing, Rng& pick_rng);

}  // namespace cyclecap::data
