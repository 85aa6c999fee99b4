#include "cyclecap/data/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "cyclecap/data/image.hpp"

namespace cyclecap::data {

using nlohmann::json;

namespace {

json to_json(const Record& r) {
  return json{{"id", r.id},
              {"image", r.image},
              {"shape", kShapes.at(r.attrs.shape)},
              {"fill", kColors.at(r.attrs.fill)},
              {"outline", kColors.at(r.attrs.outline)},
              {"size", kSizes.at(r.attrs.size)},
              {"split", r.split == Split::train ? "train" : "test"},
              {"captions", r.captions}};
}

int color_or_throw(const std::string& name) {
  if (auto c = color_index(name)) return *c;
  throw std::invalid_argument("unknown color '" + name + "'");
}

Record record_from_json(const json& j) {
  Record r;
  r.id = j.at("id").get<std::size_t>();
  r.image = j.at("image").get<std::string>();
  r.attrs.shape = shape_index(j.at("shape").get<std::string>());
  r.attrs.fill = color_or_throw(j.at("fill").get<std::string>());
  r.attrs.outline = color_or_throw(j.at("outline").get<std::string>());
  r.attrs.size = size_index(j.at("size").get<std::string>());
  const auto split = j.at("split").get<std::string>();
  if (split != "train" && split != "test") throw std::invalid_argument("unknown split '" + split + "'");
  r.split = split == "train" ? Split::train : Split::test;
  r.captions = j.at("captions").get<std::vector<std::string>>();
  if (r.captions.size() != 10) {
    throw std::invalid_argument("record " + std::to_string(r.id) + " has " + std::to_string(r.captions.size()) +
                                " captions, expected 10");
  }
  return r;
}

}  // namespace

void Manifest::save(const std::filesystem::path& path) const {
  json j{{"version", version}, {"image_size", image_size}, {"seed", seed}, {"vocab_file", vocab_file}};
  j["records"] = json::array();
  for (const auto& r : records) j["records"].push_back(to_json(r));
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + tmp);
    out << j.dump(1) << '\n';
    if (!out) throw std::runtime_error("cannot write " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Manifest Manifest::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open manifest " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw std::invalid_argument("malformed manifest " + path.string() + ": " + e.what());
  }
  Manifest m;
  try {
    m.version = j.at("version").get<int>();
    if (m.version != kVersion) throw std::invalid_argument("unsupported manifest version " + std::to_string(m.version));
    m.image_size = j.at("image_size").get<std::size_t>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.vocab_file = j.at("vocab_file").get<std::string>();
    for (const auto& r : j.at("records")) m.records.push_back(record_from_json(r));
  } catch (const json::exception& e) {
    throw std::invalid_argument("malformed manifest " + path.string() + ": " + e.what());
  }
  for (std::size_t i = 0; i < m.records.size(); ++i)
    if (m.records[i].id != i) throw std::invalid_argument("manifest record ids must be 0..n-1 in order");
  return m;
}

std::vector<std::size_t> Manifest::indices(Split split) const {
  std::vector<std::size_t> out;
  for (const auto& r : records)
    if (r.split == split) out.push_back(r.id);
  return out;
}

Dataset::Dataset(const std::filesystem::path& dir, std::size_t seq_len)
    : manifest_(Manifest::load(dir / "manifest.json")), vocab_(Vocab::load(dir / manifest_.vocab_file)), seq_len_(seq_len) {
  for (const auto& r : manifest_.records) {
    auto img = read_png(dir / r.image);
    if (img.width != manifest_.image_size || img.height != manifest_.image_size) {
      throw std::invalid_argument(r.image + " is " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                                  ", manifest says " + std::to_string(manifest_.image_size));
    }
    pixels_.push_back(to_planar(img));
    std::vector<Caption> caps;
    for (const auto& c : r.captions) caps.push_back(preprocess_caption(c, vocab_, seq_len));
    captions_.push_back(std::move(caps));
  }
}

template <typename T>
ad::Tensor<T> Dataset::images(const std::vector<std::size_t>& records) const {
  const std::size_t s = image_size();
  const std::size_t per = 3 * s * s;
  std::vector<T> v;
  v.reserve(records.size() * per);
  for (auto r : records) {
    const auto& p = pixels_.at(r);
    v.insert(v.end(), p.begin(), p.end());
  }
  return ad::Tensor<T>({records.size(), 3, s, s}, std::move(v));
}

template ad::Tensor<float> Dataset::images(const std::vector<std::size_t>&) const;
template ad::Tensor<double> Dataset::images(const std::vector<std::size_t>&) const;

Pairing Pairing::paired(const std::vector<std::size_t>& records) {
  Pairing p;
  p.records = records;
  p.caption_of = records;
  return p;
}

Pairing Pairing::shuffled(const std::vector<std::size_t>& records, Rng& rng) {
  Pairing p;
  p.unpaired = true;
  p.records = records;
  p.caption_of = records;
  std::shuffle(p.caption_of.begin(), p.caption_of.end(), rng);
  return p;
}

std::size_t Pairing::caption_source(std::size_t record) const {
  auto it = std::lower_bound(records.begin(), records.end(), record);
  if (it == records.end() || *it != record) {
    it = std::find(records.begin(), records.end(), record);
    if (it == records.end()) throw std::out_of_range("record " + std::to_string(record) + " is not in the pairing");
  }
  return caption_of[static_cast<std::size_t>(it - records.begin())];
}

std::string Pairing::to_json() const {
  return json{{"unpaired", unpaired}, {"records", records}, {"caption_of", caption_of}}.dump();
}

Pairing Pairing::from_json(const std::string& text) {
  Pairing p;
  try {
    auto j = json::parse(text);
    p.unpaired = j.at("unpaired").get<bool>();
    p.records = j.at("records").get<std::vector<std::size_t>>();
    p.caption_of = j.at("caption_of").get<std::vector<std::size_t>>();
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("malformed pairing: ") + e.what());
  }
  if (p.records.size() != p.caption_of.size()) throw std::invalid_argument("malformed pairing: length mismatch");
  return p;
}

std::vector<std::vector<std::size_t>> epoch_batches(const std::vector<std::size_t>& records, std::size_t batch_size,
                                                    Rng& rng) {
  if (batch_size == 0 || batch_size > records.size()) {
    throw std::invalid_argument("batch size " + std::to_string(batch_size) + " does not fit a split of " +
                                std::to_string(records.size()));
  }
  auto order = records;
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < order.size(); i += batch_size) {
    out.emplace_back(order.begin() + i, order.begin() + std::min(order.size(), i + batch_size));
  }
  if (out.size() > 1 && out.back().size() == 1) {
    out[out.size() - 2].push_back(out.back()[0]);
    out.pop_back();
  }
  return out;
}

Batch make_batch(const Dataset& data, const std::vector<std::size_t>& images, const Pairing& pairing, Rng& pick_rng) {
  Batch b;
  b.images = images;
  for (auto r : images) {
    const auto src = pairing.caption_source(r);
    b.caption_records.push_back(src);
    b.captions.push_back(pick_caption(data.captions(src), pick_rng, src));
  }
  return b;
}

}  // namespace cyclecap::data
