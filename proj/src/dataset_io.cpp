// Copyright 2026 The dualattn Authors
// SPDX-License-Identifier: Apache-2.0

#include "dat/dataset_io.hpp"

#include "bytes.hpp"

namespace dat {

namespace {

constexpr char kMagic[8] = {'D', 'A', 'T', 'D', 'A', 'T', 'A', '\0'};
constexpr std::uint32_t kVersion = 1;
enum : std::uint32_t { kImageGrid = 1, kStringPairs = 2 };

}  // namespace

std::vector<std::uint8_t> encode_dataset(const Dataset& ds) {
  bytes::Writer w;
  w.put_bytes(kMagic, 8);
  w.put<std::uint32_t>(kVersion);
  if (const auto* img = std::get_if<ImageDataset>(&ds)) {
    w.put<std::uint32_t>(kImageGrid);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(img->kind));
    for (std::size_t v : {img->height, img->width, img->channels, img->patch})
      w.put<std::uint32_t>(static_cast<std::uint32_t>(v));
    w.put<std::uint64_t>(img->size());
    w.put_bytes(img->pixels.data(), img->pixels.size());
    for (auto l : img->labels) w.put<std::int32_t>(l);
  } else {
    const auto& seq = std::get<SeqDataset>(ds);
    w.put<std::uint32_t>(kStringPairs);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(seq.max_len));
    w.put_string(seq.alphabet);
    w.put<std::uint64_t>(seq.size());
    for (const auto& p : seq.pairs) {
      w.put_string(p.source);
      w.put_string(p.target);
    }
  }
  w.seal();
  return w.buffer();
}

Dataset decode_dataset(const std::vector<std::uint8_t>& data, const std::string& what) {
  const std::size_t body = bytes::verify_crc(data, what);
  bytes::Reader r(data.data(), body, what);
  if (std::memcmp(r.take(8), kMagic, 8) != 0) throw IoError(what + ": not a dataset file (bad magic)");
  const auto version = r.get<std::uint32_t>();
  if (version != kVersion) throw IoError(what + ": unsupported dataset version " + std::to_string(version));
  const auto kind = r.get<std::uint32_t>();
  if (kind == kImageGrid) {
    ImageDataset img;
    const auto task = r.get<std::uint32_t>();
    if (task > static_cast<std::uint32_t>(GridTaskKind::MatchPattern))
      throw IoError(what + ": unknown grid task " + std::to_string(task));
    img.kind = static_cast<GridTaskKind>(task);
    img.height = r.get<std::uint32_t>();
    img.width = r.get<std::uint32_t>();
    img.channels = r.get<std::uint32_t>();
    img.patch = r.get<std::uint32_t>();
    const auto count = r.get<std::uint64_t>();
    const std::size_t per = img.image_bytes();
    if (per == 0 || count > r.remaining() / (per + 4)) throw IoError(what + ": counts exceed the file size");
    const auto* px = r.take(count * per);
    img.pixels.assign(px, px + count * per);
    img.labels.resize(count);
    for (auto& l : img.labels) l = r.get<std::int32_t>();
    if (r.remaining()) throw IoError(what + ": trailing bytes after the labels");
    return img;
  }
  if (kind == kStringPairs) {
    SeqDataset seq;
    seq.max_len = r.get<std::uint32_t>();
    seq.alphabet = r.get_string();
    const auto count = r.get<std::uint64_t>();
    if (count > r.remaining() / 8) throw IoError(what + ": counts exceed the file size");
    seq.pairs.resize(count);
    for (auto& p : seq.pairs) {
      p.source = r.get_string();
      p.target = r.get_string();
    }
    if (r.remaining()) throw IoError(what + ": trailing bytes after the pairs");
    return seq;
  }
  throw IoError(what + ": unknown dataset kind " + std::to_string(kind));
}

void save_dataset(const Dataset& ds, const std::string& path) { bytes::write_file(path, encode_dataset(ds)); }

Dataset load_dataset(const std::string& path) { return decode_dataset(bytes::read_file(path), path); }

}  // namespace dat
