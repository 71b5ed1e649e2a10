// Copyright 2026 The dualattn Authors
// SPDX-License-Identifier: Apache-2.0

#include "dat/checkpoint.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>

#include "bytes.hpp"
#include "dat/config_io.hpp"

namespace dat {

namespace {

constexpr char kMagic[8] = {'D', 'A', 'T', 'C', 'K', 'P', 'T', '\0'};
constexpr std::size_t kMaxRank = 8;

}  // namespace

std::vector<std::uint8_t> encode_container(const Container& c) {
  bytes::Writer w;
  w.put_bytes(kMagic, 8);
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(c.config.size()));
  w.put_bytes(c.config.data(), c.config.size());
  w.put<std::uint32_t>(static_cast<std::uint32_t>(c.tensors.size()));
  std::uint64_t offset = 0;
  for (const auto& t : c.tensors) {
    if (t.shape.size() > kMaxRank) throw ConfigError("checkpoint: tensor " + t.name + " has rank > 8");
    if (t.bytes.size() != shape_numel(t.shape) * dtype_size(t.dtype))
      throw ConfigError("checkpoint: tensor " + t.name + " byte count does not match its shape");
    w.put_string(t.name);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(t.dtype));
    w.put<std::uint8_t>(static_cast<std::uint8_t>(t.shape.size()));
    for (auto d : t.shape) w.put<std::uint64_t>(d);
    w.put<std::uint64_t>(offset);
    w.put<std::uint64_t>(t.bytes.size());
    offset += t.bytes.size();
  }
  w.put<std::uint64_t>(offset);
  for (const auto& t : c.tensors) w.put_bytes(t.bytes.data(), t.bytes.size());
  w.seal();
  return w.buffer();
}

Container decode_container(const std::vector<std::uint8_t>& data, const std::string& what) {
  if (data.size() < 12 || std::memcmp(data.data(), kMagic, 8) != 0)
    throw IoError(what + ": not a checkpoint (bad magic)");
  std::uint32_t version;
  std::memcpy(&version, data.data() + 8, 4);
  if (version != kCheckpointVersion)
    throw IoError(what + ": unsupported checkpoint version " + std::to_string(version) + " (expected " +
                  std::to_string(kCheckpointVersion) + ")");
  const std::size_t body = bytes::verify_crc(data, what);
  bytes::Reader r(data.data(), body, what);
  r.take(12);

  Container c;
  const auto cfg_len = r.get<std::uint32_t>();
  const auto* cfg = r.take(cfg_len);
  c.config.assign(reinterpret_cast<const char*>(cfg), cfg_len);

  struct Entry {
    std::uint64_t offset, nbytes;
  };
  const auto count = r.get<std::uint32_t>();
  if (count > r.remaining() / 20) throw IoError(what + ": tensor count exceeds the file size");
  std::vector<Entry> entries(count);
  c.tensors.resize(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    auto& t = c.tensors[i];
    t.name = r.get_string(4096);
    const auto dt = r.get<std::uint8_t>();
    if (dt > static_cast<std::uint8_t>(DType::f64)) throw IoError(what + ": tensor " + t.name + " has unknown dtype");
    t.dtype = static_cast<DType>(dt);
    const auto rank = r.get<std::uint8_t>();
    if (rank > kMaxRank) throw IoError(what + ": tensor " + t.name + " has rank " + std::to_string(rank));
    t.shape.resize(rank);
    std::uint64_t numel = 1;
    for (auto& d : t.shape) {
      d = r.get<std::uint64_t>();
      if (d != 0 && numel > (std::uint64_t{1} << 48) / d) throw IoError(what + ": tensor " + t.name + " is implausibly large");
      numel *= d;
    }
    entries[i].offset = r.get<std::uint64_t>();
    entries[i].nbytes = r.get<std::uint64_t>();
    if (entries[i].nbytes != numel * dtype_size(t.dtype))
      throw IoError(what + ": tensor " + t.name + " byte count does not match its shape");
  }
  const auto blob_size = r.get<std::uint64_t>();
  if (blob_size != r.remaining()) throw IoError(what + ": blob size does not match the file");
  const std::uint8_t* blob = r.take(blob_size);

  // Offsets must be in bounds and non-overlapping.
  std::vector<std::size_t> order(count);
  for (std::size_t i = 0; i < count; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return entries[a].offset < entries[b].offset; });
  std::uint64_t end = 0;
  for (auto i : order) {
    const auto& e = entries[i];
    if (e.offset < end || e.offset > blob_size || e.nbytes > blob_size - e.offset)
      throw IoError(what + ": tensor " + c.tensors[i].name + " has an out-of-bounds or overlapping extent");
    end = e.offset + e.nbytes;
    c.tensors[i].bytes.assign(blob + e.offset, blob + e.offset + e.nbytes);
  }
  return c;
}

template <typename T>
std::vector<std::uint8_t> encode_checkpoint(const Model<T>& model) {
  Container c;
  c.config = to_json(model.config()).dump(2);
  for (const auto& p : model.parameters()) {
    TensorRecord t;
    t.name = p.name;
    t.dtype = dtype_of<T>();
    t.shape = p.tensor.shape();
    const auto d = p.tensor.data();
    const auto* b = reinterpret_cast<const std::uint8_t*>(d.data());
    t.bytes.assign(b, b + d.size() * sizeof(T));
    c.tensors.push_back(std::move(t));
  }
  return encode_container(c);
}

template <typename T>
void save_checkpoint(const Model<T>& model, const std::string& path) {
  bytes::write_file(path, encode_checkpoint(model));
}

namespace {

ModelConfig parse_config(const std::string& text, const std::string& what) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw IoError(what + ": embedded config is not valid JSON (" + e.what() + ")");
  }
  auto cfg = model_config_from_json(j);
  cfg.validate();
  return cfg;
}

}  // namespace

template <typename T>
Model<T> decode_checkpoint(const std::vector<std::uint8_t>& data, const std::string& what) {
  auto c = decode_container(data, what);
  Model<T> model(parse_config(c.config, what));
  std::map<std::string, const TensorRecord*> by_name;
  for (const auto& t : c.tensors)
    if (!by_name.emplace(t.name, &t).second) throw IntegrityError(what + ": duplicate tensor " + t.name);
  std::set<std::string> known;
  for (auto& p : model.parameters()) {
    known.insert(p.name);
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw IntegrityError(what + ": missing parameter " + p.name);
    const auto& t = *it->second;
    if (t.dtype != dtype_of<T>())
      throw IntegrityError(what + ": parameter " + p.name + " is " + dtype_name(t.dtype) + ", expected " +
                           dtype_name(dtype_of<T>()));
    if (t.shape != p.tensor.shape())
      throw IntegrityError(what + ": parameter " + p.name + " has shape " + shape_str(t.shape) + ", expected " +
                           shape_str(p.tensor.shape()));
    auto dst = p.tensor.mutable_data();
    std::memcpy(dst.data(), t.bytes.data(), t.bytes.size());
  }
  for (const auto& t : c.tensors)
    if (!known.count(t.name)) throw IntegrityError(what + ": unknown parameter " + t.name);
  return model;
}

template <typename T>
Model<T> load_checkpoint(const std::string& path) {
  return decode_checkpoint<T>(bytes::read_file(path), path);
}

ModelConfig checkpoint_config(const std::string& path) {
  return parse_config(decode_container(bytes::read_file(path), path).config, path);
}

template <typename T>
void export_relations(const Model<T>& model, const ModelInput& input, std::size_t layer, std::size_t dim,
                      std::ostream& out) {
  const auto rel = model.layer_relations(input, layer);  // [b, n, n, d_r]
  const std::size_t n = rel.dim(1), dr = rel.dim(3);
  if (dim >= dr)
    throw DimensionError("relation dimension " + std::to_string(dim) + " out of range (d_r = " + std::to_string(dr) +
                         ")");
  const auto v = rel.data();
  out << "i,j,raw,tanh\n";
  char buf[96];
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double x = static_cast<double>(v[(i * n + j) * dr + dim]);
      std::snprintf(buf, sizeof buf, "%zu,%zu,%.17g,%.17g\n", i, j, x, std::tanh(x));
      out << buf;
    }
}

#define DAT_INSTANTIATE_CKPT(T)                                                                           \
  template std::vector<std::uint8_t> encode_checkpoint(const Model<T>&);                                 \
  template void save_checkpoint(const Model<T>&, const std::string&);                                    \
  template Model<T> decode_checkpoint<T>(const std::vector<std::uint8_t>&, const std::string&);          \
  template Model<T> load_checkpoint<T>(const std::string&);                                              \
  template void export_relations(const Model<T>&, const ModelInput&, std::size_t, std::size_t, std::ostream&);

DAT_INSTANTIATE_CKPT(float)
DAT_INSTANTIATE_CKPT(double)

}  // namespace dat
