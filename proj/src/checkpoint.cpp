// Copyright 2026 The ILA Lab Authors.
// SPDX-License-Identifier: Apache-2.0

#include "ila/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <set>
#include <sstream>

#include <zlib.h>

#include "ila/errors.hpp"

namespace ila {
namespace {

constexpr char kMagic[4] = {'I', 'L', 'A', 'C'};
constexpr std::uint8_t kDtypeF64 = 1;
constexpr std::uint8_t kDtypeBytes = 2;
constexpr std::size_t kHeaderBytes = 4 + 4 + 4 + 8;
constexpr const char* kMetaName = "__meta__";

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

class Writer {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void bytes(const std::string& s) { buf_ += s; }
  std::string& buffer() { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  Reader(const std::string& buf, std::size_t end, const std::string& path)
      : buf_(buf), end_(end), path_(path) {}

  void need(std::size_t n) const {
    if (pos_ + n > end_) throw TruncatedError("checkpoint " + path_ + " ends mid-record");
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(buf_[pos_++]);
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(u8()) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  void seek(std::size_t p) { pos_ = p; }

 private:
  const std::string& buf_;
  std::size_t end_;
  std::size_t pos_ = 0;
  std::string path_;
};

std::uint32_t crc_of(const char* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(data), chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

void put_tensor(Writer& w, const std::string& name, const Tensor& t) {
  w.u32(static_cast<std::uint32_t>(name.size()));
  w.bytes(name);
  w.u8(kDtypeF64);
  w.u32(static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) w.u64(d);
  for (double v : t.data()) w.f64(v);
}

void put_bytes(Writer& w, const std::string& name, const std::string& payload) {
  w.u32(static_cast<std::uint32_t>(name.size()));
  w.bytes(name);
  w.u8(kDtypeBytes);
  w.u32(1);
  w.u64(payload.size());
  w.bytes(payload);
}

std::string block_prefix(int b) { return "block." + std::to_string(b) + "."; }

}  // namespace

nlohmann::json config_to_json(const ModelConfig& c) {
  return {{"blocks", c.blocks}, {"d_model", c.d_model}, {"heads", c.heads},  {"d_ffn", c.d_ffn},
          {"vocab", c.vocab},   {"seq_len", c.seq_len}, {"seed", c.seed}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.blocks = j.at("blocks").get<int>();
  c.d_model = j.at("d_model").get<int>();
  c.heads = j.at("heads").get<int>();
  c.d_ffn = j.at("d_ffn").get<int>();
  c.vocab = j.at("vocab").get<int>();
  c.seq_len = j.at("seq_len").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.validate();
  return c;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params,
                     const AdapterSet* adapters, nlohmann::json metadata) {
  metadata["fingerprint"] = params.config.fingerprint();
  metadata["config"] = config_to_json(params.config);
  if (adapters != nullptr) {
    metadata["adapter"] = {{"mode", mode_name(adapters->mode())},
                           {"rank", adapters->rank()},
                           {"scale", adapters->scale()}};
  } else {
    metadata.erase("adapter");
  }

  std::vector<std::pair<std::string, const Tensor*>> tensors;
  tensors.emplace_back("tok_embedding", &params.tok_embedding);
  tensors.emplace_back("pos_embedding", &params.pos_embedding);
  for (int b = 0; b < params.config.blocks; ++b) {
    tensors.emplace_back(block_prefix(b) + "attn_norm", &params.norms[b].attn);
    tensors.emplace_back(block_prefix(b) + "ffn_norm", &params.norms[b].ffn);
  }
  tensors.emplace_back("final_norm", &params.final_norm);
  const auto layers = enumerate_layers(params.config);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    tensors.emplace_back("base." + layers[i].str(), &params.linear[i]);
  }
  if (adapters != nullptr) {
    for (std::size_t i = 0; i < adapters->size(); ++i) {
      const std::string name = adapters->layers()[i].str();
      if (adapters->mode() == AdapterMode::kLora) {
        tensors.emplace_back("lora." + name + ".B", &adapters->pair(i).b);
        tensors.emplace_back("lora." + name + ".A", &adapters->pair(i).a);
      } else {
        tensors.emplace_back("fft." + name + ".delta", &adapters->dense(i));
      }
    }
  }

  Writer w;
  w.bytes(std::string(kMagic, 4));
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(tensors.size() + 1));
  w.u64(0);  // total length, patched below
  put_bytes(w, kMetaName, metadata.dump());
  for (const auto& [name, t] : tensors) put_tensor(w, name, *t);

  std::string& buf = w.buffer();
  const std::uint64_t total = buf.size() + 4;
  for (int i = 0; i < 8; ++i) buf[12 + i] = static_cast<char>(total >> (8 * i));
  const std::uint32_t crc = crc_of(buf.data(), buf.size());
  w.u32(crc);
  write_file_atomic(path, buf);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  const std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string p = path.string();

  if (buf.size() < kHeaderBytes + 4) throw TruncatedError("checkpoint " + p + " is truncated");
  if (std::memcmp(buf.data(), kMagic, 4) != 0) throw IoError(p + " is not an ILAC checkpoint");
  Reader header(buf, kHeaderBytes, p);
  header.seek(4);
  const std::uint32_t version = header.u32();
  const std::uint32_t count = header.u32();
  const std::uint64_t total = header.u64();
  if (total != buf.size()) {
    throw TruncatedError("checkpoint " + p + " holds " + std::to_string(buf.size()) +
                         " bytes, header declares " + std::to_string(total));
  }
  const std::size_t body_end = buf.size() - 4;
  Reader trailer(buf, buf.size(), p);
  trailer.seek(body_end);
  if (trailer.u32() != crc_of(buf.data(), body_end)) {
    throw ChecksumError("checkpoint " + p + " failed its CRC-32 check");
  }
  if (version != kCheckpointVersion) {
    throw VersionError("checkpoint " + p + " has format version " + std::to_string(version) +
                       ", this build reads " + std::to_string(kCheckpointVersion));
  }

  Reader r(buf, body_end, p);
  r.seek(kHeaderBytes);
  std::map<std::string, Tensor> tensors;
  std::string meta_text;
  bool have_meta = false;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.bytes(r.u32());
    const std::uint8_t dtype = r.u8();
    const std::uint32_t ndims = r.u32();
    Shape shape;
    for (std::uint32_t d = 0; d < ndims; ++d) shape.push_back(r.u64());
    if (tensors.count(name) || (have_meta && name == kMetaName)) {
      throw IoError("checkpoint " + p + " repeats record '" + name + "'");
    }
    if (dtype == kDtypeBytes) {
      if (ndims != 1) throw IoError("byte record '" + name + "' must be 1-D");
      if (name != kMetaName) throw IoError("unexpected byte record '" + name + "'");
      meta_text = r.bytes(shape[0]);
      have_meta = true;
    } else if (dtype == kDtypeF64) {
      const std::size_t n = shape_size(shape);
      r.need(n * 8);
      std::vector<double> values(n);
      for (double& v : values) v = r.f64();
      tensors.emplace(name, Tensor(std::move(shape), std::move(values)));
    } else {
      throw IoError("record '" + name + "' has unknown dtype " + std::to_string(dtype));
    }
  }
  if (r.pos() != body_end) throw IoError("checkpoint " + p + " has trailing bytes");
  if (!have_meta) throw IoError("checkpoint " + p + " has no metadata record");

  Checkpoint ck;
  try {
    ck.metadata = nlohmann::json::parse(meta_text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("checkpoint " + p + " metadata: " + e.what());
  }
  auto take = [&](const std::string& name) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw IoError("checkpoint " + p + " lacks tensor '" + name + "'");
    Tensor t = std::move(it->second);
    tensors.erase(it);
    return t;
  };

  ModelParams& params = ck.params;
  params.config = config_from_json(ck.metadata.at("config"));
  if (ck.metadata.value("fingerprint", "") != params.config.fingerprint()) {
    throw ComparisonError("checkpoint " + p + " fingerprint does not match its config");
  }
  params.tok_embedding = take("tok_embedding");
  params.pos_embedding = take("pos_embedding");
  for (int b = 0; b < params.config.blocks; ++b) {
    params.norms.push_back(
        BlockNorms{take(block_prefix(b) + "attn_norm"), take(block_prefix(b) + "ffn_norm")});
  }
  params.final_norm = take("final_norm");
  const auto layers = enumerate_layers(params.config);
  for (const LayerId& id : layers) {
    Tensor w = take("base." + id.str());
    if (w.shape() != layer_shape(params.config, id)) {
      throw DimensionError("checkpoint layer " + id.str() + " has shape " +
                           shape_string(w.shape()));
    }
    params.linear.push_back(std::move(w));
  }

  if (ck.metadata.contains("adapter")) {
    const auto& a = ck.metadata.at("adapter");
    const AdapterMode mode = mode_from_name(a.at("mode").get<std::string>());
    std::vector<LayerId> present;
    std::vector<LoraPair> pairs;
    std::vector<Tensor> deltas;
    for (const LayerId& id : layers) {
      if (mode == AdapterMode::kLora) {
        if (!tensors.count("lora." + id.str() + ".B")) continue;
        present.push_back(id);
        Tensor b = take("lora." + id.str() + ".B");
        Tensor at = take("lora." + id.str() + ".A");
        pairs.push_back(LoraPair{std::move(b), std::move(at)});
      } else {
        if (!tensors.count("fft." + id.str() + ".delta")) continue;
        present.push_back(id);
        deltas.push_back(take("fft." + id.str() + ".delta"));
      }
    }
    if (mode == AdapterMode::kLora) {
      ck.adapters = AdapterSet::lora(std::move(present), std::move(pairs), a.at("rank").get<int>(),
                                     a.at("scale").get<double>());
    } else {
      ck.adapters = AdapterSet::fft(std::move(present), std::move(deltas));
    }
    check_adapter_shapes(params, *ck.adapters);
  }
  if (!tensors.empty()) {
    throw IoError("checkpoint " + p + " has unrecognized tensor '" + tensors.begin()->first + "'");
  }
  return ck;
}

}  // namespace ila
