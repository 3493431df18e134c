#include "genrm/lm/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <iterator>

#include "genrm/common/digest.hpp"

namespace genrm::lm {

namespace {

constexpr char kMagic[4] = {'P', 'G', 'L', 'B'};

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes_.insert(bytes_.end(), s.begin(), s.end());
  }
  void raw(const char* p, std::size_t n) { bytes_.insert(bytes_.end(), p, p + n); }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                  bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }
  void expect_magic() {
    need(4);
    for (char c : kMagic) {
      if (bytes_[pos_++] != static_cast<std::uint8_t>(c)) {
        throw CheckpointFormatError("bad checkpoint magic");
      }
    }
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) {
      throw CheckpointFormatError("checkpoint truncated at byte " + std::to_string(pos_));
    }
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& checkpoint) {
  const Model& model = checkpoint.model;
  const ModelConfig& c = model.config();
  Writer w;
  w.raw(kMagic, 4);
  w.u32(kCheckpointVersion);
  w.i32(c.vocab_size);
  w.i32(c.layers);
  w.i32(c.heads);
  w.i32(c.embed_dim);
  w.i32(c.context_length);
  w.i32(c.mlp_dim);
  w.i32(static_cast<std::int32_t>(c.head));
  w.str(checkpoint.provenance.method);
  w.i32(checkpoint.provenance.iteration);
  w.u64(checkpoint.provenance.seed);
  w.str(checkpoint.provenance.parent_id);

  const auto& params = model.parameters();
  w.u32(static_cast<std::uint32_t>(params.size()));
  std::uint64_t offset = 0;
  for (const auto& p : params) {
    w.str(p.name);
    w.u32(static_cast<std::uint32_t>(p.tensor.rank()));
    for (std::size_t e : p.tensor.shape()) w.u32(static_cast<std::uint32_t>(e));
    w.u64(offset);
    w.u64(p.tensor.size());
    offset += p.tensor.size();
  }
  w.u64(offset);
  for (const auto& p : params) {
    for (double v : p.tensor.data()) w.f32(static_cast<float>(v));
  }
  return w.take();
}

Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.expect_magic();
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw CheckpointFormatError("unsupported checkpoint version " + std::to_string(version));
  }
  ModelConfig c;
  c.vocab_size = r.i32();
  c.layers = r.i32();
  c.heads = r.i32();
  c.embed_dim = r.i32();
  c.context_length = r.i32();
  c.mlp_dim = r.i32();
  const std::int32_t head = r.i32();
  if (head < 0 || head > 2) throw CheckpointFormatError("bad head variant " + std::to_string(head));
  c.head = static_cast<HeadVariant>(head);
  Provenance prov;
  prov.method = r.str();
  prov.iteration = r.i32();
  prov.seed = r.u64();
  prov.parent_id = r.str();

  struct Entry {
    std::string name;
    nd::Shape shape;
    std::uint64_t offset, length;
  };
  const std::uint32_t count = r.u32();
  std::vector<Entry> manifest;
  for (std::uint32_t i = 0; i < count; ++i) {
    Entry e;
    e.name = r.str();
    const std::uint32_t rank = r.u32();
    for (std::uint32_t k = 0; k < rank; ++k) e.shape.push_back(r.u32());
    e.offset = r.u64();
    e.length = r.u64();
    if (e.length != nd::numel(e.shape)) {
      throw CheckpointFormatError("manifest entry " + e.name + " length mismatch");
    }
    manifest.push_back(std::move(e));
  }
  const std::uint64_t total = r.u64();
  std::vector<float> payload(total);
  for (auto& v : payload) v = r.f32();
  if (!r.done()) throw CheckpointFormatError("trailing bytes after checkpoint payload");

  std::vector<NamedTensor> params;
  for (const Entry& e : manifest) {
    if (e.offset + e.length > total) {
      throw CheckpointFormatError("manifest entry " + e.name + " exceeds payload");
    }
    std::vector<double> values(payload.begin() + static_cast<std::ptrdiff_t>(e.offset),
                               payload.begin() + static_cast<std::ptrdiff_t>(e.offset + e.length));
    params.push_back({e.name, nd::Tensor::from(e.shape, std::move(values), true)});
  }
  try {
    return Checkpoint{Model::from_parameters(c, std::move(params)), std::move(prov)};
  } catch (const std::invalid_argument& ex) {
    throw CheckpointFormatError(std::string("checkpoint inconsistent with config: ") + ex.what());
  }
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(checkpoint);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::ios_base::failure("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::ios_base::failure("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::ios_base::failure("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

void round_to_storage_precision(Model& model) {
  for (auto& p : model.trainable()) {
    for (double& v : p.mutable_data()) v = static_cast<double>(static_cast<float>(v));
  }
}

std::string Checkpoint::digest() const { return sha256_hex(serialize_checkpoint(*this)); }

std::string Checkpoint::id() const { return digest().substr(0, 16); }

}  // namespace genrm::lm
