#include "owl/checkpoint.hpp"

#include <bit>
#include <cstring>

#include <nlohmann/json.hpp>

#include "owl/error.hpp"
#include "owl/io.hpp"

namespace owl {
namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint IO assumes a little-endian host");

void put_u32(std::string& out, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v;
    std::memcpy(&v, bytes_.data() + pos_, 4);
    pos_ += 4;
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void reals(std::span<Real> out) {
    need(out.size() * sizeof(Real));
    std::memcpy(out.data(), bytes_.data() + pos_, out.size() * sizeof(Real));
    pos_ += out.size() * sizeof(Real);
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    require(pos_ + n <= bytes_.size(), ErrorKind::kIntegrity, "checkpoint truncated");
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_params(const ModelParams& params) {
  const auto& c = params.config;
  std::string out = "OWLM";
  put_u32(out, kCheckpointVersion);
  for (std::size_t v : {c.layers, c.heads, c.dim, c.vocab, c.mlp_dim, c.feature_dim,
                        c.visual_slots, c.max_seq}) {
    put_u32(out, static_cast<std::uint32_t>(v));
  }
  const auto tensors = params.named_tensors();
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, m] : tensors) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<std::uint32_t>(m->rows()));
    put_u32(out, static_cast<std::uint32_t>(m->cols()));
    out.append(reinterpret_cast<const char*>(m->data()), m->size() * sizeof(Real));
  }
  return out;
}

ModelParams deserialize_params(const std::string& bytes) {
  Reader r(bytes);
  require(r.str(4) == "OWLM", ErrorKind::kIntegrity, "not an OWLM checkpoint (bad magic)");
  const std::uint32_t version = r.u32();
  require(version == kCheckpointVersion, ErrorKind::kIntegrity,
          "unsupported checkpoint version " + std::to_string(version));
  ModelConfig c;
  c.layers = r.u32();
  c.heads = r.u32();
  c.dim = r.u32();
  c.vocab = r.u32();
  c.mlp_dim = r.u32();
  c.feature_dim = r.u32();
  c.visual_slots = r.u32();
  c.max_seq = r.u32();
  ModelParams params = ModelParams::zeros_like(c);
  auto tensors = params.named_tensors();
  const std::uint32_t count = r.u32();
  require(count == tensors.size(), ErrorKind::kIntegrity, "checkpoint tensor count mismatch");
  for (auto& [name, m] : tensors) {
    const std::string got = r.str(r.u32());
    require(got == name, ErrorKind::kIntegrity, "checkpoint tensor '" + got + "' where '" + name + "' expected");
    const std::uint32_t rows = r.u32(), cols = r.u32();
    require(rows == m->rows() && cols == m->cols(), ErrorKind::kIntegrity,
            "checkpoint tensor '" + name + "' has wrong shape");
    r.reals(m->flat());
  }
  require(r.done(), ErrorKind::kIntegrity, "trailing bytes after checkpoint");
  return params;
}

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
  const std::string bytes = serialize_params(params);
  write_file_atomic(path, bytes);
  const auto& c = params.config;
  nlohmann::ordered_json manifest;
  manifest["format"] = "OWLM";
  manifest["version"] = kCheckpointVersion;
  manifest["fingerprint"] = bytes_fingerprint(bytes);
  manifest["config"] = {{"layers", c.layers},           {"heads", c.heads},
                        {"dim", c.dim},                 {"vocab", c.vocab},
                        {"mlp_dim", c.mlp_dim},         {"feature_dim", c.feature_dim},
                        {"visual_slots", c.visual_slots}, {"max_seq", c.max_seq}};
  auto& shapes = manifest["tensors"] = nlohmann::ordered_json::array();
  for (const auto& [name, m] : params.named_tensors()) {
    shapes.push_back({{"name", name}, {"shape", {m->rows(), m->cols()}}});
  }
  std::filesystem::path side = path;
  side += ".json";
  write_file_atomic(side, manifest.dump(2) + "\n");
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  return deserialize_params(read_file(path));
}

std::string params_fingerprint(const ModelParams& params) {
  return bytes_fingerprint(serialize_params(params));
}

}  // namespace owl
