#include "cloudmamba/pipeline/checkpoint.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <sstream>

#include <openssl/evp.h>

namespace cloudmamba::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'C', 'M', 'C', 'K', 'P', 'T', '0', '1'};
constexpr const char* kFormat = "cloudmamba-checkpoint-v1";

template <class T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  Reader(std::string bytes, std::string name) : bytes_(std::move(bytes)), name_(std::move(name)) {}

  template <class T>
  T get() {
    T v;
    std::memcpy(&v, take(sizeof(T)), sizeof(T));
    return v;
  }
  const char* take(std::size_t n) {
    if (bytes_.size() - pos_ < n) throw CorruptFile(name_ + ": truncated checkpoint");
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::string bytes_;
  std::string name_;
  std::size_t pos_ = 0;
};

std::string read_all(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open " + file.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_all(const fs::path& file, const std::string& bytes) {
  // Written to a temporary first so a crash never leaves half a checkpoint.
  const fs::path tmp = file.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("cannot write " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, file, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + ": " + ec.message());
}

fs::path strip(const fs::path& p) {
  if (p.extension() == ".bin" || p.extension() == ".json") return fs::path(p).replace_extension();
  return p;
}

}  // namespace

std::string sha256_hex(const std::string& bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md.data(), &len, EVP_sha256(), nullptr) != 1) {
    throw IoError("SHA-256 computation failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[md[i] >> 4]);
    out.push_back(hex[md[i] & 15]);
  }
  return out;
}

std::string sha256_file(const fs::path& file) { return sha256_hex(read_all(file)); }

void save_checkpoint(const fs::path& base, const nn::ParameterStore& params, const RunConfig& cfg, const json& meta) {
  std::string blob(kMagic, sizeof(kMagic));
  put<std::uint64_t>(blob, params.entries().size());
  for (const auto& p : params.entries()) {
    const Tensor& v = p.var.value();
    put<std::uint32_t>(blob, static_cast<std::uint32_t>(p.name.size()));
    blob += p.name;
    put<std::uint32_t>(blob, static_cast<std::uint32_t>(v.rank()));
    for (int d : v.shape()) put<std::int32_t>(blob, d);
    blob.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(Real));
  }
  if (!base.parent_path().empty()) fs::create_directories(base.parent_path());
  fs::path bin = base, side = base;
  bin += ".bin";
  side += ".json";
  write_all(bin, blob);

  json j = meta;
  j["format"] = kFormat;
  j["config"] = to_json(cfg);
  j["parameters"] = params.entries().size();
  j["scalars"] = params.scalar_count();
  j["sha256"] = sha256_hex(blob);
  write_all(side, j.dump(2) + "\n");
}

void read_parameters(const fs::path& bin, nn::ParameterStore& params) {
  Reader r(read_all(bin), bin.string());
  if (std::memcmp(r.take(sizeof(kMagic)), kMagic, sizeof(kMagic)) != 0) {
    throw CorruptFile(bin.string() + ": not a cloudmamba checkpoint");
  }
  const auto count = r.get<std::uint64_t>();
  if (count != params.entries().size()) {
    throw CheckpointMismatch(bin.string() + " holds " + std::to_string(count) + " parameters, the model has " +
                             std::to_string(params.entries().size()));
  }
  for (const auto& p : params.entries()) {
    const auto name_len = r.get<std::uint32_t>();
    const std::string name(r.take(name_len), name_len);
    if (name != p.name) throw CheckpointMismatch("checkpoint parameter '" + name + "' where the model has '" + p.name + "'");
    const auto rank = r.get<std::uint32_t>();
    std::vector<int> shape(rank);
    for (auto& d : shape) d = r.get<std::int32_t>();
    ag::Var var = p.var;
    Tensor& v = var.mutable_value();
    if (shape != v.shape()) {
      throw CheckpointMismatch("parameter '" + name + "' is " + shape_string(shape) + " in the checkpoint but " +
                               shape_string(v.shape()) + " in the model");
    }
    std::memcpy(v.data(), r.take(v.size() * sizeof(Real)), v.size() * sizeof(Real));
  }
  if (!r.done()) throw CorruptFile(bin.string() + ": trailing bytes after the last parameter");
}

LoadedModel load_checkpoint(const fs::path& path, const model::ModelConfig* expected) {
  const fs::path base = strip(path);
  fs::path bin = base, side = base;
  bin += ".bin";
  side += ".json";
  if (!fs::exists(side)) throw IoError("checkpoint sidecar " + side.string() + " not found");
  if (!fs::exists(bin)) throw IoError("checkpoint weights " + bin.string() + " not found");
  json meta;
  try {
    meta = json::parse(read_all(side));
  } catch (const json::exception& e) {
    throw CorruptFile(side.string() + ": " + e.what());
  }
  if (meta.value("format", "") != kFormat) throw CorruptFile(side.string() + ": unknown checkpoint format");
  if (sha256_file(bin) != meta.value("sha256", "")) {
    throw CheckpointMismatch(bin.string() + " does not match the digest recorded in " + side.string());
  }
  LoadedModel out;
  out.config = merge_json(RunConfig{}, meta.at("config"));
  if (expected) {
    const auto diff = model_differences(*expected, out.config.model);
    if (!diff.empty()) {
      std::string fields;
      for (const auto& f : diff) fields += (fields.empty() ? "" : ", ") + f;
      throw CheckpointMismatch("config and checkpoint disagree on " + fields);
    }
  }
  out.meta = std::move(meta);
  out.net = std::make_unique<model::CloudMambaNet>(out.config.model, out.config.training.seed);
  read_parameters(bin, out.net->parameters());
  return out;
}

}  // namespace cloudmamba::pipeline
