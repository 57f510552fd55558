#include "datcft/serialize.hpp"

#include <cstring>
#include <fstream>

#include "datcft/errors.hpp"
#include "json.hpp"

namespace datcft {

namespace {

constexpr char kMagic[8] = {'D', 'A', 'T', 'C', 'F', 'T', '0', '1'};

void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw IoError("truncated tensor container");
  return static_cast<uint32_t>(b[0]) | static_cast<uint32_t>(b[1]) << 8 |
         static_cast<uint32_t>(b[2]) << 16 | static_cast<uint32_t>(b[3]) << 24;
}

void put_f64(std::ostream& os, double v) {
  uint64_t u;
  std::memcpy(&u, &v, 8);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(u >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

double get_f64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw IoError("truncated tensor container");
  uint64_t u = 0;
  for (int i = 0; i < 8; ++i) u |= static_cast<uint64_t>(b[i]) << (8 * i);
  double v;
  std::memcpy(&v, &u, 8);
  return v;
}

}  // namespace

void save_named_tensors(const std::string& path, const std::string& meta_json,
                        const std::vector<std::pair<std::string, const Tensor*>>& items) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os.write(kMagic, 8);
  put_u32(os, static_cast<uint32_t>(meta_json.size()));
  os.write(meta_json.data(), static_cast<std::streamsize>(meta_json.size()));
  put_u32(os, static_cast<uint32_t>(items.size()));
  for (const auto& [name, t] : items) {
    put_u32(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(os, static_cast<uint32_t>(t->shape.size()));
    for (int d : t->shape) put_u32(os, static_cast<uint32_t>(d));
    for (double v : t->data) put_f64(os, v);
  }
  if (!os) throw IoError("write failed for '" + path + "'");
}

NamedTensorFile load_named_tensors(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path + "'");
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0)
    throw IoError("'" + path + "' is not a tensor container");
  NamedTensorFile out;
  const uint32_t meta_len = get_u32(is);
  out.meta_json.resize(meta_len);
  is.read(out.meta_json.data(), meta_len);
  if (!is) throw IoError("truncated tensor container");
  const uint32_t n = get_u32(is);
  out.tensors.reserve(n);
  for (uint32_t i = 0; i < n; ++i) {
    const uint32_t name_len = get_u32(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const uint32_t ndim = get_u32(is);
    std::vector<int> shape(ndim);
    for (uint32_t k = 0; k < ndim; ++k) shape[k] = static_cast<int>(get_u32(is));
    Tensor t = Tensor::zeros(shape);
    for (double& v : t.data) v = get_f64(is);
    out.tensors.emplace_back(std::move(name), std::move(t));
  }
  return out;
}

void save_checkpoint(const std::string& path, const Model& m) {
  nlohmann::json meta;
  meta["kind"] = "model";
  meta["version"] = 1;
  meta["config"] = nlohmann::json::parse(m.cfg.to_json());
  std::vector<std::pair<std::string, const Tensor*>> items;
  for (const auto& np : m.params()) items.emplace_back(np.name, &np.v->val);
  save_named_tensors(path, meta.dump(), items);
}

Model load_checkpoint(const std::string& path) {
  NamedTensorFile file = load_named_tensors(path);
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(file.meta_json);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("bad checkpoint metadata: ") + e.what());
  }
  if (meta.value("kind", std::string()) != "model")
    throw IoError("'" + path + "' is not a model checkpoint");
  Model m = build_model(ModelConfig::from_json(meta.at("config").dump()));
  ParamList pl = m.params();
  if (pl.size() != file.tensors.size())
    throw IoError("checkpoint parameter count does not match the configured model");
  for (size_t i = 0; i < pl.size(); ++i) {
    const auto& [name, t] = file.tensors[i];
    if (name != pl[i].name) throw IoError("checkpoint parameter order mismatch at '" + name + "'");
    if (!(t.shape == pl[i].v->val.shape))
      throw IoError("checkpoint shape mismatch for '" + name + "'");
    pl[i].v->val.data = t.data;
  }
  return m;
}

}  // namespace datcft
