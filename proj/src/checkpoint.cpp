#include "flare/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace flare {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'F', 'L', 'A', 'R', 'E', 'C', 'K', 'P'};

template <class T>
constexpr const char* dtype_name() {
  return sizeof(T) == 4 ? "f32" : "f64";
}

template <class V>
void put(std::ostream& os, V v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class V>
V get(std::istream& is, const std::filesystem::path& path) {
  V v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw std::runtime_error("checkpoint " + path.string() + ": truncated");
  return v;
}

struct Opened {
  std::ifstream in;
  CheckpointHeader header;
  std::uint64_t payload_start = 0;
};

Opened open(const std::filesystem::path& path) {
  Opened o;
  o.in.open(path, std::ios::binary);
  if (!o.in) throw std::runtime_error("cannot open checkpoint " + path.string());
  char magic[8];
  if (!o.in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) {
    throw std::runtime_error("checkpoint " + path.string() + ": bad magic");
  }
  const auto version = get<std::uint32_t>(o.in, path);
  if (version != kCheckpointVersion) {
    throw std::runtime_error("checkpoint " + path.string() + ": unsupported version " + std::to_string(version));
  }
  const auto len = get<std::uint64_t>(o.in, path);
  std::string text(len, '\0');
  if (!o.in.read(text.data(), static_cast<std::streamsize>(len))) {
    throw std::runtime_error("checkpoint " + path.string() + ": truncated header");
  }
  o.header.raw = nlohmann::json::parse(text);
  o.header.config = ModelConfig::from_json(o.header.raw.at("model"));
  o.header.dtype = o.header.raw.at("dtype").get<std::string>();
  if (o.header.dtype != "f32" && o.header.dtype != "f64") {
    throw std::runtime_error("checkpoint " + path.string() + ": unknown dtype " + o.header.dtype);
  }
  o.header.meta = o.header.raw.value("meta", nlohmann::json::object());
  o.payload_start = 8 + 4 + 8 + len;
  return o;
}

template <class S, class T>
Matrix<T> read_tensor(std::istream& in, std::size_t rows, std::size_t cols, const std::filesystem::path& path) {
  std::vector<S> buf(rows * cols);
  if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(S)))) {
    throw std::runtime_error("checkpoint " + path.string() + ": truncated payload");
  }
  Matrix<T> m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::size_t i = 0; i < buf.size(); ++i) m.data()[i] = static_cast<T>(buf[i]);
  return m;
}

}  // namespace

template <class T>
void save_checkpoint(const std::filesystem::path& path, const FlareModel<T>& model, const nlohmann::json& meta) {
  nlohmann::json tensors = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& p : model.params()) {
    const auto bytes = static_cast<std::uint64_t>(p.value.size()) * sizeof(T);
    tensors.push_back({{"name", p.name}, {"shape", {p.value.rows(), p.value.cols()}}, {"offset", offset}});
    offset += bytes;
  }
  const nlohmann::json header = {
      {"format", "flare-checkpoint"},
      {"model", model.config().to_json()},
      {"dtype", dtype_name<T>()},
      {"tensors", tensors},
      {"payload_bytes", offset},
      {"meta", meta},
  };
  const auto text = header.dump();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write checkpoint " + path.string());
    os.write(kMagic, 8);
    put<std::uint32_t>(os, kCheckpointVersion);
    put<std::uint64_t>(os, text.size());
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& p : model.params()) {
      os.write(reinterpret_cast<const char*>(p.value.data()), static_cast<std::streamsize>(p.value.size() * sizeof(T)));
    }
    if (!os) throw std::runtime_error("short write to checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

CheckpointHeader read_checkpoint_header(const std::filesystem::path& path) { return open(path).header; }

template <class T>
FlareModel<T> load_checkpoint(const std::filesystem::path& path, CheckpointHeader* header) {
  auto o = open(path);
  const bool f32 = o.header.dtype == "f32";
  ParamStore<T> store;
  for (const auto& t : o.header.raw.at("tensors")) {
    const auto name = t.at("name").get<std::string>();
    const auto rows = t.at("shape").at(0).get<std::size_t>();
    const auto cols = t.at("shape").at(1).get<std::size_t>();
    const auto offset = t.at("offset").get<std::uint64_t>();
    o.in.seekg(static_cast<std::streamoff>(o.payload_start + offset));
    store.add(name, f32 ? read_tensor<float, T>(o.in, rows, cols, path) : read_tensor<double, T>(o.in, rows, cols, path));
  }
  if (header) *header = o.header;
  return FlareModel<T>(o.header.config, std::move(store));
}

template void save_checkpoint<float>(const std::filesystem::path&, const FlareModel<float>&, const nlohmann::json&);
template void save_checkpoint<double>(const std::filesystem::path&, const FlareModel<double>&, const nlohmann::json&);
template FlareModel<float> load_checkpoint<float>(const std::filesystem::path&, CheckpointHeader*);
template FlareModel<double> load_checkpoint<double>(const std::filesystem::path&, CheckpointHeader*);

}  // namespace flare
