#include "thinkact/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "thinkact/error.hpp"

namespace thinkact::diff {

namespace {

void put_le(std::ostream& out, double v) {
  std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xFF);
  out.write(bytes, 8);
}

double get_le(const unsigned char* bytes) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

std::filesystem::path binary_path(const std::filesystem::path& manifest) {
  auto p = manifest;
  return p.replace_extension(".bin");
}

}  // namespace

void save_checkpoint(const std::filesystem::path& manifest, const ParameterStore& store, std::size_t global_step,
                     const Json& meta) {
  if (manifest.has_parent_path()) std::filesystem::create_directories(manifest.parent_path());
  const auto bin = binary_path(manifest);
  std::ofstream out(bin, std::ios::binary);
  if (!out) throw Error(ErrorKind::io_error, "cannot write " + bin.string());
  Json tensors = Json::array();
  std::size_t offset = 0;
  for (const auto& p : store.all()) {
    tensors.push_back({{"name", p.name},
                       {"shape", {p.value.rows(), p.value.cols()}},
                       {"offset", offset}});
    for (double v : p.value.data()) put_le(out, v);
    offset += p.value.size() * 8;
  }
  if (!out) throw Error(ErrorKind::io_error, "write failed for " + bin.string());

  Json j{{"dtype", "float64"},
         {"byte_order", "little"},
         {"global_step", global_step},
         {"binary", bin.filename().string()},
         {"tensors", std::move(tensors)},
         {"meta", meta}};
  std::ofstream m(manifest, std::ios::binary);
  if (!m) throw Error(ErrorKind::io_error, "cannot write " + manifest.string());
  m << j.dump(2) << '\n';
}

Json read_manifest(const std::filesystem::path& manifest) {
  std::ifstream in(manifest, std::ios::binary);
  if (!in) throw Error(ErrorKind::io_error, "cannot read " + manifest.string());
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::parse_error, manifest.string() + ": " + e.what());
  }
}

CheckpointInfo load_checkpoint(const std::filesystem::path& manifest, ParameterStore& store) {
  const Json j = read_manifest(manifest);
  if (j.value("dtype", "") != "float64") throw Error(ErrorKind::parse_error, "unsupported dtype");
  const auto bin = manifest.parent_path() / j.at("binary").get<std::string>();
  std::ifstream in(bin, std::ios::binary);
  if (!in) throw Error(ErrorKind::io_error, "cannot read " + bin.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  const auto& tensors = j.at("tensors");
  if (tensors.size() != store.all().size())
    throw Error(ErrorKind::shape_mismatch, "checkpoint holds " + std::to_string(tensors.size()) +
                                               " tensors, model has " + std::to_string(store.all().size()));
  for (const auto& t : tensors) {
    const auto name = t.at("name").get<std::string>();
    Value v = store.get(name);
    const Shape shape{t.at("shape")[0].get<std::size_t>(), t.at("shape")[1].get<std::size_t>()};
    if (shape != v.shape())
      throw Error(ErrorKind::shape_mismatch, name + ": checkpoint " + shape.str() + " vs model " + v.shape().str());
    const std::size_t offset = t.at("offset").get<std::size_t>();
    if (offset + v.size() * 8 > bytes.size()) throw Error(ErrorKind::parse_error, name + ": truncated binary");
    auto data = v.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = get_le(bytes.data() + offset + 8 * i);
  }
  return {j.at("global_step").get<std::size_t>(), j.value("meta", Json::object())};
}

}  // namespace thinkact::diff
