#include <fstream>
#include <iterator>
#include <nlohmann/json.hpp>

#include "binary_io.hpp"
#include "mapo/error.hpp"
#include "mapo/segnet.hpp"

namespace mapo::io {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("short write to " + path);
}

}  // namespace mapo::io

namespace mapo::segnet {

namespace {
constexpr const char* kFormat = "mapo-checkpoint";
constexpr int kFormatVersion = 1;
}  // namespace

std::string encode_checkpoint(const ModelState& state) {
  nlohmann::json manifest;
  manifest["format"] = kFormat;
  manifest["format_version"] = kFormatVersion;
  const ModelSpec& s = state.spec();
  manifest["spec"] = {{"kind", to_string(s.kind)},
                      {"channels", s.channels},
                      {"in_channels", s.in_channels},
                      {"height", s.height},
                      {"width", s.width},
                      {"dropout_sites", s.dropout_sites}};
  manifest["version"] = state.version();
  manifest["lineage"] = state.lineage();
  nlohmann::json params = nlohmann::json::array();
  for (const auto& p : state.params()) params.push_back({{"name", p.name}, {"shape", p.value.shape()}});
  manifest["params"] = std::move(params);

  std::string out = manifest.dump();
  out.push_back('\n');
  for (const auto& p : state.params())
    for (double v : p.value.data()) io::put_f64(out, v);
  return out;
}

ModelState decode_checkpoint(const std::string& bytes) {
  const auto newline = bytes.find('\n');
  if (newline == std::string::npos) throw DataError("checkpoint: missing manifest line");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.substr(0, newline));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: bad manifest: ") + e.what());
  }
  try {
    if (manifest.at("format") != kFormat || manifest.at("format_version") != kFormatVersion)
      throw DataError("checkpoint: unsupported format");
    const auto& js = manifest.at("spec");
    ModelSpec spec;
    spec.kind = parse_model_kind(js.at("kind").get<std::string>());
    spec.channels = js.at("channels").get<std::vector<std::size_t>>();
    spec.in_channels = js.at("in_channels").get<std::size_t>();
    spec.height = js.at("height").get<std::size_t>();
    spec.width = js.at("width").get<std::size_t>();
    spec.dropout_sites = js.at("dropout_sites").get<std::vector<std::size_t>>();
    validate(spec);

    const auto decls = architecture(spec.kind).declare(spec);
    const auto& jp = manifest.at("params");
    if (jp.size() != decls.size()) throw DataError("checkpoint: parameter count does not match architecture");

    io::Reader reader(std::string_view(bytes).substr(newline + 1), "checkpoint");
    std::vector<NamedTensor> params;
    for (std::size_t i = 0; i < decls.size(); ++i) {
      const auto name = jp[i].at("name").get<std::string>();
      const auto shape = jp[i].at("shape").get<Shape>();
      if (name != decls[i].name || shape != decls[i].shape)
        throw DataError("checkpoint: parameter '" + name + "' does not match architecture");
      std::vector<double> data(element_count(shape));
      for (double& v : data) v = reader.f64();
      params.push_back({name, Tensor(shape, std::move(data))});
    }
    if (!reader.done()) throw DataError("checkpoint: trailing bytes after parameters");
    return ModelState(std::move(spec), std::move(params), manifest.at("version").get<std::uint64_t>(),
                      manifest.at("lineage").get<std::vector<std::string>>());
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: bad manifest: ") + e.what());
  } catch (const ContractViolation& e) {
    throw DataError(std::string("checkpoint: ") + e.what());
  }
}

void save_checkpoint(const std::string& path, const ModelState& state) {
  io::write_file(path, encode_checkpoint(state));
}

ModelState load_checkpoint(const std::string& path) {
  try {
    return decode_checkpoint(io::read_file(path));
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  }
}

}  // namespace mapo::segnet
