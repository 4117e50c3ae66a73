#include <nlohmann/json.hpp>

#include "binary_io.hpp"
#include "mapo/error.hpp"
#include "mapo/preference.hpp"

namespace mapo::pref {

namespace {

constexpr const char* kFormat = "mapo-preferences";
constexpr int kFormatVersion = 1;

void put_mask(std::string& out, const BinaryMask& m) {
  const std::size_t n = m.size();
  for (std::size_t byte = 0; byte < (n + 7) / 8; ++byte) {
    unsigned v = 0;
    for (std::size_t bit = 0; bit < 8 && byte * 8 + bit < n; ++bit) v |= static_cast<unsigned>(m[byte * 8 + bit]) << bit;
    out.push_back(static_cast<char>(v));
  }
}

BinaryMask get_mask(io::Reader& r, std::size_t h, std::size_t w) {
  const std::size_t n = h * w;
  auto packed = r.take((n + 7) / 8);
  std::vector<std::uint8_t> bits(n);
  for (std::size_t i = 0; i < n; ++i) bits[i] = (static_cast<unsigned char>(packed[i / 8]) >> (i % 8)) & 1U;
  return BinaryMask(h, w, std::move(bits));
}

}  // namespace

std::string encode_preference_set(const PreferenceSet& set) {
  nlohmann::json m;
  m["format"] = kFormat;
  m["format_version"] = kFormatVersion;
  m["round"] = set.round;
  m["strategy"] = to_string(set.strategy);
  m["grid"] = set.grid.rates;
  m["tau"] = set.tau;
  m["seeds"] = {{"sampling", set.sampling_seed}};
  m["reference_version"] = set.reference_version;
  m["height"] = set.height;
  m["width"] = set.width;
  m["records"] = set.records.size();
  std::string out = m.dump();
  out.push_back('\n');
  for (const auto& r : set.records) {
    io::put_u32(out, static_cast<std::uint32_t>(r.sample_id.size()));
    out += r.sample_id;
    out.push_back(static_cast<char>(r.pair ? 1 : 0));
    io::put_u32(out, static_cast<std::uint32_t>(r.k_best));
    io::put_f64(out, r.dice_best);
    io::put_f64(out, r.mean_variance);
    io::put_i32(out, r.pair ? static_cast<std::int32_t>(r.pair->k_neg) : -1);
    io::put_f64(out, r.pair ? r.pair->dice_neg : 0.0);
    if (r.pair) {
      require(r.pair->pos.height() == set.height && r.pair->pos.width() == set.width,
              "preference mask does not match the set extents");
      put_mask(out, r.pair->pos);
      put_mask(out, r.pair->neg);
    }
  }
  return out;
}

PreferenceSet decode_preference_set(const std::string& bytes) {
  const auto newline = bytes.find('\n');
  if (newline == std::string::npos) throw DataError("preference cache: missing manifest line");
  PreferenceSet set;
  std::size_t count = 0;
  try {
    const auto m = nlohmann::json::parse(bytes.substr(0, newline));
    if (m.at("format") != kFormat || m.at("format_version") != kFormatVersion)
      throw DataError("preference cache: unsupported format");
    set.round = m.at("round").get<std::uint64_t>();
    set.strategy = parse_strategy(m.at("strategy").get<std::string>());
    set.grid.rates = m.at("grid").get<std::vector<double>>();
    set.tau = m.at("tau").get<double>();
    set.sampling_seed = m.at("seeds").at("sampling").get<std::uint64_t>();
    set.reference_version = m.at("reference_version").get<std::uint64_t>();
    set.height = m.at("height").get<std::size_t>();
    set.width = m.at("width").get<std::size_t>();
    count = m.at("records").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("preference cache: bad manifest: ") + e.what());
  } catch (const ContractViolation& e) {
    throw DataError(std::string("preference cache: ") + e.what());
  }

  io::Reader r(std::string_view(bytes).substr(newline + 1), "preference cache");
  for (std::size_t i = 0; i < count; ++i) {
    PreferenceRecord rec;
    rec.sample_id = std::string(r.take(r.u32()));
    const std::uint8_t has_pair = r.u8();
    if (has_pair > 1) throw DataError("preference cache: corrupt record " + rec.sample_id);
    rec.k_best = r.u32();
    rec.dice_best = r.f64();
    rec.mean_variance = r.f64();
    const std::int32_t k_neg = r.i32();
    const double dice_neg = r.f64();
    if (has_pair) {
      if (k_neg < 0) throw DataError("preference cache: corrupt record " + rec.sample_id);
      PreferencePair p;
      p.pos = get_mask(r, set.height, set.width);
      p.neg = get_mask(r, set.height, set.width);
      p.k_pos = rec.k_best;
      p.k_neg = static_cast<std::size_t>(k_neg);
      p.dice_pos = rec.dice_best;
      p.dice_neg = dice_neg;
      p.tau = set.tau;
      rec.pair = std::move(p);
    } else if (k_neg != -1 || dice_neg != 0.0) {
      throw DataError("preference cache: corrupt record " + rec.sample_id);
    }
    set.records.push_back(std::move(rec));
  }
  if (!r.done()) throw DataError("preference cache: trailing bytes");
  return set;
}

void save_preference_set(const std::string& path, const PreferenceSet& set) {
  io::write_file(path, encode_preference_set(set));
}

PreferenceSet load_preference_set(const std::string& path) {
  try {
    return decode_preference_set(io::read_file(path));
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  }
}

}  // namespace mapo::pref
