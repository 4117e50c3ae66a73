#include "mapo/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>

#include "mapo/error.hpp"

namespace mapo::config {

namespace {

namespace pt = boost::property_tree;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  T value{};
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
  if (ec != std::errc{} || ptr != t.data() + t.size() || t.empty())
    throw ConfigError(fmt::format("{}: cannot parse '{}' as a number", key, t));
  return value;
}

bool parse_bool(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  if (t == "true" || t == "1" || t == "yes") return true;
  if (t == "false" || t == "0" || t == "no") return false;
  throw ConfigError(fmt::format("{}: expected true or false, got '{}'", key, t));
}

template <typename T>
std::vector<T> parse_number_list(const std::string& key, const std::string& text) {
  std::vector<T> out;
  for (const auto& item : split_list(text)) out.push_back(parse_number<T>(key, item));
  return out;
}

template <typename Fn>
auto translate(const std::string& key, Fn&& fn) {
  try {
    return fn();
  } catch (const ContractViolation& e) {
    throw ConfigError(fmt::format("{}: {}", key, e.what()));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(fmt::format("{}: {}", key, e.what()));
  }
}

template <typename T>
std::string join(const std::vector<T>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? ", " : "") + fmt::format("{}", xs[i]);
  return out;
}

using Setter = std::function<void(RunConfig&, const std::string& key, const std::string& value)>;

const std::map<std::string, std::map<std::string, Setter>>& schema() {
  using u64 = std::uint64_t;
  using sz = std::size_t;
  static const std::map<std::string, std::map<std::string, Setter>> table = {
      {"data",
       {
           {"kind", [](RunConfig& c, auto& k, auto& v) { c.data.kind = translate(k, [&] { return data::parse_task_kind(trim(v)); }); }},
           {"height", [](RunConfig& c, auto& k, auto& v) { c.data.height = parse_number<sz>(k, v); }},
           {"width", [](RunConfig& c, auto& k, auto& v) { c.data.width = parse_number<sz>(k, v); }},
           {"count", [](RunConfig& c, auto& k, auto& v) { c.data.count = parse_number<sz>(k, v); }},
           {"noise_std", [](RunConfig& c, auto& k, auto& v) { c.data.noise_std = parse_number<double>(k, v); }},
           {"boundary_blur", [](RunConfig& c, auto& k, auto& v) { c.data.boundary_blur = parse_number<double>(k, v); }},
           {"seed", [](RunConfig& c, auto& k, auto& v) { c.data.seed = parse_number<u64>(k, v); }},
           {"dir", [](RunConfig& c, auto&, auto& v) { c.data_dir = trim(v); }},
       }},
      {"model",
       {
           {"kind", [](RunConfig& c, auto& k, auto& v) { c.model.kind = translate(k, [&] { return segnet::parse_model_kind(trim(v)); }); }},
           {"channels", [](RunConfig& c, auto& k, auto& v) { c.model.channels = parse_number_list<sz>(k, v); }},
           {"dropout_sites",
            [](RunConfig& c, auto& k, auto& v) {
              c.model.dropout_sites = trim(v) == "all" ? std::vector<sz>{} : parse_number_list<sz>(k, v);
            }},
       }},
      {"train",
       {
           {"preset",
            [](RunConfig& c, auto& k, auto& v) {
              const auto t = trim(v);
              if (t == "desk") c.train = train::TrainConfig{};
              else if (t == "paper") c.train = train::TrainConfig::paper_scale();
              else throw ConfigError(fmt::format("{}: expected desk or paper, got '{}'", k, t));
            }},
           {"lr", [](RunConfig& c, auto& k, auto& v) { c.train.lr = parse_number<double>(k, v); }},
           {"beta", [](RunConfig& c, auto& k, auto& v) { c.train.dpo.beta = parse_number<double>(k, v); }},
           {"tau", [](RunConfig& c, auto& k, auto& v) { c.train.dpo.tau = parse_number<double>(k, v); }},
           {"lambda", [](RunConfig& c, auto& k, auto& v) { c.train.dpo.lambda = parse_number<double>(k, v); }},
           {"warmup_epochs", [](RunConfig& c, auto& k, auto& v) { c.train.warmup_epochs = parse_number<sz>(k, v); }},
           {"dpo_epochs", [](RunConfig& c, auto& k, auto& v) { c.train.dpo_epochs = parse_number<sz>(k, v); }},
           {"refresh_interval", [](RunConfig& c, auto& k, auto& v) { c.train.refresh_interval = parse_number<sz>(k, v); }},
           {"warmup_dropout", [](RunConfig& c, auto& k, auto& v) { c.train.warmup_dropout = parse_number<double>(k, v); }},
           {"batch_size", [](RunConfig& c, auto& k, auto& v) { c.train.batch_size = parse_number<sz>(k, v); }},
           {"grad_clip", [](RunConfig& c, auto& k, auto& v) { c.train.grad_clip = parse_number<double>(k, v); }},
           {"init_seed", [](RunConfig& c, auto& k, auto& v) { c.train.seeds.init = parse_number<u64>(k, v); }},
           {"data_seed", [](RunConfig& c, auto& k, auto& v) { c.train.seeds.data = parse_number<u64>(k, v); }},
           {"sampling_seed", [](RunConfig& c, auto& k, auto& v) { c.train.seeds.sampling = parse_number<u64>(k, v); }},
           {"refresh_reference", [](RunConfig& c, auto& k, auto& v) { c.train.refresh_reference = parse_bool(k, v); }},
       }},
      {"preference",
       {
           {"strategy", [](RunConfig& c, auto& k, auto& v) { c.train.strategy = translate(k, [&] { return pref::parse_strategy(trim(v)); }); }},
           {"grid",
            [](RunConfig& c, auto& k, auto& v) {
              const auto t = trim(v);
              if (t == "2d") c.train.grid = pref::DropoutGrid::preset_2d();
              else if (t == "3d") c.train.grid = pref::DropoutGrid::preset_3d();
              else c.train.grid.rates = parse_number_list<double>(k, v);
            }},
           {"taus", [](RunConfig& c, auto& k, auto& v) { c.taus = parse_number_list<double>(k, v); }},
       }},
      {"output",
       {
           {"dir", [](RunConfig& c, auto&, auto& v) { c.output_dir = trim(v); }},
       }},
  };
  return table;
}

}  // namespace

void RunConfig::validate() const {
  translate("[data]", [&] { data.validate(); });
  translate("[model]", [&] {
    require(model.height == data.height && model.width == data.width, "model extents must match the data");
    segnet::validate(model);
  });
  translate("[train]", [&] { train.validate(); });
  if (taus.empty()) throw ConfigError("preference.taus: at least one value is required");
  for (double t : taus)
    if (!(t >= 0.0 && t <= 1.0)) throw ConfigError(fmt::format("preference.taus: {} lies outside [0, 1]", t));
  if (data_dir.empty()) throw ConfigError("data.dir must not be empty");
  if (output_dir.empty()) throw ConfigError("output.dir must not be empty");
}

RunConfig parse(const std::string& text, const std::string& source) {
  pt::ptree tree;
  try {
    std::istringstream in(text);
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(fmt::format("{}: line {}: {}", source, e.line(), e.message()));
  }

  RunConfig cfg;
  const auto& sections = schema();
  // The preset must apply before individual [train] overrides.
  if (auto train = tree.get_child_optional("train"))
    if (auto preset = train->get_optional<std::string>("preset")) sections.at("train").at("preset")(cfg, "train.preset", *preset);

  for (const auto& [section, body] : tree) {
    const auto sit = sections.find(section);
    if (body.empty() || sit == sections.end()) {
      if (body.empty() && !body.data().empty())
        throw ConfigError(fmt::format("{}: key '{}' must belong to a section", source, section));
      if (sit == sections.end()) throw ConfigError(fmt::format("{}: unknown section [{}]", source, section));
      continue;
    }
    for (const auto& [key, node] : body) {
      const auto kit = sit->second.find(key);
      if (kit == sit->second.end()) throw ConfigError(fmt::format("{}: unknown key '{}' in [{}]", source, key, section));
      if (section == "train" && key == "preset") continue;
      kit->second(cfg, section + "." + key, node.data());
    }
  }
  cfg.model.height = cfg.data.height;
  cfg.model.width = cfg.data.width;
  cfg.model.in_channels = 1;
  cfg.validate();
  return cfg;
}

RunConfig load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path);
}

std::string to_ini(const RunConfig& c) {
  const auto& t = c.train;
  std::string out;
  out += fmt::format("[data]\nkind = {}\nheight = {}\nwidth = {}\ncount = {}\nnoise_std = {}\nboundary_blur = {}\nseed = {}\ndir = {}\n\n",
                     data::to_string(c.data.kind), c.data.height, c.data.width, c.data.count, c.data.noise_std,
                     c.data.boundary_blur, c.data.seed, c.data_dir);
  out += fmt::format("[model]\nkind = {}\nchannels = {}\ndropout_sites = {}\n\n", segnet::to_string(c.model.kind),
                     join(c.model.channels), c.model.dropout_sites.empty() ? "all" : join(c.model.dropout_sites));
  out += fmt::format(
      "[train]\nlr = {}\nbeta = {}\ntau = {}\nlambda = {}\nwarmup_epochs = {}\ndpo_epochs = {}\nrefresh_interval = {}\n"
      "warmup_dropout = {}\nbatch_size = {}\ngrad_clip = {}\ninit_seed = {}\ndata_seed = {}\nsampling_seed = {}\n"
      "refresh_reference = {}\n\n",
      t.lr, t.dpo.beta, t.dpo.tau, t.dpo.lambda, t.warmup_epochs, t.dpo_epochs, t.refresh_interval, t.warmup_dropout,
      t.batch_size, t.grad_clip, t.seeds.init, t.seeds.data, t.seeds.sampling, t.refresh_reference ? "true" : "false");
  out += fmt::format("[preference]\nstrategy = {}\ngrid = {}\ntaus = {}\n\n", pref::to_string(t.strategy),
                     join(t.grid.rates), join(c.taus));
  out += fmt::format("[output]\ndir = {}\n", c.output_dir);
  return out;
}

}  // namespace mapo::config
