#pragma once

// Run configuration: an INI document with sections [data], [model],
// [train], [preference] and [output]. Unknown sections or keys are errors.
// Lists are comma-separated; ';' starts a comment line.

#include <stdexcept>
#include <string>
#include <vector>

#include "mapo/data_synth.hpp"
#include "mapo/segnet.hpp"
#include "mapo/trainer.hpp"

namespace mapo::config {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  data::TaskSpec data;
  std::string data_dir = "data";
  segnet::ModelSpec model;  // extents and input channels follow [data]
  train::TrainConfig train;
  std::vector<double> taus{0.1, 0.2, 0.3, 0.4, 0.5};
  std::string output_dir = "runs";

  /// Throws ConfigError describing the first invalid field.
  void validate() const;
  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

/// Parses and validates. `source` names the document in error messages.
RunConfig parse(const std::string& text, const std::string& source = "<config>");
RunConfig load(const std::string& path);

/// Fully resolved form: every key written explicitly; parse(to_ini(c)) == c.
std::string to_ini(const RunConfig& cfg);

}  // namespace mapo::config
