#pragma once

#include <cstdint>
#include <string>

#include "fir/data.hpp"
#include "fir/model.hpp"
#include "fir/optimizer.hpp"
#include "fir/schedule.hpp"

namespace fir {

/// Everything one training/evaluation run needs. Mirrors the JSON config
/// format one to one; unknown JSON keys are rejected.
struct RunConfig {
  TaskHead task = TaskHead::denoise;
  double noise_sigma = 25.0 / 255.0;  // gray-level std in [0,1] units
  DatasetSpec dataset;
  ModelConfig model;
  std::uint64_t model_seed = 1;
  OptimizerConfig optimizer;
  ScheduleConfig schedule;
  std::int64_t batch_size = 8;
  std::string loss = "l1";
  std::string checkpoint_path = "checkpoint.fir";
  std::string metrics_path = "metrics.csv";

  void validate() const;
};

/// Parses a config from JSON text; rejects unknown keys at every level.
RunConfig parse_run_config(const std::string& json_text);

/// Reads and parses a JSON config file.
RunConfig load_run_config(const std::string& path);

std::string conv_kind_name(ConvKind k);
ConvKind conv_kind_from_string(const std::string& s);
std::string init_scheme_name(InitScheme s);
InitScheme init_scheme_from_string(const std::string& s);

}  // namespace fir
