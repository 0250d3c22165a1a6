#include "fir/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace fir {

namespace {

using nlohmann::json;

void reject_unknown_keys(const json& obj, const std::set<std::string>& allowed,
                         const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (!allowed.count(it.key())) {
      throw ConfigError("config: unknown key \"" + it.key() + "\" in " + where);
    }
  }
}

template <typename T>
T get_or(const json& obj, const std::string& key, T fallback) {
  if (!obj.contains(key)) return fallback;
  return obj.at(key).get<T>();
}

TaskHead parse_task(const std::string& s) {
  if (s == "denoise") return TaskHead::denoise;
  if (s == "sr2x") return TaskHead::sr2x;
  throw ConfigError("config: unknown task \"" + s + "\" (expected denoise or sr2x)");
}

AttentionKind parse_attention_kind(const std::string& s) {
  if (s == "dot") return AttentionKind::dot;
  if (s == "cosine") return AttentionKind::cosine;
  throw ConfigError("config: unknown attention kind \"" + s + "\"");
}

LayerVariant parse_variant(const std::string& s) {
  if (s == "v1") return LayerVariant::v1;
  if (s == "v3") return LayerVariant::v3;
  throw ConfigError("config: unknown layer variant \"" + s + "\" (expected v1 or v3)");
}

ModelArch parse_arch(const std::string& s) {
  if (s == "columnar") return ModelArch::columnar;
  if (s == "ushape") return ModelArch::ushape;
  throw ConfigError("config: unknown arch \"" + s + "\" (expected columnar or ushape)");
}

ModelConfig parse_model(const json& j) {
  reject_unknown_keys(j,
                      {"arch", "stages", "layers_per_stage", "channels", "image_channels",
                       "heads", "attention_kind", "cosine_scale", "ffn_ratio", "conv_kind",
                       "variant", "init_scheme", "task", "geometry", "seed"},
                      "model");
  ModelConfig m;
  m.arch = parse_arch(get_or<std::string>(j, "arch", "columnar"));
  m.stages = get_or<std::int64_t>(j, "stages", 2);
  m.layers_per_stage = get_or<std::int64_t>(j, "layers_per_stage", 2);
  m.channels = get_or<std::int64_t>(j, "channels", 16);
  m.image_channels = get_or<std::int64_t>(j, "image_channels", 1);
  m.heads = get_or<std::int64_t>(j, "heads", 2);
  m.attention_kind = parse_attention_kind(get_or<std::string>(j, "attention_kind", "dot"));
  m.cosine_scale = get_or<double>(j, "cosine_scale", 10.0);
  m.ffn_ratio = get_or<std::int64_t>(j, "ffn_ratio", 2);
  m.conv_kind = conv_kind_from_string(get_or<std::string>(j, "conv_kind", "conv3"));
  m.variant = parse_variant(get_or<std::string>(j, "variant", "v3"));
  m.init_scheme = init_scheme_from_string(get_or<std::string>(j, "init_scheme", "kaiming_fan_in"));
  if (j.contains("geometry")) {
    m.geometry.clear();
    for (const auto& g : j.at("geometry")) {
      reject_unknown_keys(g, {"p", "s"}, "model.geometry");
      StageGeometry sg;
      sg.p = g.at("p").get<std::int64_t>();
      sg.s = g.at("s").get<std::int64_t>();
      m.geometry.push_back(sg);
    }
    if (m.geometry.empty()) throw ConfigError("config: model.geometry must not be empty");
  }
  return m;
}

}  // namespace

std::string conv_kind_name(ConvKind k) {
  switch (k) {
    case ConvKind::conv1:
      return "conv1";
    case ConvKind::linear:
      return "linear";
    case ConvKind::conv3:
      return "conv3";
  }
  throw ConfigError("unknown conv kind");
}

ConvKind conv_kind_from_string(const std::string& s) {
  if (s == "conv1") return ConvKind::conv1;
  if (s == "linear") return ConvKind::linear;
  if (s == "conv3") return ConvKind::conv3;
  throw ConfigError("config: unknown conv kind \"" + s + "\"");
}

std::string init_scheme_name(InitScheme s) {
  switch (s) {
    case InitScheme::kaiming_fan_in:
      return "kaiming_fan_in";
    case InitScheme::trunc_normal:
      return "trunc_normal";
    case InitScheme::zero_layernorm:
      return "zero_layernorm";
    case InitScheme::residual_rescale:
      return "residual_rescale";
    case InitScheme::weight_rescale:
      return "weight_rescale";
  }
  throw ConfigError("unknown init scheme");
}

InitScheme init_scheme_from_string(const std::string& s) {
  if (s == "kaiming_fan_in") return InitScheme::kaiming_fan_in;
  if (s == "trunc_normal") return InitScheme::trunc_normal;
  if (s == "zero_layernorm") return InitScheme::zero_layernorm;
  if (s == "residual_rescale") return InitScheme::residual_rescale;
  if (s == "weight_rescale") return InitScheme::weight_rescale;
  throw ConfigError("config: unknown init scheme \"" + s + "\"");
}

void RunConfig::validate() const {
  if (noise_sigma < 0.0) throw ConfigError("config: noise_sigma must be >= 0");
  if (batch_size < 1) throw ConfigError("config: batch_size must be >= 1");
  if (loss != "l1") throw ConfigError("config: only the \"l1\" loss is supported");
  if (dataset.n_train < 1 || dataset.n_val < 1) {
    throw ConfigError("config: dataset.n_train and dataset.n_val must be >= 1");
  }
  schedule.validate();
  optimizer.validate();
  ModelConfig m = model;
  m.task = task;
  m.image_channels = dataset.channels;
  m.validate();
  // Training feeds the synthetic images straight through, so their size has
  // to tile the model geometry (the eval path pads arbitrary sizes).
  const std::int64_t input_size =
      task == TaskHead::sr2x ? dataset.image_size / 2 : dataset.image_size;
  const std::int64_t d = m.required_divisor();
  if (input_size % d != 0) {
    throw ConfigError("config: model input size " + std::to_string(input_size) +
                      " is not a multiple of the model divisor " + std::to_string(d));
  }
}

RunConfig parse_run_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("config is not valid JSON: ") + e.what());
  }
  reject_unknown_keys(j,
                      {"task", "noise_sigma", "dataset", "model", "optimizer", "schedule",
                       "batch_size", "loss", "checkpoint_path", "metrics_path"},
                      "top level");
  RunConfig cfg;
  cfg.task = parse_task(get_or<std::string>(j, "task", "denoise"));
  cfg.noise_sigma = get_or<double>(j, "noise_sigma", 25.0 / 255.0);
  if (j.contains("dataset")) {
    const json& d = j.at("dataset");
    reject_unknown_keys(d, {"n_train", "n_val", "image_size", "channels", "seed"}, "dataset");
    cfg.dataset.n_train = get_or<std::int64_t>(d, "n_train", 64);
    cfg.dataset.n_val = get_or<std::int64_t>(d, "n_val", 8);
    cfg.dataset.image_size = get_or<std::int64_t>(d, "image_size", 16);
    cfg.dataset.channels = get_or<std::int64_t>(d, "channels", 1);
    cfg.dataset.seed = get_or<std::uint64_t>(d, "seed", 0);
  }
  if (j.contains("model")) {
    cfg.model = parse_model(j.at("model"));
    cfg.model_seed = get_or<std::uint64_t>(j.at("model"), "seed", 1);
  }
  cfg.model.task = cfg.task;
  cfg.model.image_channels = cfg.dataset.channels;
  if (j.contains("optimizer")) {
    const json& o = j.at("optimizer");
    reject_unknown_keys(o, {"lr", "beta1", "beta2", "eps", "weight_decay"}, "optimizer");
    cfg.optimizer.lr = get_or<double>(o, "lr", 2e-4);
    cfg.optimizer.beta1 = get_or<double>(o, "beta1", 0.9);
    cfg.optimizer.beta2 = get_or<double>(o, "beta2", 0.999);
    cfg.optimizer.eps = get_or<double>(o, "eps", 1e-8);
    cfg.optimizer.weight_decay = get_or<double>(o, "weight_decay", 0.0);
  }
  if (j.contains("schedule")) {
    const json& s = j.at("schedule");
    reject_unknown_keys(s, {"warmup_iters", "total_iters", "eval_interval", "half_at"},
                        "schedule");
    cfg.schedule.warmup_iters = get_or<std::int64_t>(s, "warmup_iters", 50);
    cfg.schedule.total_iters = get_or<std::int64_t>(s, "total_iters", 500);
    cfg.schedule.eval_interval = get_or<std::int64_t>(s, "eval_interval", 50);
    if (s.contains("half_at")) {
      cfg.schedule.half_at = s.at("half_at").get<std::vector<std::int64_t>>();
    }
  }
  cfg.batch_size = get_or<std::int64_t>(j, "batch_size", 8);
  cfg.loss = get_or<std::string>(j, "loss", "l1");
  cfg.checkpoint_path = get_or<std::string>(j, "checkpoint_path", "checkpoint.fir");
  cfg.metrics_path = get_or<std::string>(j, "metrics_path", "metrics.csv");
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw FormatError("cannot open config file: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_run_config(ss.str());
}

}  // namespace fir
