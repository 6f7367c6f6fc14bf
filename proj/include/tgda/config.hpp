#pragma once

#include <fstream>

#include "tgda/augment.hpp"
#include "tgda/distill.hpp"

#include "json.hpp"

namespace tgda::config {

// One training run, fully declarative. Every field has a default; files and
// dotted-key overrides merge onto the defaults, unknown keys are hard errors,
// and the resolved JSON written next to the outputs reproduces the run.
struct TrainConfig {
  std::string stage = "student";  // teacher | student
  std::string arch = "lrnet18";
  int64_t input_size = 64;
  int64_t epochs = 10;
  int64_t batch_size = 32;
  uint64_t seed = 1;
  int64_t workers = 0;  // 0: library default
  int64_t eval_every = 1;
  std::string dataset_root;
  std::string teacher_checkpoint;
  std::string init_checkpoint;

  struct Optimizer {
    std::string kind = "adamw";  // adamw | sgd
    double lr = 1e-3;
    double weight_decay = 0.05;
    double beta1 = 0.9, beta2 = 0.999;
    double momentum = 0.9;
  } optimizer;

  struct Sched {
    std::string kind = "cosine";  // cosine | step
    double warmup_frac = 0.05;
  } schedule;

  distill::LossWeights loss;

  struct Augment {
    double theta_crop_lo = 0.4, theta_crop_hi = 0.6;
    double theta_drop_lo = 0.2, theta_drop_hi = 0.5;
    std::vector<std::string> trivial_ops = augment::trivial_augment_default_ops();
    int64_t pam_maps = 32;
  } aug;

  struct Debug {
    bool check_finite = false;
  } debug;

  void validate() const {
    check(stage == "teacher" || stage == "student", ErrorKind::kConfig,
          "stage must be teacher or student");
    check(epochs >= 1 && batch_size >= 1, ErrorKind::kConfig, "epochs and batch_size must be >= 1");
    check(optimizer.kind == "adamw" || optimizer.kind == "sgd", ErrorKind::kConfig,
          "optimizer.kind must be adamw or sgd");
    check(schedule.kind == "cosine" || schedule.kind == "step", ErrorKind::kConfig,
          "schedule.kind must be cosine or step");
    loss.validate();
    if (stage == "teacher")
      check(loss.beta == 0.0, ErrorKind::kConfig,
            "teacher stage forbids loss.beta > 0 (distillation has no target yet)");
    if (stage == "student")
      check(!teacher_checkpoint.empty(), ErrorKind::kConfig,
            "student stage requires teacher_checkpoint");
    check(eval_every >= 1, ErrorKind::kConfig, "eval_every must be >= 1");
  }
};

inline nlohmann::json default_config_json() {
  TrainConfig d;
  return {
      {"stage", d.stage},
      {"arch", d.arch},
      {"input_size", d.input_size},
      {"epochs", d.epochs},
      {"batch_size", d.batch_size},
      {"seed", d.seed},
      {"workers", d.workers},
      {"eval_every", d.eval_every},
      {"dataset_root", d.dataset_root},
      {"teacher_checkpoint", d.teacher_checkpoint},
      {"init_checkpoint", d.init_checkpoint},
      {"optimizer",
       {{"kind", d.optimizer.kind},
        {"lr", d.optimizer.lr},
        {"weight_decay", d.optimizer.weight_decay},
        {"beta1", d.optimizer.beta1},
        {"beta2", d.optimizer.beta2},
        {"momentum", d.optimizer.momentum}}},
      {"schedule", {{"kind", d.schedule.kind}, {"warmup_frac", d.schedule.warmup_frac}}},
      {"loss",
       {{"alpha", d.loss.alpha},
        {"beta", d.loss.beta},
        {"tau", d.loss.tau},
        {"label_smoothing", d.loss.label_smoothing_eps},
        {"kd_tau_squared", d.loss.kd_tau_squared}}},
      {"augment",
       {{"theta_crop", {d.aug.theta_crop_lo, d.aug.theta_crop_hi}},
        {"theta_drop", {d.aug.theta_drop_lo, d.aug.theta_drop_hi}},
        {"trivial_ops", d.aug.trivial_ops},
        {"pam_maps", d.aug.pam_maps}}},
      {"debug", {{"check_finite", d.debug.check_finite}}},
  };
}

namespace detail {

inline void merge_strict(nlohmann::json& base, const nlohmann::json& user,
                         const std::string& prefix) {
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string where = prefix.empty() ? it.key() : prefix + "." + it.key();
    check(base.contains(it.key()), ErrorKind::kConfig, "unknown config key '" + where + "'");
    if (it->is_object() && base[it.key()].is_object())
      merge_strict(base[it.key()], *it, where);
    else
      base[it.key()] = *it;
  }
}

}  // namespace detail

// Apply "dotted.key=value" after the file parse; the key must already exist.
inline void apply_override(nlohmann::json& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  check(eq != std::string::npos, ErrorKind::kConfig,
        "override must look like key.path=value, got '" + assignment + "'");
  const std::string keypath = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(raw);
  } catch (const nlohmann::json::exception&) {
    value = raw;  // bare strings stay strings
  }
  nlohmann::json* node = &cfg;
  size_t pos = 0;
  std::vector<std::string> parts;
  while (pos != std::string::npos) {
    const auto dot = keypath.find('.', pos);
    parts.push_back(keypath.substr(pos, dot == std::string::npos ? dot : dot - pos));
    pos = dot == std::string::npos ? dot : dot + 1;
  }
  for (size_t i = 0; i + 1 < parts.size(); ++i) {
    check(node->contains(parts[i]), ErrorKind::kConfig,
          "unknown config key '" + keypath + "'");
    node = &(*node)[parts[i]];
  }
  check(node->contains(parts.back()), ErrorKind::kConfig, "unknown config key '" + keypath + "'");
  (*node)[parts.back()] = value;
}

inline TrainConfig parse_config(const nlohmann::json& j) {
  TrainConfig c;
  try {
    c.stage = j.at("stage").get<std::string>();
    c.arch = j.at("arch").get<std::string>();
    c.input_size = j.at("input_size").get<int64_t>();
    c.epochs = j.at("epochs").get<int64_t>();
    c.batch_size = j.at("batch_size").get<int64_t>();
    c.seed = j.at("seed").get<uint64_t>();
    c.workers = j.at("workers").get<int64_t>();
    c.eval_every = j.at("eval_every").get<int64_t>();
    c.dataset_root = j.at("dataset_root").get<std::string>();
    c.teacher_checkpoint = j.at("teacher_checkpoint").get<std::string>();
    c.init_checkpoint = j.at("init_checkpoint").get<std::string>();
    const auto& o = j.at("optimizer");
    c.optimizer.kind = o.at("kind").get<std::string>();
    c.optimizer.lr = o.at("lr").get<double>();
    c.optimizer.weight_decay = o.at("weight_decay").get<double>();
    c.optimizer.beta1 = o.at("beta1").get<double>();
    c.optimizer.beta2 = o.at("beta2").get<double>();
    c.optimizer.momentum = o.at("momentum").get<double>();
    const auto& s = j.at("schedule");
    c.schedule.kind = s.at("kind").get<std::string>();
    c.schedule.warmup_frac = s.at("warmup_frac").get<double>();
    const auto& l = j.at("loss");
    c.loss.alpha = l.at("alpha").get<double>();
    c.loss.beta = l.at("beta").get<double>();
    c.loss.tau = l.at("tau").get<double>();
    c.loss.label_smoothing_eps = l.at("label_smoothing").get<double>();
    c.loss.kd_tau_squared = l.at("kd_tau_squared").get<bool>();
    const auto& a = j.at("augment");
    c.aug.theta_crop_lo = a.at("theta_crop").at(0).get<double>();
    c.aug.theta_crop_hi = a.at("theta_crop").at(1).get<double>();
    c.aug.theta_drop_lo = a.at("theta_drop").at(0).get<double>();
    c.aug.theta_drop_hi = a.at("theta_drop").at(1).get<double>();
    c.aug.trivial_ops = a.at("trivial_ops").get<std::vector<std::string>>();
    c.aug.pam_maps = a.at("pam_maps").get<int64_t>();
    c.debug.check_finite = j.at("debug").at("check_finite").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kConfig, "config value error: " + std::string(e.what()));
  }
  c.validate();
  return c;
}

// defaults <- file <- overrides, strict at every step
inline nlohmann::json resolve_config_json(const std::string& file_path,
                                          const std::vector<std::string>& overrides) {
  nlohmann::json cfg = default_config_json();
  if (!file_path.empty()) {
    std::ifstream in(file_path);
    check(in.good(), ErrorKind::kConfig, "cannot open config file: " + file_path);
    nlohmann::json user;
    try {
      in >> user;
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::kConfig, "malformed config json: " + std::string(e.what()));
    }
    detail::merge_strict(cfg, user, "");
  }
  for (const auto& ov : overrides) apply_override(cfg, ov);
  return cfg;
}

inline TrainConfig load_config(const std::string& file_path,
                               const std::vector<std::string>& overrides) {
  return parse_config(resolve_config_json(file_path, overrides));
}

}  // namespace tgda::config
