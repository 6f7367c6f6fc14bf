// tgda: data generation, two-stage distillation training, evaluation,
// ablation, model accounting, gradient checking, and BN-folding verification.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "tgda/fold.hpp"
#include "tgda/gradcheck_suite.hpp"
#include "tgda/pipeline.hpp"
#include "tgda/runtime.hpp"

namespace fs = std::filesystem;
using namespace tgda;

namespace {

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kData:
      return 2;
    case ErrorKind::kNumeric:
      return 3;
    default:
      return 1;  // usage / config / contract
  }
}

void write_json(const std::string& path, const nlohmann::json& j) {
  fs::create_directories(fs::path(path).parent_path());
  std::ofstream out(path, std::ios::binary);
  check(out.good(), ErrorKind::kData, "cannot write " + path);
  out << j.dump(2) << "\n";
}

nlohmann::json record_json(const pipeline::MetricsRecord& r) {
  return {{"epoch", r.epoch},       {"split", r.split},
          {"top1", r.top1},         {"loss_ce", r.loss_ce},
          {"loss_kd_org", r.loss_kd_org}, {"loss_kd_aug", r.loss_kd_aug},
          {"wall_time_s", r.wall_time_s}};
}

struct TrainArgs {
  std::string config_file;
  std::vector<std::string> overrides;
  std::string data_root;
  std::string out_dir = "runs/out";
};

void add_train_options(CLI::App* cmd, TrainArgs& args) {
  cmd->add_option("--config", args.config_file, "JSON config file");
  cmd->add_option("--set", args.overrides, "dotted-key overrides, e.g. optimizer.lr=0.01");
  cmd->add_option("--data", args.data_root, "dataset root (overrides config dataset_root)");
  cmd->add_option("--out", args.out_dir, "output directory");
}

config::TrainConfig resolve_train_config(const TrainArgs& args, const std::string& stage,
                                         nlohmann::json& resolved) {
  resolved = config::resolve_config_json(args.config_file, args.overrides);
  resolved["stage"] = stage;
  if (!args.data_root.empty()) resolved["dataset_root"] = args.data_root;
  return config::parse_config(resolved);
}

}  // namespace

int main(int argc, char* argv[]) {
  runtime::tune_blas(argv);

  CLI::App app{"TGDA: two-stage distillation toolkit for training fine-grained classifiers "
               "from scratch"};
  app.require_subcommand(1);

  // ---- gen-data ----
  data::SyntheticSpec spec;
  std::string gen_out = "data/synthetic";
  auto* gen = app.add_subcommand("gen-data", "generate the synthetic benchmark dataset");
  gen->add_option("--out", gen_out, "dataset output directory");
  gen->add_option("--classes", spec.num_classes);
  gen->add_option("--train-per-class", spec.train_per_class);
  gen->add_option("--val-per-class", spec.val_per_class);
  gen->add_option("--test-per-class", spec.test_per_class);
  gen->add_option("--size", spec.image_size);
  gen->add_option("--cue-size", spec.cue_size);
  gen->add_option("--cue-count", spec.cue_count);
  gen->add_option("--similarity", spec.similarity);
  gen->add_option("--seed", spec.seed);
  gen->add_option("--background", spec.background);

  // ---- train-teacher / train-student ----
  TrainArgs teacher_args, student_args;
  auto* tt = app.add_subcommand("train-teacher", "stage 1: train the PAM teacher");
  add_train_options(tt, teacher_args);
  auto* ts = app.add_subcommand("train-student", "stage 2: train a student under TGDA");
  add_train_options(ts, student_args);

  // ---- eval ----
  std::string eval_ckpt, eval_data, eval_split = "test", eval_out;
  int64_t eval_batch = 64;
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
  ev->add_option("--ckpt", eval_ckpt)->required();
  ev->add_option("--data", eval_data)->required();
  ev->add_option("--split", eval_split);
  ev->add_option("--batch-size", eval_batch);
  ev->add_option("--out", eval_out, "directory for the metrics JSON (default: beside the ckpt)");

  // ---- ablate ----
  TrainArgs ab_args;
  std::string ab_teacher_config;
  std::vector<std::string> ab_teacher_overrides;
  std::string ab_seeds = "1,2,3";
  auto* ab = app.add_subcommand("ablate", "run the four-row component ablation");
  add_train_options(ab, ab_args);
  ab->add_option("--teacher-config", ab_teacher_config, "teacher JSON config");
  ab->add_option("--teacher-set", ab_teacher_overrides, "teacher dotted-key overrides");
  ab->add_option("--seeds", ab_seeds, "comma-separated seeds");

  // ---- stats ----
  std::string stats_arch = "vitfs_t";
  int64_t stats_classes = 100, stats_input = 64, stats_batch = 1;
  auto* st = app.add_subcommand("stats", "print parameter and FLOP counts for a preset");
  st->add_option("--arch", stats_arch);
  st->add_option("--classes", stats_classes);
  st->add_option("--input", stats_input);
  st->add_option("--batch", stats_batch);

  // ---- gradcheck ----
  double gc_tol = 1e-5;
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  gc->add_option("--tol", gc_tol);

  // ---- fold-check ----
  std::string fc_arch = "vitfs_t";
  int64_t fc_classes = 100, fc_input = 64, fc_inputs = 64;
  uint64_t fc_seed = 1;
  auto* fc = app.add_subcommand("fold-check", "verify BN folding keeps eval logits");
  fc->add_option("--arch", fc_arch);
  fc->add_option("--classes", fc_classes);
  fc->add_option("--input", fc_input);
  fc->add_option("--seed", fc_seed);
  fc->add_option("--inputs", fc_inputs, "number of random probe inputs");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      spec.validate();
      auto manifest = data::generate_synthetic_fgir(spec, gen_out);
      nlohmann::json echo = {{"num_classes", spec.num_classes},
                             {"train_per_class", spec.train_per_class},
                             {"val_per_class", spec.val_per_class},
                             {"test_per_class", spec.test_per_class},
                             {"image_size", spec.image_size},
                             {"background", spec.background},
                             {"cue_size", spec.cue_size},
                             {"cue_count", spec.cue_count},
                             {"similarity", spec.similarity},
                             {"seed", spec.seed}};
      write_json((fs::path(gen_out) / "resolved_config.json").string(), echo);
      std::printf("generated %zu samples across %zu classes at %s\n", manifest.samples.size(),
                  manifest.classes.size(), gen_out.c_str());
      return 0;
    }

    if (tt->parsed() || ts->parsed()) {
      const bool is_teacher = tt->parsed();
      TrainArgs& args = is_teacher ? teacher_args : student_args;
      nlohmann::json resolved;
      config::TrainConfig cfg =
          resolve_train_config(args, is_teacher ? "teacher" : "student", resolved);
      check(!cfg.dataset_root.empty(), ErrorKind::kConfig,
            "dataset_root (or --data) is required");
      fs::create_directories(args.out_dir);
      write_json((fs::path(args.out_dir) / "resolved_config.json").string(), resolved);
      data::Dataset ds = data::load_dataset(cfg.dataset_root);
      auto out = is_teacher ? pipeline::train_teacher(cfg, ds, args.out_dir)
                            : pipeline::train_student(cfg, ds, args.out_dir);
      std::printf("best val top1 %.4f (epoch %lld); checkpoint: %s\n", out.best_val_top1,
                  static_cast<long long>(out.best_epoch), out.checkpoint_path.c_str());
      return 0;
    }

    if (ev->parsed()) {
      data::Dataset ds = data::load_dataset(eval_data);
      config::TrainConfig cfg;
      cfg.batch_size = eval_batch;
      cfg.teacher_checkpoint = "unused";
      auto model = ckpt::model_from_checkpoint<float>(eval_ckpt);
      cfg.input_size = model->arch_config().at("input_size").get<int64_t>();
      auto rec = pipeline::evaluate_split(*model, ds, eval_split, cfg);
      const auto j = record_json(rec);
      std::cout << j.dump(2) << "\n";
      const std::string dir = eval_out.empty()
                                  ? fs::path(eval_ckpt).parent_path().string()
                                  : eval_out;
      write_json((fs::path(dir.empty() ? "." : dir) / ("eval_" + eval_split + ".json")).string(),
                 j);
      return 0;
    }

    if (ab->parsed()) {
      nlohmann::json resolved_s = config::resolve_config_json(ab_args.config_file,
                                                              ab_args.overrides);
      resolved_s["stage"] = "student";
      if (!ab_args.data_root.empty()) resolved_s["dataset_root"] = ab_args.data_root;
      nlohmann::json resolved_t = config::resolve_config_json(ab_teacher_config,
                                                              ab_teacher_overrides);
      resolved_t["stage"] = "teacher";
      resolved_t["dataset_root"] = resolved_s["dataset_root"];
      // student config must reference some teacher path to satisfy parsing;
      // the ablation harness fills per-row checkpoints itself
      resolved_s["teacher_checkpoint"] = "ablation-managed";
      config::TrainConfig scfg = config::parse_config(resolved_s);
      config::TrainConfig tcfg = config::parse_config(resolved_t);
      std::vector<uint64_t> seeds;
      for (size_t pos = 0; pos < ab_seeds.size();) {
        const auto comma = ab_seeds.find(',', pos);
        seeds.push_back(std::stoull(ab_seeds.substr(pos, comma - pos)));
        if (comma == std::string::npos) break;
        pos = comma + 1;
      }
      check(!seeds.empty(), ErrorKind::kConfig, "ablate: at least one seed required");
      fs::create_directories(ab_args.out_dir);
      write_json((fs::path(ab_args.out_dir) / "resolved_config.json").string(),
                 {{"student", resolved_s}, {"teacher", resolved_t}, {"seeds", seeds}});
      data::Dataset ds = data::load_dataset(scfg.dataset_root);
      auto rows = pipeline::run_ablation(tcfg, scfg, ds, seeds, ab_args.out_dir);
      std::printf("pam two_stage s_to_t top1\n");
      for (const auto& r : rows)
        std::printf("%d   %d         %d      %.4f\n", r.pam, r.two_stage, r.student_to_teacher,
                    r.test_top1);
      return 0;
    }

    if (st->parsed()) {
      auto model = models::build_model<float>(stats_arch, stats_classes, stats_input, 1);
      const auto cost = model->cost({stats_batch, 3, stats_input, stats_input});
      std::printf("arch: %s\nparams: %lld\nflops: %lld (batch %lld at %lldx%lld)\nnorm_ops: %lld\n",
                  stats_arch.c_str(), static_cast<long long>(models::count_params(*model)),
                  static_cast<long long>(cost.flops), static_cast<long long>(stats_batch),
                  static_cast<long long>(stats_input), static_cast<long long>(stats_input),
                  static_cast<long long>(cost.norm_ops));
      return 0;
    }

    if (gc->parsed()) {
      auto results = run_gradcheck_suite(gc_tol);
      bool all_pass = true;
      for (const auto& r : results) {
        std::printf("%-28s max_rel_err=%.3e %s\n", r.name.c_str(), r.max_rel_err,
                    r.pass ? "ok" : "FAIL");
        all_pass = all_pass && r.pass;
      }
      if (!all_pass) {
        std::fprintf(stderr, "error: kind=numeric msg=gradient check failed\n");
        return 3;
      }
      std::printf("all %zu gradient checks passed\n", results.size());
      return 0;
    }

    if (fc->parsed()) {
      auto rep = fold::fold_check<float>(fc_arch, fc_classes, fc_input, fc_seed, 3, fc_inputs);
      std::printf("arch: %s\nmax_logit_deviation: %.3e\nnorm_ops unfolded: %lld\nnorm_ops folded: %lld\n",
                  fc_arch.c_str(), rep.max_abs_logit_dev,
                  static_cast<long long>(rep.norm_ops_before),
                  static_cast<long long>(rep.norm_ops_after));
      if (rep.max_abs_logit_dev > 1e-4) {
        std::fprintf(stderr, "error: kind=numeric msg=bn folding deviation exceeds 1e-4\n");
        return 3;
      }
      return 0;
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error: kind=%s msg=%s\n", error_kind_name(e.kind()), e.what());
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: kind=internal msg=%s\n", e.what());
    return 1;
  }
  return 0;
}
