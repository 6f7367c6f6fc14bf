#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>

#include "tgda/augment.hpp"
#include "tgda/checkpoint.hpp"
#include "tgda/config.hpp"
#include "tgda/data.hpp"
#include "tgda/distill.hpp"
#include "tgda/optim.hpp"

namespace tgda::pipeline {

namespace fs = std::filesystem;
using config::TrainConfig;

struct MetricsRecord {
  int64_t epoch = 0;
  std::string split;
  double top1 = 0.0;
  double loss_ce = 0.0;
  double loss_kd_org = 0.0;
  double loss_kd_aug = 0.0;
  double wall_time_s = 0.0;
};

inline const char* metrics_csv_header() {
  return "epoch,split,top1,loss_ce,loss_kd_org,loss_kd_aug,wall_time_s";
}

inline std::string metrics_csv_row(const MetricsRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%lld,%s,%.6f,%.6f,%.6f,%.6f,%.3f",
                static_cast<long long>(r.epoch), r.split.c_str(), r.top1, r.loss_ce,
                r.loss_kd_org, r.loss_kd_aug, r.wall_time_s);
  return buf;
}

inline void write_metrics_csv(const std::string& path, const std::vector<MetricsRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  check(out.good(), ErrorKind::kData, "cannot write metrics csv: " + path);
  out << metrics_csv_header() << "\n";
  for (const auto& r : records) out << metrics_csv_row(r) << "\n";
}

struct TrainOutput {
  std::string checkpoint_path;
  std::vector<MetricsRecord> records;
  double best_val_top1 = -1.0;
  int64_t best_epoch = -1;
  uint64_t teacher_checksum = 0;  // set by train_student
};

namespace detail {

using img::Image;

inline int effective_workers(const TrainConfig& cfg) {
#ifdef _OPENMP
  return cfg.workers > 0 ? static_cast<int>(cfg.workers) : omp_get_max_threads();
#else
  (void)cfg;
  return 1;
#endif
}

struct BatchViews {
  TensorF std_images;          // standardized org views [N,3,S,S]
  std::vector<Image> geo;      // pre-standardization views, for attention aug
  std::vector<int> labels;
};

inline void copy_image_into_batch(const Image& im, TensorF& batch, int64_t n) {
  std::memcpy(batch.data() + n * im.numel(), im.data(),
              sizeof(float) * static_cast<size_t>(im.numel()));
}

// Per-sample augmentation streams derive from (seed, epoch, manifest index),
// so results are independent of worker scheduling.
inline BatchViews assemble_batch(const data::Dataset& ds, const std::vector<int64_t>& indices,
                                 const TrainConfig& cfg, augment::Policy policy, int64_t epoch) {
  const int64_t n = static_cast<int64_t>(indices.size());
  const int64_t s = cfg.input_size;
  BatchViews out;
  out.std_images = TensorF(Shape{n, 3, s, s});
  out.geo.resize(static_cast<size_t>(n));
  out.labels.resize(static_cast<size_t>(n));
  augment::StandardAugmentConfig acfg;
  acfg.trivial_ops = cfg.aug.trivial_ops;
  const auto& mean = ds.manifest.mean;
  const auto& stddev = ds.manifest.stddev;
#pragma omp parallel for schedule(static) num_threads(effective_workers(cfg))
  for (int64_t i = 0; i < n; ++i) {
    const int64_t idx = indices[static_cast<size_t>(i)];
    RngStream rng = RngStream(cfg.seed).derive(0xA06, static_cast<uint64_t>(epoch),
                                               static_cast<uint64_t>(idx));
    Image geo = augment::geometric_augment(ds.images[static_cast<size_t>(idx)], policy,
                                           cfg.input_size, acfg, rng);
    Image std_view = augment::standardize(geo, mean, stddev);
    copy_image_into_batch(std_view, out.std_images, i);
    out.geo[static_cast<size_t>(i)] = std::move(geo);
    out.labels[static_cast<size_t>(i)] = ds.labels[static_cast<size_t>(idx)];
  }
  return out;
}

inline Tensor<float> slice_sample_maps(const TensorF& maps, int64_t n) {
  const int64_t m = maps.shape()[1], h = maps.shape()[2], w = maps.shape()[3];
  Tensor<float> out(Shape{m, h, w});
  std::memcpy(out.data(), maps.data() + n * m * h * w,
              sizeof(float) * static_cast<size_t>(m * h * w));
  return out;
}

// Build the standardized attention-augmented view batch from per-sample maps.
inline TensorF assemble_attention_batch_std(const BatchViews& views, const TensorF& maps,
                                            const std::vector<int64_t>& indices,
                                            const TrainConfig& cfg, augment::AugKind kind,
                                            int64_t epoch, const std::array<float, 3>& mean,
                                            const std::array<float, 3>& stddev) {
  const int64_t n = static_cast<int64_t>(views.geo.size());
  const int64_t s = cfg.input_size;
  TensorF out(Shape{n, 3, s, s});
  augment::AttentionAugConfig acfg;
  acfg.theta_crop_lo = cfg.aug.theta_crop_lo;
  acfg.theta_crop_hi = cfg.aug.theta_crop_hi;
  acfg.theta_drop_lo = cfg.aug.theta_drop_lo;
  acfg.theta_drop_hi = cfg.aug.theta_drop_hi;
#pragma omp parallel for schedule(static) num_threads(effective_workers(cfg))
  for (int64_t i = 0; i < n; ++i) {
    const int64_t idx = indices[static_cast<size_t>(i)];
    RngStream rng = RngStream(cfg.seed).derive(0xA77, static_cast<uint64_t>(epoch),
                                               static_cast<uint64_t>(idx));
    Tensor<float> sample_maps = slice_sample_maps(maps, i);
    auto pair = augment::make_attention_view(views.geo[static_cast<size_t>(i)], sample_maps, kind,
                                             acfg, rng);
    Image std_view = augment::standardize(pair.augmented, mean, stddev);
    copy_image_into_batch(std_view, out, i);
  }
  return out;
}

inline int argmax_row(const TensorF& logits, int64_t row) {
  const int64_t c = logits.shape()[1];
  int best = 0;
  for (int64_t j = 1; j < c; ++j)
    if (logits.at(row * c + j) > logits.at(row * c + best)) best = static_cast<int>(j);
  return best;
}

inline optim::Schedule make_schedule(const TrainConfig& cfg, int64_t steps_per_epoch) {
  optim::Schedule sched;
  sched.kind = cfg.schedule.kind == "cosine" ? optim::Schedule::Kind::kCosine
                                             : optim::Schedule::Kind::kStep;
  sched.base_lr = cfg.optimizer.lr;
  sched.total_steps = cfg.epochs * steps_per_epoch;
  sched.warmup_steps = static_cast<int64_t>(cfg.schedule.warmup_frac *
                                            static_cast<double>(sched.total_steps));
  return sched;
}

struct AnyOptim {
  std::optional<optim::AdamW> adamw;
  std::optional<optim::Sgd> sgd;
  explicit AnyOptim(const TrainConfig& cfg) {
    if (cfg.optimizer.kind == "adamw")
      adamw.emplace(cfg.optimizer.beta1, cfg.optimizer.beta2, 1e-8, cfg.optimizer.weight_decay);
    else
      sgd.emplace(cfg.optimizer.momentum, cfg.optimizer.weight_decay);
  }
  void step(models::Model<float>& m, double lr) {
    if (adamw)
      adamw->step(m, lr);
    else
      sgd->step(m, lr);
  }
};

}  // namespace detail

// Deterministic eval: eval augmentation policy, running statistics, no
// stochastic depth.
inline MetricsRecord evaluate_split(models::Model<float>& model, const data::Dataset& ds,
                                    const std::string& split, const TrainConfig& cfg,
                                    int64_t epoch = 0) {
  const auto t0 = std::chrono::steady_clock::now();
  model.mode = models::Mode::kEval;
  auto batches = data::make_batches(ds.manifest, split, cfg.batch_size, 0, cfg.seed);
  int64_t correct = 0, total = 0;
  double ce_sum = 0.0;
  int64_t ce_batches = 0;
  for (const auto& idx : batches) {
    auto views = detail::assemble_batch(ds, idx, cfg, augment::Policy::kEval, 0);
    TensorF logits = model.forward(nullptr, views.std_images);
    for (int64_t i = 0; i < static_cast<int64_t>(idx.size()); ++i)
      if (detail::argmax_row(logits, i) == views.labels[static_cast<size_t>(i)]) ++correct;
    total += static_cast<int64_t>(idx.size());
    TensorF ce = distill::ce_label_smoothing<float>(nullptr, logits, views.labels, 0.0f);
    ce_sum += ce.at(0);
    ++ce_batches;
  }
  MetricsRecord rec;
  rec.epoch = epoch;
  rec.split = split;
  rec.top1 = static_cast<double>(correct) / static_cast<double>(total);
  rec.loss_ce = ce_sum / static_cast<double>(std::max<int64_t>(1, ce_batches));
  rec.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

// Convenience spec surface: evaluate a checkpoint on a split.
inline MetricsRecord evaluate(const std::string& checkpoint_path, const data::Dataset& ds,
                              const std::string& split, const TrainConfig& cfg) {
  auto model = ckpt::model_from_checkpoint<float>(checkpoint_path);
  return evaluate_split(*model, ds, split, cfg);
}

// ---------------------------------------------------------------------------
// Stage 1: specialized teacher with part attention
// ---------------------------------------------------------------------------

inline TrainOutput train_teacher(const TrainConfig& cfg, const data::Dataset& ds,
                                 const std::string& outdir) {
  cfg.validate();
  check(cfg.stage == "teacher", ErrorKind::kConfig, "train_teacher: config stage must be teacher");
  ops::finite_checks() = cfg.debug.check_finite;
  fs::create_directories(outdir);

  auto model = models::build_model<float>(cfg.arch, ds.num_classes(), cfg.input_size, cfg.seed);
  auto* teacher = dynamic_cast<models::PamTeacher<float>*>(model.get());
  check(teacher != nullptr, ErrorKind::kConfig,
        "train_teacher: architecture '" + cfg.arch + "' has no part attention module");

  auto train_batches0 = data::make_batches(ds.manifest, "train", cfg.batch_size, 0, cfg.seed);
  const auto steps_per_epoch = static_cast<int64_t>(train_batches0.size());
  auto sched = detail::make_schedule(cfg, steps_per_epoch);
  detail::AnyOptim opt(cfg);

  TrainOutput out;
  out.checkpoint_path = (fs::path(outdir) / "teacher_best.ckpt").string();
  int64_t gstep = 0;
  const auto eps = static_cast<float>(cfg.loss.label_smoothing_eps);

  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    auto batches = data::make_batches(ds.manifest, "train", cfg.batch_size, epoch, cfg.seed);
    double ce_sum = 0.0;
    int64_t correct = 0, seen = 0;
    model->mode = models::Mode::kTrain;
    for (const auto& idx : batches) {
      auto views = detail::assemble_batch(ds, idx, cfg, augment::Policy::kTrain, epoch);
      Tape<float> tape;
      RngStream sd_rng = RngStream(cfg.seed).derive(0x5DE, static_cast<uint64_t>(epoch),
                                                    static_cast<uint64_t>(gstep));
      auto det = teacher->forward_detail(&tape, views.std_images, &sd_rng);
      const auto kind = gstep % 2 == 0 ? augment::AugKind::kCrop : augment::AugKind::kDrop;
      TensorF aug_batch =
          detail::assemble_attention_batch_std(views, det.maps, idx, cfg, kind, epoch,
                                               ds.manifest.mean, ds.manifest.stddev);
      auto det_aug = teacher->forward_detail(&tape, aug_batch, &sd_rng);
      TensorF ce_org = distill::ce_label_smoothing(&tape, det.logits, views.labels, eps);
      TensorF ce_aug = distill::ce_label_smoothing(&tape, det_aug.logits, views.labels, eps);
      TensorF both = ops::add(&tape, ce_org, ce_aug);
      TensorF loss = ops::affine_scalar(&tape, both, 0.5f);
      check(std::isfinite(loss.at(0)), ErrorKind::kNumeric,
            "train_teacher: loss diverged (NaN/Inf) at epoch " + std::to_string(epoch) +
                " step " + std::to_string(gstep));
      model->zero_grads();
      tape.backward(loss);
      opt.step(*model, sched.lr_at(gstep));
      ce_sum += 0.5 * (ce_org.at(0) + ce_aug.at(0));
      for (int64_t i = 0; i < static_cast<int64_t>(idx.size()); ++i)
        if (detail::argmax_row(det.logits, i) == views.labels[static_cast<size_t>(i)]) ++correct;
      seen += static_cast<int64_t>(idx.size());
      ++gstep;
    }
    MetricsRecord train_rec;
    train_rec.epoch = epoch;
    train_rec.split = "train";
    train_rec.top1 = static_cast<double>(correct) / static_cast<double>(seen);
    train_rec.loss_ce = ce_sum / static_cast<double>(steps_per_epoch);
    train_rec.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.records.push_back(train_rec);

    if ((epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.epochs) {
      MetricsRecord val = evaluate_split(*model, ds, "val", cfg, epoch);
      out.records.push_back(val);
      if (val.top1 > out.best_val_top1) {
        out.best_val_top1 = val.top1;
        out.best_epoch = epoch;
        ckpt::Meta meta;
        meta.epoch = epoch;
        meta.rng_key = cfg.seed;
        meta.metrics = {{"val_top1", val.top1}};
        ckpt::save_checkpoint(out.checkpoint_path, *model, meta);
      }
    }
  }
  if (out.best_epoch < 0) {  // no eval ran: last-epoch fallback
    ckpt::Meta meta;
    meta.epoch = cfg.epochs - 1;
    meta.rng_key = cfg.seed;
    ckpt::save_checkpoint(out.checkpoint_path, *model, meta);
  }
  write_metrics_csv((fs::path(outdir) / "metrics.csv").string(), out.records);
  return out;
}

// ---------------------------------------------------------------------------
// Stage 2: frozen-teacher student training (TGDA)
// ---------------------------------------------------------------------------

inline TrainOutput train_student(const TrainConfig& cfg, const data::Dataset& ds,
                                 const std::string& outdir) {
  cfg.validate();
  check(cfg.stage == "student", ErrorKind::kConfig, "train_student: config stage must be student");
  ops::finite_checks() = cfg.debug.check_finite;
  fs::create_directories(outdir);

  const bool distilling = cfg.loss.beta > 0.0;
  std::unique_ptr<models::Model<float>> teacher_model;
  models::PamTeacher<float>* teacher = nullptr;
  uint64_t teacher_checksum = 0;
  teacher_model = ckpt::model_from_checkpoint<float>(cfg.teacher_checkpoint);
  teacher_model->mode = models::Mode::kEval;
  if (distilling) {
    teacher = dynamic_cast<models::PamTeacher<float>*>(teacher_model.get());
    check(teacher != nullptr, ErrorKind::kCheckpoint,
          "train_student: teacher checkpoint must hold a PAM-equipped model");
  }
  teacher_checksum = teacher_model->param_checksum();

  auto student = models::build_model<float>(cfg.arch, ds.num_classes(), cfg.input_size, cfg.seed);
  if (!cfg.init_checkpoint.empty()) ckpt::load_checkpoint(cfg.init_checkpoint, *student);

  auto batches0 = data::make_batches(ds.manifest, "train", cfg.batch_size, 0, cfg.seed);
  const auto steps_per_epoch = static_cast<int64_t>(batches0.size());
  auto sched = detail::make_schedule(cfg, steps_per_epoch);
  detail::AnyOptim opt(cfg);

  TrainOutput out;
  out.checkpoint_path = (fs::path(outdir) / "student_best.ckpt").string();
  int64_t gstep = 0;

  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    auto batches = data::make_batches(ds.manifest, "train", cfg.batch_size, epoch, cfg.seed);
    double ce_sum = 0.0, kd_org_sum = 0.0, kd_aug_sum = 0.0;
    int64_t correct = 0, seen = 0;
    for (const auto& idx : batches) {
      auto views = detail::assemble_batch(ds, idx, cfg, augment::Policy::kTrain, epoch);
      Tape<float> tape;
      RngStream sd_rng = RngStream(cfg.seed).derive(0x5DE, static_cast<uint64_t>(epoch),
                                                    static_cast<uint64_t>(gstep));
      student->mode = models::Mode::kTrain;
      double batch_ce = 0.0;
      TensorF s_org;
      if (distilling) {
        auto t_det = teacher->forward_detail(nullptr, views.std_images);
        const auto kind = gstep % 2 == 0 ? augment::AugKind::kCrop : augment::AugKind::kDrop;
        TensorF aug_batch =
            detail::assemble_attention_batch_std(views, t_det.maps, idx, cfg, kind, epoch,
                                                 ds.manifest.mean, ds.manifest.stddev);
        TensorF t_aug_logits = teacher_model->forward(nullptr, aug_batch);
        s_org = student->forward(&tape, views.std_images, &sd_rng);
        TensorF s_aug = student->forward(&tape, aug_batch, &sd_rng);
        auto total = distill::tgda_total_loss(&tape, s_org, s_aug, t_det.logits, t_aug_logits,
                                              views.labels, cfg.loss);
        check(std::isfinite(total.total.at(0)), ErrorKind::kNumeric,
              "train_student: loss diverged (NaN/Inf) at epoch " + std::to_string(epoch));
        student->zero_grads();
        tape.backward(total.total);
        batch_ce = total.ce;
        kd_org_sum += total.kd_org;
        kd_aug_sum += total.kd_aug;
      } else {
        s_org = student->forward(&tape, views.std_images, &sd_rng);
        TensorF ce = distill::ce_label_smoothing(&tape, s_org, views.labels,
                                                 static_cast<float>(cfg.loss.label_smoothing_eps));
        TensorF loss = ops::affine_scalar(&tape, ce, static_cast<float>(cfg.loss.alpha));
        check(std::isfinite(loss.at(0)), ErrorKind::kNumeric,
              "train_student: loss diverged (NaN/Inf) at epoch " + std::to_string(epoch));
        student->zero_grads();
        tape.backward(loss);
        batch_ce = ce.at(0);
      }
      opt.step(*student, sched.lr_at(gstep));
      ce_sum += batch_ce;
      for (int64_t i = 0; i < static_cast<int64_t>(idx.size()); ++i)
        if (detail::argmax_row(s_org, i) == views.labels[static_cast<size_t>(i)]) ++correct;
      seen += static_cast<int64_t>(idx.size());
      ++gstep;
    }
    // frozen-teacher invariant, verified at every epoch boundary
    check(teacher_model->param_checksum() == teacher_checksum, ErrorKind::kContract,
          "train_student: frozen-teacher violation (parameter checksum changed)");

    MetricsRecord train_rec;
    train_rec.epoch = epoch;
    train_rec.split = "train";
    train_rec.top1 = static_cast<double>(correct) / static_cast<double>(seen);
    train_rec.loss_ce = ce_sum / static_cast<double>(steps_per_epoch);
    train_rec.loss_kd_org = kd_org_sum / static_cast<double>(steps_per_epoch);
    train_rec.loss_kd_aug = kd_aug_sum / static_cast<double>(steps_per_epoch);
    train_rec.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.records.push_back(train_rec);

    if ((epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.epochs) {
      MetricsRecord val = evaluate_split(*student, ds, "val", cfg, epoch);
      out.records.push_back(val);
      if (val.top1 > out.best_val_top1) {
        out.best_val_top1 = val.top1;
        out.best_epoch = epoch;
        ckpt::Meta meta;
        meta.epoch = epoch;
        meta.rng_key = cfg.seed;
        meta.metrics = {{"val_top1", val.top1}};
        ckpt::save_checkpoint(out.checkpoint_path, *student, meta);
      }
    }
  }
  if (out.best_epoch < 0) {
    ckpt::Meta meta;
    meta.epoch = cfg.epochs - 1;
    meta.rng_key = cfg.seed;
    ckpt::save_checkpoint(out.checkpoint_path, *student, meta);
  }
  out.teacher_checksum = teacher_checksum;
  write_metrics_csv((fs::path(outdir) / "metrics.csv").string(), out.records);
  return out;
}

// ---------------------------------------------------------------------------
// ablation harness: one-stage co-training vs the full two-stage recipe
// ---------------------------------------------------------------------------

struct AblationRow {
  bool pam = false;
  bool two_stage = false;
  bool student_to_teacher = false;
  double test_top1 = 0.0;
};

namespace detail {

// One-stage co-training: teacher and student update simultaneously from
// scratch. The student always distills from the live teacher; the teacher
// adds a student-to-teacher KD term when the cross-ensemble toggle is on.
inline double one_stage_cotrain(const TrainConfig& base, const data::Dataset& ds, bool pam,
                                bool s_to_t, const std::string& outdir) {
  TrainConfig cfg = base;
  // co-training needs no teacher checkpoint; validate the remaining contract
  check(cfg.epochs >= 1 && cfg.batch_size >= 1, ErrorKind::kConfig,
        "one-stage co-training: bad epochs/batch_size");
  cfg.loss.validate();
  check(cfg.loss.beta > 0.0, ErrorKind::kConfig,
        "one-stage co-training: mutual distillation needs beta > 0");
  fs::create_directories(outdir);

  std::unique_ptr<models::Model<float>> teacher_model;
  models::PamTeacher<float>* pam_teacher = nullptr;
  if (pam) {
    teacher_model = models::build_model<float>("teacher_pam_" + cfg.arch, ds.num_classes(),
                                               cfg.input_size, cfg.seed + 101);
    pam_teacher = dynamic_cast<models::PamTeacher<float>*>(teacher_model.get());
  } else {
    teacher_model = models::build_model<float>(cfg.arch, ds.num_classes(), cfg.input_size,
                                               cfg.seed + 101);
  }
  auto student = models::build_model<float>(cfg.arch, ds.num_classes(), cfg.input_size, cfg.seed);

  auto batches0 = data::make_batches(ds.manifest, "train", cfg.batch_size, 0, cfg.seed);
  const auto steps_per_epoch = static_cast<int64_t>(batches0.size());
  auto sched = make_schedule(cfg, steps_per_epoch);
  AnyOptim opt_teacher(cfg), opt_student(cfg);

  const auto eps = static_cast<float>(cfg.loss.label_smoothing_eps);
  int64_t gstep = 0;
  double best_val = -1.0;
  const std::string best_path = (fs::path(outdir) / "one_stage_best.ckpt").string();
  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto batches = data::make_batches(ds.manifest, "train", cfg.batch_size, epoch, cfg.seed);
    for (const auto& idx : batches) {
      auto views = assemble_batch(ds, idx, cfg, augment::Policy::kTrain, epoch);
      RngStream sd_rng = RngStream(cfg.seed).derive(0x5DE, static_cast<uint64_t>(epoch),
                                                    static_cast<uint64_t>(gstep));
      teacher_model->mode = models::Mode::kTrain;
      student->mode = models::Mode::kTrain;

      // teacher pass
      Tape<float> tape_t;
      TensorF t_org;
      TensorF aug_batch;
      bool have_aug = false;
      if (pam) {
        auto det = pam_teacher->forward_detail(&tape_t, views.std_images, &sd_rng);
        t_org = det.logits;
        const auto kind = gstep % 2 == 0 ? augment::AugKind::kCrop : augment::AugKind::kDrop;
        aug_batch = assemble_attention_batch_std(views, det.maps, idx, cfg, kind, epoch,
                                                 ds.manifest.mean, ds.manifest.stddev);
        have_aug = true;
      } else {
        t_org = teacher_model->forward(&tape_t, views.std_images, &sd_rng);
      }
      TensorF t_aug;
      if (have_aug) t_aug = teacher_model->forward(&tape_t, aug_batch, &sd_rng);

      // student pass (its own tape; teacher logits enter as constants)
      Tape<float> tape_s;
      RngStream sd_rng_s = sd_rng;
      TensorF s_org = student->forward(&tape_s, views.std_images, &sd_rng_s);
      TensorF s_aug;
      if (have_aug) s_aug = student->forward(&tape_s, aug_batch, &sd_rng_s);

      // teacher update
      {
        TensorF loss_t = distill::ce_label_smoothing(&tape_t, t_org, views.labels, eps);
        if (have_aug) {
          TensorF ce_aug = distill::ce_label_smoothing(&tape_t, t_aug, views.labels, eps);
          TensorF sum = ops::add(&tape_t, loss_t, ce_aug);
          loss_t = ops::affine_scalar(&tape_t, sum, 0.5f);
        }
        if (s_to_t) {
          TensorF kd_ts = distill::kd_loss(&tape_t, t_org, s_org, static_cast<float>(cfg.loss.tau),
                                           cfg.loss.kd_tau_squared);
          TensorF scaled = ops::affine_scalar(&tape_t, kd_ts, static_cast<float>(cfg.loss.beta));
          loss_t = ops::add(&tape_t, loss_t, scaled);
        }
        check(std::isfinite(loss_t.at(0)), ErrorKind::kNumeric,
              "one-stage co-training: teacher loss diverged");
        teacher_model->zero_grads();
        tape_t.backward(loss_t);
        opt_teacher.step(*teacher_model, sched.lr_at(gstep));
      }
      // student update
      {
        TensorF ce = distill::ce_label_smoothing(&tape_s, s_org, views.labels, eps);
        TensorF loss_s = ops::affine_scalar(&tape_s, ce, static_cast<float>(cfg.loss.alpha));
        TensorF kd_o = distill::kd_loss(&tape_s, s_org, t_org, static_cast<float>(cfg.loss.tau),
                                        cfg.loss.kd_tau_squared);
        if (have_aug) {
          TensorF kd_a = distill::kd_loss(&tape_s, s_aug, t_aug, static_cast<float>(cfg.loss.tau),
                                          cfg.loss.kd_tau_squared);
          kd_o = ops::add(&tape_s, kd_o, kd_a);
        }
        TensorF scaled = ops::affine_scalar(&tape_s, kd_o, static_cast<float>(cfg.loss.beta));
        loss_s = ops::add(&tape_s, loss_s, scaled);
        check(std::isfinite(loss_s.at(0)), ErrorKind::kNumeric,
              "one-stage co-training: student loss diverged");
        student->zero_grads();
        tape_s.backward(loss_s);
        opt_student.step(*student, sched.lr_at(gstep));
      }
      ++gstep;
    }
    MetricsRecord val = evaluate_split(*student, ds, "val", cfg, epoch);
    if (val.top1 > best_val) {
      best_val = val.top1;
      ckpt::Meta meta;
      meta.epoch = epoch;
      ckpt::save_checkpoint(best_path, *student, meta);
    }
  }
  auto best = ckpt::model_from_checkpoint<float>(best_path);
  return evaluate_split(*best, ds, "test", cfg).top1;
}

}  // namespace detail

// Four-row ablation mirroring the component study: (a) one-stage without PAM,
// (b) one-stage with the student-to-teacher loss, (c) one-stage with PAM,
// (d) the full two-stage recipe. Results average over the given seeds.
inline std::vector<AblationRow> run_ablation(const TrainConfig& teacher_cfg,
                                             const TrainConfig& student_cfg,
                                             const data::Dataset& ds,
                                             const std::vector<uint64_t>& seeds,
                                             const std::string& outdir,
                                             const std::string& dataset_name = "synthetic") {
  fs::create_directories(outdir);
  std::vector<AblationRow> rows = {
      {false, false, false, 0.0},
      {false, false, true, 0.0},
      {true, false, false, 0.0},
      {true, true, false, 0.0},
  };
  for (size_t r = 0; r < rows.size(); ++r) {
    double acc = 0.0;
    for (uint64_t seed : seeds) {
      const std::string run_dir =
          (fs::path(outdir) / ("row" + std::to_string(r) + "_seed" + std::to_string(seed)))
              .string();
      if (rows[r].two_stage) {
        TrainConfig tc = teacher_cfg;
        tc.seed = seed;
        TrainConfig sc = student_cfg;
        sc.seed = seed;
        auto tout = train_teacher(tc, ds, run_dir + "/teacher");
        sc.teacher_checkpoint = tout.checkpoint_path;
        auto sout = train_student(sc, ds, run_dir + "/student");
        auto best = ckpt::model_from_checkpoint<float>(sout.checkpoint_path);
        acc += evaluate_split(*best, ds, "test", sc).top1;
      } else {
        TrainConfig sc = student_cfg;
        sc.seed = seed;
        sc.teacher_checkpoint.clear();
        sc.stage = "student";
        acc += detail::one_stage_cotrain(sc, ds, rows[r].pam, rows[r].student_to_teacher, run_dir);
      }
    }
    rows[r].test_top1 = acc / static_cast<double>(seeds.size());
  }
  // Table-4-shaped CSV: three component flags plus one column per dataset
  std::ofstream csv((fs::path(outdir) / "ablation.csv").string(), std::ios::binary);
  csv << "pam,two_stage,student_to_teacher," << dataset_name << "\n";
  for (const auto& row : rows) {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%d,%d,%d,%.6f", row.pam ? 1 : 0, row.two_stage ? 1 : 0,
                  row.student_to_teacher ? 1 : 0, row.test_top1);
    csv << buf << "\n";
  }
  return rows;
}

}  // namespace tgda::pipeline
