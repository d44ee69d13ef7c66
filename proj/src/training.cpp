#include "uniemo/training.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>

namespace uniemo {

namespace {

// Seed streams derived from the base seed.
constexpr std::uint64_t kInitStream = 0;
constexpr std::uint64_t kMaskStream = 1;
constexpr std::uint64_t kPretrainBatchStream = 2;
constexpr std::uint64_t kFinetuneInitStream = 3;
constexpr std::uint64_t kFinetuneBatchStream = 4;
constexpr std::uint64_t kMixupStream = 5;

std::vector<const ImageSample*> gather(std::span<const ImageSample> data,
                                       std::span<const std::size_t> index) {
  std::vector<const ImageSample*> out;
  out.reserve(index.size());
  for (std::size_t i : index) out.push_back(&data[i]);
  return out;
}

std::vector<Parameter*> trainable(const ParameterStore& store) {
  std::vector<Parameter*> out;
  for (Parameter* p : store.all()) {
    if (p->trainable) out.push_back(p);
  }
  return out;
}

// Per-patch standardization used by the normalized-pixel target.
void normalize_patches(Tensor& patches) {
  const std::size_t width = patches.cols();
  for (std::size_t r = 0; r < patches.rows(); ++r) {
    auto row = patches.row(r);
    const double mean = std::accumulate(row.begin(), row.end(), 0.0) / static_cast<double>(width);
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= static_cast<double>(width);
    const double inv = 1.0 / std::sqrt(var + 1e-6);
    for (double& v : row) v = (v - mean) * inv;
  }
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Keeps the header and the first `rows` data lines of an existing CSV so a
// resumed run continues it; otherwise starts a new file.
std::ofstream open_metrics(const std::filesystem::path& path, const std::string& header,
                           std::int64_t rows) {
  std::vector<std::string> kept;
  if (rows > 0) {
    std::ifstream is(path);
    std::string line;
    if (std::getline(is, line) && line == header) {
      while (static_cast<std::int64_t>(kept.size()) < rows && std::getline(is, line)) {
        kept.push_back(line);
      }
    }
  }
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error("cannot write metrics file " + path.string());
  os << header << "\n";
  for (const auto& line : kept) os << line << "\n";
  return os;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::trunc);
  if (!os || !(os << text)) throw Error("cannot write " + path.string());
}

}  // namespace

std::unique_ptr<Teacher> make_teacher(const TrainConfig& config) {
  if (config.teacher_kind == "external") {
    return std::make_unique<FeatureFileTeacher>(config.teacher_features);
  }
  return stub_teacher(config.teacher_seed, config.backbone.cls_proj_dim, config.backbone.in_channels);
}

std::vector<std::size_t> batch_indices(std::uint64_t seed, std::int64_t step, std::size_t batch,
                                       std::size_t dataset_size) {
  if (dataset_size == 0) throw Error("cannot draw a batch from an empty dataset");
  if (step < 0) throw Error("negative step");
  std::map<std::uint64_t, std::vector<std::size_t>> perms;
  std::vector<std::size_t> out;
  out.reserve(batch);
  const std::uint64_t first = static_cast<std::uint64_t>(step) * batch;
  for (std::size_t j = 0; j < batch; ++j) {
    const std::uint64_t pos = first + j;
    const std::uint64_t epoch = pos / dataset_size;
    auto it = perms.find(epoch);
    if (it == perms.end()) {
      Rng rng(derive_seed(seed, epoch));
      it = perms.emplace(epoch, rng.permutation(dataset_size)).first;
    }
    out.push_back(it->second[pos % dataset_size]);
  }
  return out;
}

PretrainModel::PretrainModel(const TrainConfig& c)
    : PretrainModel(c, Rng(derive_seed(c.seed, kInitStream))) {}

PretrainModel::PretrainModel(const TrainConfig& c, Rng rng)
    : config(c),
      encoder(store, c.backbone, rng),
      projection(store, c.backbone, rng),
      decoder(store, c.backbone, rng),
      fusion(store, c.fusion, rng) {
  config.validate();
}

LossReport pretrain_forward(PretrainModel& model, std::span<const ImageSample* const> batch,
                            const Teacher& teacher, Rng& mask_rng, bool backward) {
  const TrainConfig& cfg = model.config;
  const BackboneConfig& bb = cfg.backbone;
  const std::size_t n = batch.size();
  if (n == 0) throw Error("pretraining batch is empty");
  if (teacher.dim() != bb.cls_proj_dim) {
    throw Error("teacher width " + std::to_string(teacher.dim()) + " differs from model.embed_dim " +
                std::to_string(bb.cls_proj_dim));
  }
  std::vector<std::string> captions;
  captions.reserve(n);
  for (const ImageSample* s : batch) {
    if (s->caption.empty()) throw Error("sample " + s->source + " has no caption");
    captions.push_back(s->caption);
  }
  const std::size_t np = bb.num_patches();
  const Tensor scene = patchify(stack_pixels(batch, false), bb.patch);
  const Tensor person = patchify(stack_pixels(batch, true), bb.patch);
  Tensor target = scene;
  if (bb.norm_pix_loss) normalize_patches(target);

  ad::Tape tape(backward);
  // Scene stream: mask, encode, reconstruct.
  const MaskedTokens masked = random_mask(model.encoder.embed(tape, scene), n, np, bb.mask_ratio, mask_rng);
  const std::size_t kept = masked.plans.front().kept_idx.size();
  const EncodedState scene_state = model.encoder.encode(tape, masked.tokens, n, kept, true);
  const ad::Var alpha = model.projection(tape, scene_state);
  const ad::Var pred = model.decoder.decode(tape, scene_state, masked.plans);
  const ad::Var l1 = ad::masked_reconstruction_loss(pred, target, masked.plans);
  // Person stream, unmasked.
  const EncodedState person_state = model.encoder.encode(tape, model.encoder.embed(tape, person), n, np, true);
  const ad::Var beta = model.projection(tape, person_state);
  const ad::Var fused = model.fusion(tape, alpha, beta);
  // Teacher targets are constants on the tape.
  const double floor = cfg.norm_floor;
  const Tensor text = teacher.encode_text(captions);
  const Tensor image = teacher.encode_image(batch);
  const ad::Var text_n = tape.constant(row_normalize(text, floor));
  const ad::Var image_n = tape.constant(row_normalize(image, floor));
  const ad::Var fused_n = ad::row_normalize(fused, floor);
  const ad::Var a = ad::correlation_matrix(fused_n, text_n, floor);
  const ad::Var c = ad::correlation_matrix(image_n, text_n, floor);
  const ad::Var l2 = ad::similarity_contrastive_loss(a, c);
  const ad::Var l3 = ad::feature_similarity_loss(fused_n, image_n);
  const ad::Var total =
      ad::add(ad::add(ad::scale(l1, cfg.loss_w1), ad::scale(l2, cfg.loss_w2)), ad::scale(l3, cfg.loss_w3));

  LossReport r;
  r.l1 = l1.value()[0];
  r.l2 = l2.value()[0];
  r.l3 = l3.value()[0];
  r.lt = total_pretrain_loss(r.l1, r.l2, r.l3);
  if (backward && std::isfinite(total.value()[0])) tape.backward(total);
  return r;
}

LossReport pretrain_step(PretrainModel& model, AdamW& optimizer,
                         std::span<const ImageSample* const> batch, const Teacher& teacher,
                         Rng& mask_rng, double lr, std::int64_t step) {
  model.store.zero_grad();
  LossReport r = pretrain_forward(model, batch, teacher, mask_rng, true);
  r.step = step;
  if (!std::isfinite(r.l1) || !std::isfinite(r.l2) || !std::isfinite(r.l3)) {
    throw Error("non-finite loss at step " + std::to_string(step));
  }
  optimizer.step(lr);
  return r;
}

Pretrainer::Pretrainer(const Config& config, const Teacher& teacher)
    : config_(config),
      teacher_(teacher),
      model_(std::make_unique<PretrainModel>(uniemo::train_config(config))),
      mask_rng_(derive_seed(model_->config.seed, kMaskStream)) {
  optimizer_ = std::make_unique<AdamW>(trainable(model_->store), model_->config.pretrain);
}

void Pretrainer::resume(const Checkpoint& ckpt) {
  if (ckpt.kind != "pretrain") throw Error("cannot resume pretraining from a " + ckpt.kind + " checkpoint");
  restore_parameters(ckpt, model_->store);
  restore_optimizer(ckpt, *optimizer_);
  mask_rng_.restore(ckpt.rng_state);
  step_ = ckpt.step;
}

LossReport Pretrainer::step(std::span<const ImageSample> data) {
  const TrainConfig& cfg = model_->config;
  const auto index = batch_indices(derive_seed(cfg.seed, kPretrainBatchStream), step_,
                                   cfg.pretrain.batch_size, data.size());
  const auto batch = gather(data, index);
  const double lr = learning_rate(cfg.pretrain, step_);
  LossReport r = pretrain_step(*model_, *optimizer_, batch, teacher_, mask_rng_, lr, step_ + 1);
  ++step_;
  return r;
}

Checkpoint Pretrainer::checkpoint() const {
  Checkpoint c;
  c.kind = "pretrain";
  c.step = step_;
  c.config_text = config_.to_text();
  c.rng_state = mask_rng_.state();
  store_parameters(c, model_->store);
  store_optimizer(c, *optimizer_);
  return c;
}

PretrainRunResult run_pretrain(const Config& config, std::span<const ImageSample> data,
                               const Teacher& teacher, const PretrainRunOptions& options) {
  Pretrainer trainer(config, teacher);
  if (options.resume) trainer.resume(*options.resume);
  const TrainConfig& cfg = trainer.train_config();
  std::int64_t end = cfg.pretrain.total_steps;
  if (options.stop_after >= 0) end = std::min(end, options.stop_after);
  if (trainer.steps_done() < end && data.empty()) throw Error("pretraining needs at least one sample");

  const bool to_disk = !options.out_dir.empty();
  std::ofstream metrics;
  if (to_disk) {
    std::filesystem::create_directories(options.out_dir);
    write_text(options.out_dir / "config.txt", config.to_text());
    metrics = open_metrics(options.out_dir / "pretrain_metrics.csv", "step,l1,l2,l3,lt",
                           trainer.steps_done());
  }
  PretrainRunResult result;
  while (trainer.steps_done() < end) {
    const LossReport r = trainer.step(data);
    result.reports.push_back(r);
    if (to_disk) {
      metrics << r.step << "," << format_double(r.l1) << "," << format_double(r.l2) << ","
              << format_double(r.l3) << "," << format_double(r.lt) << "\n";
      if (!metrics) throw Error("failed writing pretrain metrics");
      if (cfg.checkpoint_every > 0 && r.step % cfg.checkpoint_every == 0) {
        save_checkpoint(trainer.checkpoint(),
                        options.out_dir / ("checkpoint_" + std::to_string(r.step) + ".ckpt"));
      }
    }
  }
  result.checkpoint = trainer.checkpoint();
  if (to_disk) save_checkpoint(result.checkpoint, options.out_dir / "pretrain.ckpt");
  return result;
}

Classifier::Classifier(const TrainConfig& c)
    : Classifier(c, Rng(derive_seed(c.seed, kFinetuneInitStream))) {}

Classifier::Classifier(const TrainConfig& c, Rng rng)
    : config(c),
      encoder(store, c.backbone, rng),
      head(Linear::create(store, "head", c.backbone.encoder_width, c.num_classes, rng)) {
  config.validate();
}

std::unique_ptr<Classifier> Classifier::from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.find("param/head.weight") == nullptr) {
    throw Error("checkpoint has no classification head (kind " + ckpt.kind + ")");
  }
  const TrainConfig cfg = uniemo::train_config(Config::from_text(ckpt.config_text, "checkpoint config"));
  auto model = std::make_unique<Classifier>(cfg);
  restore_parameters(ckpt, model->store);
  return model;
}

ad::Var Classifier::logits(ad::Tape& tape, const Tensor& pixels, EncodedState* state,
                           std::vector<TransformerBlock::Trace>* traces) const {
  const BackboneConfig& bb = config.backbone;
  const Tensor patches = patchify(pixels, bb.patch);
  const std::size_t n = patches.dim(0), np = bb.num_patches();
  const EncodedState s = encoder.encode(tape, encoder.embed(tape, patches), n, np, true, traces);
  if (state != nullptr) *state = s;
  ad::Var pooled;
  if (config.pool == PoolMode::kCls) {
    pooled = cls_rows(s);
  } else {
    Tensor avg({n, n * s.seq});
    const double w = 1.0 / static_cast<double>(np);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 1; j < s.seq; ++j) avg.at(i, i * s.seq + j) = w;
    }
    pooled = ad::matmul(tape.constant(std::move(avg)), s.normed);
  }
  return head(tape, pooled);
}

Tensor Classifier::predict(const Tensor& pixels) const {
  ad::Tape tape(false);
  return logits(tape, pixels).value();
}

std::vector<int> predict_labels(const Classifier& model, std::span<const ImageSample> samples,
                                std::size_t batch) {
  if (batch == 0) throw Error("prediction batch must be positive");
  std::vector<int> out;
  out.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); i += batch) {
    const auto chunk = samples.subspan(i, std::min(batch, samples.size() - i));
    const auto pred = argmax_rows(model.predict(stack_pixels(chunk)));
    out.insert(out.end(), pred.begin(), pred.end());
  }
  return out;
}

std::vector<int> sample_labels(std::span<const ImageSample> samples, std::size_t num_classes) {
  std::vector<int> out;
  out.reserve(samples.size());
  for (const ImageSample& s : samples) {
    if (!s.label) throw Error("sample " + s.source + " has no label");
    if (*s.label < 0 || static_cast<std::size_t>(*s.label) >= num_classes) {
      throw Error("label " + std::to_string(*s.label) + " of " + s.source +
                  " does not fit a " + std::to_string(num_classes) + "-way head");
    }
    out.push_back(*s.label);
  }
  return out;
}

FinetuneRunResult run_finetune(const Config& config, const Checkpoint* pretrained,
                               std::span<const ImageSample> train,
                               std::span<const ImageSample> held_out,
                               const FinetuneRunOptions& options) {
  const TrainConfig cfg = uniemo::train_config(config);
  if (train.empty()) throw Error("fine-tuning needs at least one labeled sample");
  const std::vector<int> labels = sample_labels(train, cfg.num_classes);
  const std::vector<int> held_labels = sample_labels(held_out, cfg.num_classes);

  auto model = std::make_unique<Classifier>(cfg);
  if (pretrained != nullptr) restore_parameters(*pretrained, model->store, "encoder.");
  if (cfg.probe) {
    for (Parameter* p : model->store.with_prefix("encoder.")) p->trainable = false;
  }
  AdamW optimizer(trainable(model->store), cfg.finetune);
  Rng mix_rng(derive_seed(cfg.seed, kMixupStream));

  const bool to_disk = !options.out_dir.empty();
  std::ofstream metrics;
  if (to_disk) {
    std::filesystem::create_directories(options.out_dir);
    write_text(options.out_dir / "config.txt", config.to_text());
    metrics = open_metrics(options.out_dir / "finetune_metrics.csv", "step,lf,acc", 0);
  }

  FinetuneRunResult result;
  const std::uint64_t batch_seed = derive_seed(cfg.seed, kFinetuneBatchStream);
  for (std::int64_t s = 0; s < cfg.finetune.total_steps; ++s) {
    const auto index = batch_indices(batch_seed, s, cfg.finetune.batch_size, train.size());
    const Tensor x = stack_pixels(gather(train, index));
    std::vector<int> y;
    for (std::size_t i : index) y.push_back(labels[i]);
    std::vector<std::size_t> identity(y.size());
    std::iota(identity.begin(), identity.end(), 0);
    const MixupBatch mb = cfg.mixup ? mixup_batch(x, y, cfg.mixup_alpha, mix_rng)
                                    : mixup_with(x, y, 1.0, std::move(identity));
    model->store.zero_grad();
    ad::Tape tape;
    const ad::Var logits = model->logits(tape, mb.x);
    const ad::Var loss = ad::mixup_cross_entropy(logits, mb.y_a, mb.y_b, mb.lambda);
    LossReport r;
    r.step = s + 1;
    r.lf = loss.value()[0];
    if (!std::isfinite(r.lf)) throw Error("non-finite loss at step " + std::to_string(r.step));
    r.acc = accuracy(argmax_rows(logits.value()), mb.lambda >= 0.5 ? mb.y_a : mb.y_b);
    tape.backward(loss);
    optimizer.step(learning_rate(cfg.finetune, s));
    result.reports.push_back(r);
    if (to_disk) {
      metrics << r.step << "," << format_double(r.lf) << "," << format_double(r.acc) << "\n";
      if (!metrics) throw Error("failed writing fine-tune metrics");
    }
  }

  result.train_accuracy = accuracy(predict_labels(*model, train, options.eval_batch), labels);
  result.accuracy = held_out.empty()
                        ? result.train_accuracy
                        : accuracy(predict_labels(*model, held_out, options.eval_batch), held_labels);
  Checkpoint& c = result.checkpoint;
  c.kind = "finetune";
  c.step = cfg.finetune.total_steps;
  c.config_text = config.to_text();
  c.rng_state = mix_rng.state();
  store_parameters(c, model->store);
  if (to_disk) save_checkpoint(c, options.out_dir / "finetune.ckpt");
  return result;
}

}  // namespace uniemo
