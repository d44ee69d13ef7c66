#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "uniemo/backbone.hpp"
#include "uniemo/checkpoint.hpp"
#include "uniemo/config.hpp"
#include "uniemo/data.hpp"
#include "uniemo/distillation.hpp"
#include "uniemo/fusion.hpp"
#include "uniemo/objectives.hpp"
#include "uniemo/optim.hpp"

namespace uniemo {

/// Teacher selected by teacher.kind (stub or external feature file).
std::unique_ptr<Teacher> make_teacher(const TrainConfig& config);

/// Sample indices of the batch used at `step`: the dataset is visited in
/// a fresh seeded permutation every epoch, batches cut consecutively.
std::vector<std::size_t> batch_indices(std::uint64_t seed, std::int64_t step, std::size_t batch,
                                       std::size_t dataset_size);

/// Everything learned during pretraining. Not copyable or movable because
/// the modules hold pointers into `store`.
struct PretrainModel {
  explicit PretrainModel(const TrainConfig& config);
  PretrainModel(const PretrainModel&) = delete;
  PretrainModel& operator=(const PretrainModel&) = delete;

  TrainConfig config;
  ParameterStore store;
  Encoder encoder;
  ClsProjection projection;
  Decoder decoder;
  Fusion fusion;

 private:
  PretrainModel(const TrainConfig& config, Rng rng);
};

/// Forward pass over one batch and, when `backward` is set, gradients of
/// w1*L1 + w2*L2 + w3*L3 accumulated into the parameters. Masks are drawn
/// from `mask_rng`. The report's step field is left at 0.
LossReport pretrain_forward(PretrainModel& model, std::span<const ImageSample* const> batch,
                            const Teacher& teacher, Rng& mask_rng, bool backward);

/// Zeroes gradients, runs pretrain_forward and applies one AdamW update.
/// A non-finite loss throws "non-finite loss at step k".
LossReport pretrain_step(PretrainModel& model, AdamW& optimizer,
                         std::span<const ImageSample* const> batch, const Teacher& teacher,
                         Rng& mask_rng, double lr, std::int64_t step);

/// Stateful pretraining loop: model, optimizer, masking RNG and step
/// counter, serializable as a Checkpoint.
class Pretrainer {
 public:
  Pretrainer(const Config& config, const Teacher& teacher);

  /// Restores parameters, optimizer moments, RNG state and step.
  void resume(const Checkpoint& ckpt);
  /// Runs the next step on its batch drawn from `data`.
  LossReport step(std::span<const ImageSample> data);
  Checkpoint checkpoint() const;

  std::int64_t steps_done() const noexcept { return step_; }
  PretrainModel& model() noexcept { return *model_; }
  const AdamW& optimizer() const noexcept { return *optimizer_; }
  const TrainConfig& train_config() const noexcept { return model_->config; }

 private:
  Config config_;
  const Teacher& teacher_;
  std::unique_ptr<PretrainModel> model_;
  std::unique_ptr<AdamW> optimizer_;
  Rng mask_rng_;
  std::int64_t step_ = 0;
};

struct PretrainRunOptions {
  /// Destination of metrics, checkpoints and the config snapshot; empty
  /// keeps everything in memory.
  std::filesystem::path out_dir;
  std::optional<Checkpoint> resume;
  /// Stop once this many steps are done (< 0: run to total_steps).
  std::int64_t stop_after = -1;
};

struct PretrainRunResult {
  Checkpoint checkpoint;
  std::vector<LossReport> reports;  // steps run by this call
};

/// Runs pretraining to pretrain.total_steps. With out_dir set, writes
/// config.txt, pretrain_metrics.csv (step,l1,l2,l3,lt), periodic
/// checkpoint_<step>.ckpt files and pretrain.ckpt.
PretrainRunResult run_pretrain(const Config& config, std::span<const ImageSample> data,
                               const Teacher& teacher, const PretrainRunOptions& options = {});

/// Encoder plus linear classification head ("head.").
class Classifier {
 public:
  explicit Classifier(const TrainConfig& config);
  Classifier(const Classifier&) = delete;
  Classifier& operator=(const Classifier&) = delete;

  /// Rebuilds a fine-tuned classifier; throws if the head is missing.
  static std::unique_ptr<Classifier> from_checkpoint(const Checkpoint& ckpt);

  /// Logits [N x classes] for N x H x W x C pixels. `state` and `traces`
  /// expose encoder internals for saliency.
  ad::Var logits(ad::Tape& tape, const Tensor& pixels, EncodedState* state = nullptr,
                 std::vector<TransformerBlock::Trace>* traces = nullptr) const;
  Tensor predict(const Tensor& pixels) const;

  TrainConfig config;
  ParameterStore store;
  Encoder encoder;
  Linear head;

 private:
  Classifier(const TrainConfig& config, Rng rng);
};

struct FinetuneRunOptions {
  std::filesystem::path out_dir;
  /// Evaluate this many samples per forward pass.
  std::size_t eval_batch = 32;
};

struct FinetuneRunResult {
  Checkpoint checkpoint;
  std::vector<LossReport> reports;  // lf and batch accuracy per step
  double train_accuracy = 0.0;
  /// Accuracy on the held-out samples (equals train_accuracy when none).
  double accuracy = 0.0;
};

/// Transfers the "encoder." parameters of `pretrained` (if given) into a
/// fresh classifier, trains with mixup and cross entropy and evaluates.
/// With out_dir set, writes finetune_metrics.csv (step,lf,acc) and
/// finetune.ckpt.
FinetuneRunResult run_finetune(const Config& config, const Checkpoint* pretrained,
                               std::span<const ImageSample> train,
                               std::span<const ImageSample> held_out,
                               const FinetuneRunOptions& options = {});

/// Argmax class of every sample, evaluated `batch` samples at a time.
std::vector<int> predict_labels(const Classifier& model, std::span<const ImageSample> samples,
                                std::size_t batch = 32);

/// Labels of labeled samples; throws on a missing label or one outside
/// [0, num_classes).
std::vector<int> sample_labels(std::span<const ImageSample> samples, std::size_t num_classes);

}  // namespace uniemo
