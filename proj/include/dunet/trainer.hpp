#pragma once

#include "dunet/config.hpp"
#include "dunet/augment.hpp"
#include "dunet/dataset.hpp"
#include "dunet/image.hpp"
#include "dunet/metrics.hpp"
#include "dunet/schedule.hpp"

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dunet {

/// Non-finite loss or parameters during training.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0;
  double val_loss = 0;
  double val_dsc = 0;
  double val_miou = 0;
  double lr = 0;
  long steps = 0;  // cumulative optimizer steps at the end of the epoch

  bool operator==(const EpochLog&) const = default;
};

inline constexpr const char* kLogHeader = "epoch,train_loss,val_loss,val_dsc,val_miou,lr,steps";

void write_log_csv(std::ostream& os, std::span<const EpochLog> rows);
void write_log_csv(const std::filesystem::path& path, std::span<const EpochLog> rows);
std::vector<EpochLog> read_log_csv(const std::filesystem::path& path);

/// Base samples, optionally expanded lazily to the 26 augmented variants of each.
/// Index i maps to variant i % 26 of base sample i / 26.
class SampleSet {
 public:
  SampleSet() = default;
  SampleSet(std::vector<Sample> base, std::optional<AugmentationSpec> augmentation = std::nullopt);

  std::size_t size() const;
  bool empty() const { return size() == 0; }
  Sample get(std::size_t i) const;
  const std::vector<Sample>& base() const { return base_; }

 private:
  std::vector<Sample> base_;
  std::optional<AugmentationSpec> augmentation_;
};

struct TrainState {
  int epoch = 0;  // last completed epoch
  long step = 0;
  double best_val_dsc = -std::numeric_limits<double>::infinity();
  int best_epoch = 0;
  PlateauState plateau;
  EarlyStopState early;
};

struct EvalResult {
  double loss = 0;
  MetricsReport report;
};

struct FitOptions {
  /// When set: writes train_log.csv plus best/ and last/ checkpoints here.
  std::filesystem::path out_dir;
  /// Stop after this epoch even if config.epochs is larger; 0 runs to config.epochs.
  int until_epoch = 0;
  std::function<void(const EpochLog&)> on_epoch;
};

/// Owns a model, its optimizer and the schedule state for one training run.
class Trainer {
 public:
  explicit Trainer(TrainConfig config);

  const TrainConfig& config() const { return config_; }
  SegmentationModel<float>& model() { return *model_; }
  Optimizer<float>& optimizer() { return *optimizer_; }
  const TrainState& state() const { return state_; }
  const std::vector<EpochLog>& log() const { return log_; }

  /// Runs epochs state().epoch + 1 onwards. Throws NumericError on a non-finite loss.
  void fit(const SampleSet& train, const SampleSet& val, const FitOptions& options = {});

  /// One shuffled pass with an optimizer step per minibatch; returns the mean loss.
  double train_epoch(const SampleSet& train, int epoch);

  /// Eval-mode forward in minibatches; loss is the sample-weighted mean, metrics use the last mask.
  EvalResult evaluate(const SampleSet& samples, double threshold);

  /// dir/weights.duow, dir/optimizer.duow, dir/state.cfg and dir/train_log.csv.
  void save_checkpoint(const std::filesystem::path& dir) const;
  static Trainer from_checkpoint(const std::filesystem::path& dir);

  /// Changes the epoch budget, e.g. to extend a resumed run.
  void set_epochs(int epochs);

 private:
  Tensor<float> batch_loss(const std::vector<Tensor<float>>& masks, const Tensor<float>& target) const;

  TrainConfig config_;
  std::unique_ptr<SegmentationModel<float>> model_;
  std::unique_ptr<Optimizer<float>> optimizer_;
  TrainState state_;
  std::vector<EpochLog> log_;
};

/// Reads the config snapshot stored in a checkpoint directory.
TrainConfig read_checkpoint_config(const std::filesystem::path& dir);

/// Accepts a checkpoint directory or the weights.duow file inside one.
std::filesystem::path checkpoint_dir(const std::filesystem::path& weights);

/// Loads only the model of a checkpoint (for evaluation and prediction).
std::unique_ptr<SegmentationModel<float>> load_model(const std::filesystem::path& weights);

struct PreparedData {
  SampleSet train;
  SampleSet val;
  SampleSet test;
};

/// Loads, resizes to the configured input size, splits and attaches augmentation.
PreparedData prepare_data(const TrainConfig& config);

/// Full training run writing into config.out. With `resume` set, continues from that checkpoint.
Trainer run_train(const TrainConfig& config, const std::filesystem::path& resume = {},
                  std::function<void(const EpochLog&)> on_epoch = {});

enum class SplitName { train, val, test, all };
SplitName parse_split(std::string_view name);

MetricsReport run_evaluate(const std::filesystem::path& weights, const std::filesystem::path& data,
                           SplitName split, double threshold);

/// Writes {stem}_out1.png, {stem}_out2.png (0/255 masks at input size) and {stem}_panel.png
/// (input | out1 | out2). A directory input processes every PNG inside. Returns written paths.
std::vector<std::filesystem::path> run_predict(const std::filesystem::path& weights,
                                               const std::filesystem::path& input,
                                               const std::filesystem::path& out_dir, double threshold = 0.5);

/// Writes 26 samples per input pair into out_dir/images and out_dir/masks; returns the count.
std::size_t run_augment(const std::filesystem::path& data, const std::filesystem::path& out_dir, std::uint64_t seed);

}  // namespace dunet
