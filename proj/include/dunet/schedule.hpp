#pragma once

#include <limits>

namespace dunet {

/// Multiplies the learning rate by `factor` after `patience` epochs without an
/// improvement larger than `min_delta` in the monitored (lower-is-better) value.
struct PlateauState {
  double best = std::numeric_limits<double>::infinity();
  int epochs_since_improvement = 0;
  double factor = 0.1;
  int patience = 5;
  double min_delta = 1e-4;
  double min_lr = 1e-7;
};

/// Returns the learning rate to use from the next epoch on; never larger than `lr`.
double reduce_on_plateau(PlateauState& state, double val_metric, double lr);

/// Raises the stop flag once `patience` epochs pass without an improvement
/// larger than `min_delta`. patience <= 0 disables stopping.
struct EarlyStopState {
  double best = std::numeric_limits<double>::infinity();
  int epochs_since_improvement = 0;
  int patience = 15;
  double min_delta = 1e-4;
  bool stopped = false;
};

bool early_stopping(EarlyStopState& state, double val_loss);

}  // namespace dunet
