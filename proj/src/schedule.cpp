#include "dunet/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dunet {

double reduce_on_plateau(PlateauState& state, double val_metric, double lr) {
  if (!std::isfinite(val_metric)) throw std::domain_error("reduce_on_plateau: non-finite metric");
  if (val_metric < state.best - state.min_delta) {
    state.best = val_metric;
    state.epochs_since_improvement = 0;
    return lr;
  }
  if (state.patience <= 0) return lr;
  if (++state.epochs_since_improvement >= state.patience) {
    state.epochs_since_improvement = 0;
    return std::min(lr, std::max(lr * state.factor, state.min_lr));
  }
  return lr;
}

bool early_stopping(EarlyStopState& state, double val_loss) {
  if (!std::isfinite(val_loss)) throw std::domain_error("early_stopping: non-finite loss");
  if (state.stopped) return true;
  if (val_loss < state.best - state.min_delta) {
    state.best = val_loss;
    state.epochs_since_improvement = 0;
    return false;
  }
  if (state.patience > 0 && ++state.epochs_since_improvement >= state.patience) state.stopped = true;
  return state.stopped;
}

}  // namespace dunet
