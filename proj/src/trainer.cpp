#include "dunet/trainer.hpp"

#include "dunet/png_io.hpp"
#include "dunet/weights_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace dunet {

namespace fs = std::filesystem;

namespace {

constexpr std::size_t kVariants = kAugmentationsPerImage + 1;

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double to_double(const std::string& text, const std::string& what) {
  double v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw FormatError(what + ": expected a number, got '" + text + "'");
  }
  return v;
}

long to_long(const std::string& text, const std::string& what) {
  long v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw FormatError(what + ": expected an integer, got '" + text + "'");
  }
  return v;
}

std::string read_text(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot read " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

Batch gather(const SampleSet& set, std::span<const std::size_t> indices) {
  std::vector<Sample> samples;
  samples.reserve(indices.size());
  for (std::size_t i : indices) samples.push_back(set.get(i));
  std::vector<std::size_t> all(samples.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return make_batch(samples, all);
}

std::unique_ptr<Optimizer<float>> make_optimizer(const TrainConfig& cfg, SegmentationModel<float>& model) {
  AdamOptions o;
  o.lr = cfg.lr;
  return std::make_unique<Optimizer<float>>(cfg.optimizer, o, model.registry().parameters());
}

std::vector<Parameter<float>> moment_entries(const Optimizer<float>& opt) {
  std::vector<Parameter<float>> out;
  const auto& params = opt.parameters();
  const auto& st = opt.state();
  for (std::size_t i = 0; i < params.size(); ++i) {
    out.push_back({"m." + params[i].name, Tensor<float>(params[i].tensor.shape(), st.m[i])});
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    out.push_back({"v." + params[i].name, Tensor<float>(params[i].tensor.shape(), st.v[i])});
  }
  return out;
}

}  // namespace

SampleSet::SampleSet(std::vector<Sample> base, std::optional<AugmentationSpec> augmentation)
    : base_(std::move(base)), augmentation_(std::move(augmentation)) {
  if (augmentation_ && augmentation_->transforms.size() != kAugmentationsPerImage) {
    throw std::invalid_argument("augmentation spec must hold exactly " + std::to_string(kAugmentationsPerImage) +
                                " transforms");
  }
}

std::size_t SampleSet::size() const { return augmentation_ ? base_.size() * kVariants : base_.size(); }

Sample SampleSet::get(std::size_t i) const {
  if (i >= size()) throw std::out_of_range("sample index " + std::to_string(i) + " out of range");
  if (!augmentation_) return base_[i];
  const Sample& s = base_[i / kVariants];
  const std::size_t k = i % kVariants;
  if (k == 0) return Sample{s.id + "_0", s.image, s.mask};
  Sample t = apply_transform(s, augmentation_->transforms[k - 1]);
  // Quarter turns and the transpose swap H and W of non-square inputs.
  if (t.height() != s.height() || t.width() != s.width()) t = resize_sample(t, s.height(), s.width());
  t.id = s.id + "_" + std::to_string(k);
  return t;
}

void write_log_csv(std::ostream& os, std::span<const EpochLog> rows) {
  os << kLogHeader << '\n';
  for (const auto& r : rows) {
    os << r.epoch << ',' << format_double(r.train_loss) << ',' << format_double(r.val_loss) << ','
       << format_double(r.val_dsc) << ',' << format_double(r.val_miou) << ',' << format_double(r.lr) << ','
       << r.steps << '\n';
  }
}

void write_log_csv(const fs::path& path, std::span<const EpochLog> rows) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot write " + path.string());
  write_log_csv(os, rows);
}

std::vector<EpochLog> read_log_csv(const fs::path& path) {
  std::istringstream is(read_text(path));
  std::string line;
  if (!std::getline(is, line) || line != kLogHeader) {
    throw FormatError(path.string() + ": missing log header '" + std::string(kLogHeader) + "'");
  }
  std::vector<EpochLog> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (f.size() != 7) throw FormatError(path.string() + ": malformed log row '" + line + "'");
    const std::string what = path.string();
    rows.push_back({static_cast<int>(to_long(f[0], what)), to_double(f[1], what), to_double(f[2], what),
                    to_double(f[3], what), to_double(f[4], what), to_double(f[5], what), to_long(f[6], what)});
  }
  return rows;
}

Trainer::Trainer(TrainConfig config) : config_(std::move(config)) {
  config_.validate();
  model_ = make_model<float>(config_.model, config_.model_config(), config_.seed);
  optimizer_ = make_optimizer(config_, *model_);
  state_.plateau.factor = config_.plateau_factor;
  state_.plateau.patience = config_.plateau_patience;
  state_.plateau.min_delta = config_.min_delta;
  state_.plateau.min_lr = config_.min_lr;
  state_.early.patience = config_.early_stop_patience;
  state_.early.min_delta = config_.min_delta;
}

void Trainer::set_epochs(int epochs) {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  config_.epochs = epochs;
}

Tensor<float> Trainer::batch_loss(const std::vector<Tensor<float>>& masks, const Tensor<float>& target) const {
  Tensor<float> total = segmentation_loss(config_.loss, masks.front(), target);
  for (std::size_t i = 1; i < masks.size(); ++i) total = add(total, segmentation_loss(config_.loss, masks[i], target));
  return masks.size() == 1 ? total : scale(total, 1.0f / static_cast<float>(masks.size()));
}

double Trainer::train_epoch(const SampleSet& train, int epoch) {
  if (train.empty()) throw DataError("no training samples");
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(mix(config_.seed ^ mix(static_cast<std::uint64_t>(epoch))));
  std::shuffle(order.begin(), order.end(), rng);

  auto& tape = Tape<float>::active();
  tape.clear();
  double loss_sum = 0;
  std::size_t seen = 0;
  const auto batch = static_cast<std::size_t>(config_.batch_size);
  for (std::size_t start = 0; start < order.size(); start += batch) {
    if (config_.max_steps > 0 && state_.step >= config_.max_steps) break;
    const std::size_t count = std::min(batch, order.size() - start);
    Batch b = gather(train, std::span<const std::size_t>(order).subspan(start, count));
    optimizer_->zero_grad();
    Tensor<float> loss = batch_loss(model_->forward_masks(b.images, Mode::train), b.masks);
    const double value = loss.item();
    if (!std::isfinite(value)) {
      tape.clear();
      throw NumericError("non-finite training loss " + format_double(value) + " at epoch " + std::to_string(epoch) +
                         ", step " + std::to_string(state_.step + 1));
    }
    backward(loss);
    optimizer_->step();
    ++state_.step;
    loss_sum += value * static_cast<double>(count);
    seen += count;
  }
  optimizer_->zero_grad();
  return seen == 0 ? 0.0 : loss_sum / static_cast<double>(seen);
}

EvalResult Trainer::evaluate(const SampleSet& samples, double threshold) {
  if (samples.empty()) throw DataError("no samples to evaluate");
  NoGradGuard<float> guard;
  EvalResult result;
  std::vector<ImageMetrics> images;
  double loss_sum = 0;
  const auto batch = static_cast<std::size_t>(config_.batch_size);
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < samples.size(); start += batch) {
    const std::size_t count = std::min(batch, samples.size() - start);
    idx.resize(count);
    std::iota(idx.begin(), idx.end(), start);
    std::vector<Sample> items;
    for (std::size_t i : idx) items.push_back(samples.get(i));
    std::vector<std::size_t> local(count);
    std::iota(local.begin(), local.end(), std::size_t{0});
    Batch b = make_batch(items, local);
    auto masks = model_->forward_masks(b.images, Mode::eval);
    loss_sum += batch_loss(masks, b.masks).item() * static_cast<double>(count);
    auto counts = confusion_counts_per_image(binarize(masks.back(), threshold), b.masks);
    for (std::size_t i = 0; i < count; ++i) images.push_back(image_metrics(items[i].id, counts[i]));
  }
  result.loss = loss_sum / static_cast<double>(samples.size());
  result.report = MetricsReport::from(std::move(images), threshold);
  return result;
}

void Trainer::fit(const SampleSet& train, const SampleSet& val, const FitOptions& options) {
  if (val.empty()) throw DataError("no validation samples");
  const int last = options.until_epoch > 0 ? std::min(options.until_epoch, config_.epochs) : config_.epochs;
  if (!options.out_dir.empty()) fs::create_directories(options.out_dir);
  for (int epoch = state_.epoch + 1; epoch <= last && !state_.early.stopped; ++epoch) {
    if (config_.max_steps > 0 && state_.step >= config_.max_steps) break;
    EpochLog row;
    row.epoch = epoch;
    row.lr = optimizer_->lr();
    row.train_loss = train_epoch(train, epoch);
    EvalResult ev = evaluate(val, config_.threshold);
    if (!std::isfinite(ev.loss)) throw NumericError("non-finite validation loss at epoch " + std::to_string(epoch));
    row.val_loss = ev.loss;
    row.val_dsc = ev.report.mean.dsc;
    row.val_miou = ev.report.mean.miou;
    row.steps = state_.step;
    log_.push_back(row);
    state_.epoch = epoch;

    const bool improved = row.val_dsc > state_.best_val_dsc;
    if (improved) {
      state_.best_val_dsc = row.val_dsc;
      state_.best_epoch = epoch;
    }
    if (config_.plateau_patience > 0) optimizer_->set_lr(reduce_on_plateau(state_.plateau, row.val_loss, row.lr));
    early_stopping(state_.early, row.val_loss);

    if (!options.out_dir.empty()) {
      if (improved) save_checkpoint(options.out_dir / "best");
      save_checkpoint(options.out_dir / "last");
      write_log_csv(options.out_dir / "train_log.csv", log_);
    }
    if (options.on_epoch) options.on_epoch(row);
  }
}

void Trainer::save_checkpoint(const fs::path& dir) const {
  fs::create_directories(dir);
  save_weights(model_->registry(), dir / "weights.duow");
  const auto moments = moment_entries(*optimizer_);
  write_weights_file(dir / "optimizer.duow", std::span<const Parameter<float>>(moments));
  std::ostringstream os;
  os << "epoch = " << state_.epoch << '\n'
     << "step = " << state_.step << '\n'
     << "optimizer_step = " << optimizer_->state().step << '\n'
     << "lr = " << format_double(optimizer_->lr()) << '\n'
     << "best_val_dsc = " << format_double(state_.best_val_dsc) << '\n'
     << "best_epoch = " << state_.best_epoch << '\n'
     << "plateau_best = " << format_double(state_.plateau.best) << '\n'
     << "plateau_wait = " << state_.plateau.epochs_since_improvement << '\n'
     << "early_best = " << format_double(state_.early.best) << '\n'
     << "early_wait = " << state_.early.epochs_since_improvement << '\n'
     << "early_stopped = " << (state_.early.stopped ? 1 : 0) << '\n';
  std::istringstream cfg(to_config_text(config_));
  std::string line;
  while (std::getline(cfg, line)) os << "config." << line << '\n';
  std::ofstream out(dir / "state.cfg", std::ios::binary);
  if (!out) throw FormatError("cannot write " + (dir / "state.cfg").string());
  out << os.str();
  write_log_csv(dir / "train_log.csv", log_);
}

namespace {

std::map<std::string, std::string> read_state(const fs::path& dir) {
  const fs::path path = dir / "state.cfg";
  if (!fs::exists(path)) throw FormatError("checkpoint state " + path.string() + " not found");
  return parse_key_values(read_text(path), path.string());
}

const std::string& require(const std::map<std::string, std::string>& kv, const std::string& key,
                           const fs::path& dir) {
  auto it = kv.find(key);
  if (it == kv.end()) throw FormatError((dir / "state.cfg").string() + ": missing key '" + key + "'");
  return it->second;
}

}  // namespace

TrainConfig read_checkpoint_config(const fs::path& dir) {
  const auto kv = read_state(dir);
  TrainConfig cfg;
  const std::string where = (dir / "state.cfg").string();
  for (const auto& [key, value] : kv) {
    if (key.rfind("config.", 0) == 0) set_config_value(cfg, key.substr(7), value, where);
  }
  return cfg;
}

Trainer Trainer::from_checkpoint(const fs::path& dir) {
  const auto kv = read_state(dir);
  Trainer t(read_checkpoint_config(dir));
  load_weights(t.model_->registry(), dir / "weights.duow");
  auto moments = moment_entries(*t.optimizer_);
  assign_named(std::span<const Parameter<float>>(moments), read_weights_file(dir / "optimizer.duow"),
               dir / "optimizer.duow");
  auto& st = t.optimizer_->state();
  const std::size_t n = st.m.size();
  for (std::size_t i = 0; i < n; ++i) {
    st.m[i] = moments[i].tensor.values();
    st.v[i] = moments[n + i].tensor.values();
  }
  const std::string what = (dir / "state.cfg").string();
  st.step = to_long(require(kv, "optimizer_step", dir), what);
  t.optimizer_->set_lr(to_double(require(kv, "lr", dir), what));
  t.state_.epoch = static_cast<int>(to_long(require(kv, "epoch", dir), what));
  t.state_.step = to_long(require(kv, "step", dir), what);
  t.state_.best_val_dsc = to_double(require(kv, "best_val_dsc", dir), what);
  t.state_.best_epoch = static_cast<int>(to_long(require(kv, "best_epoch", dir), what));
  t.state_.plateau.best = to_double(require(kv, "plateau_best", dir), what);
  t.state_.plateau.epochs_since_improvement = static_cast<int>(to_long(require(kv, "plateau_wait", dir), what));
  t.state_.early.best = to_double(require(kv, "early_best", dir), what);
  t.state_.early.epochs_since_improvement = static_cast<int>(to_long(require(kv, "early_wait", dir), what));
  t.state_.early.stopped = to_long(require(kv, "early_stopped", dir), what) != 0;
  if (fs::exists(dir / "train_log.csv")) t.log_ = read_log_csv(dir / "train_log.csv");
  return t;
}

fs::path checkpoint_dir(const fs::path& weights) {
  if (fs::is_directory(weights)) return weights;
  if (fs::is_regular_file(weights)) return weights.parent_path().empty() ? fs::path(".") : weights.parent_path();
  throw FormatError("weights path " + weights.string() + " does not exist");
}

std::unique_ptr<SegmentationModel<float>> load_model(const fs::path& weights) {
  const fs::path dir = checkpoint_dir(weights);
  const TrainConfig cfg = read_checkpoint_config(dir);
  auto model = make_model<float>(cfg.model, cfg.model_config(), cfg.seed);
  load_weights(model->registry(), fs::is_regular_file(weights) ? weights : dir / "weights.duow");
  return model;
}

namespace {

std::vector<Sample> load_resized(const fs::path& root, Index h, Index w) {
  std::vector<Sample> samples = load_dataset(root);
  if (samples.empty()) throw DataError("no samples in " + root.string());
  for (auto& s : samples) {
    if (s.height() != h || s.width() != w) s = resize_sample(s, h, w);
  }
  return samples;
}

}  // namespace

PreparedData prepare_data(const TrainConfig& config) {
  if (config.data.empty()) throw ConfigError("no dataset root configured (key 'data' or --data)");
  auto samples = load_resized(config.data, config.input_height, config.input_width);
  SplitSpec spec;
  spec.seed = config.seed;
  DataSplits splits = split_dataset(samples, spec);
  std::optional<AugmentationSpec> aug;
  if (config.augmentation) aug = default_augmentation_spec(config.seed);
  PreparedData out;
  out.train = SampleSet(std::move(splits.train), aug);
  out.val = SampleSet(std::move(splits.val), config.augment_all_splits ? aug : std::nullopt);
  out.test = SampleSet(std::move(splits.test), config.augment_all_splits ? aug : std::nullopt);
  return out;
}

Trainer run_train(const TrainConfig& config, const fs::path& resume, std::function<void(const EpochLog&)> on_epoch) {
  if (resume.empty()) {
    Trainer trainer(config);
    PreparedData data = prepare_data(trainer.config());
    trainer.fit(data.train, data.val, {config.out, 0, on_epoch});
    return trainer;
  }
  Trainer trainer = Trainer::from_checkpoint(checkpoint_dir(resume));
  trainer.set_epochs(config.epochs);
  PreparedData data = prepare_data(trainer.config());
  trainer.fit(data.train, data.val, {config.out, 0, on_epoch});
  return trainer;
}

SplitName parse_split(std::string_view name) {
  if (name == "train") return SplitName::train;
  if (name == "val") return SplitName::val;
  if (name == "test") return SplitName::test;
  if (name == "all") return SplitName::all;
  throw std::invalid_argument("unknown split '" + std::string(name) + "' (expected train|val|test|all)");
}

MetricsReport run_evaluate(const fs::path& weights, const fs::path& data, SplitName split, double threshold) {
  const fs::path dir = checkpoint_dir(weights);
  TrainConfig cfg = read_checkpoint_config(dir);
  cfg.data = data.string();
  cfg.augmentation = false;
  std::vector<Sample> samples = load_dataset(data);
  if (samples.empty()) throw DataError("no samples in " + data.string());
  for (auto& s : samples) {
    if (s.height() != cfg.input_height || s.width() != cfg.input_width) {
      s = resize_sample(s, cfg.input_height, cfg.input_width);
    }
  }
  std::vector<Sample> chosen;
  if (split == SplitName::all) {
    chosen = std::move(samples);
  } else {
    SplitSpec spec;
    spec.seed = cfg.seed;
    DataSplits splits = split_dataset(samples, spec);
    chosen = split == SplitName::train ? splits.train : split == SplitName::val ? splits.val : splits.test;
  }
  if (chosen.empty()) throw DataError("no samples in the selected split");
  Trainer evaluator(cfg);
  load_weights(evaluator.model().registry(), fs::is_regular_file(weights) ? weights : dir / "weights.duow");
  return evaluator.evaluate(SampleSet(std::move(chosen)), threshold).report;
}

std::vector<fs::path> run_predict(const fs::path& weights, const fs::path& input, const fs::path& out_dir,
                                  double threshold) {
  std::vector<fs::path> inputs;
  if (fs::is_directory(input)) {
    for (const auto& e : fs::directory_iterator(input)) {
      if (e.is_regular_file() && e.path().extension() == ".png") inputs.push_back(e.path());
    }
    std::sort(inputs.begin(), inputs.end());
  } else if (fs::is_regular_file(input)) {
    inputs.push_back(input);
  }
  if (inputs.empty()) throw DataError("no input images at " + input.string());

  auto model = load_model(weights);
  const ModelConfig& mc = model->config();
  fs::create_directories(out_dir);
  std::vector<fs::path> written;
  NoGradGuard<float> guard;
  for (const auto& path : inputs) {
    Image8 raw;
    try {
      raw = read_png(path, 3);
    } catch (const std::exception& e) {
      throw DataError("cannot decode " + path.string() + ": " + e.what());
    }
    Tensor<float> image = to_tensor(raw);
    const Index h = image.h(), w = image.w();
    Sample s{path.stem().string(), image, Tensor<float>::zeros({1, 1, h, w})};
    Sample model_in = (h == mc.input_h && w == mc.input_w) ? s : resize_sample(s, mc.input_h, mc.input_w);
    auto masks = model->forward_masks(model_in.image, Mode::eval);
    std::vector<Tensor<float>> outs;
    for (std::size_t k = masks.size() >= 2 ? masks.size() - 2 : 0; k < masks.size(); ++k) {
      Tensor<float> m = binarize(masks[k], threshold);
      outs.push_back(m.h() == h && m.w() == w ? m : resize_nearest(m, h, w));
    }
    if (outs.size() == 1) outs.push_back(outs.front());

    const std::string stem = path.stem().string();
    for (std::size_t k = 0; k < 2; ++k) {
      const fs::path p = out_dir / (stem + "_out" + std::to_string(k + 1) + ".png");
      write_png(p, to_image8(outs[k]));
      written.push_back(p);
    }
    Tensor<float> panel = Tensor<float>::zeros({1, 3, h, 3 * w});
    for (Index c = 0; c < 3; ++c) {
      for (Index y = 0; y < h; ++y) {
        for (Index x = 0; x < w; ++x) {
          panel.at(0, c, y, x) = image.at(0, c, y, x);
          panel.at(0, c, y, w + x) = outs[0].at(0, 0, y, x);
          panel.at(0, c, y, 2 * w + x) = outs[1].at(0, 0, y, x);
        }
      }
    }
    const fs::path p = out_dir / (stem + "_panel.png");
    write_png(p, to_image8(panel));
    written.push_back(p);
  }
  return written;
}

std::size_t run_augment(const fs::path& data, const fs::path& out_dir, std::uint64_t seed) {
  const std::vector<Sample> samples = load_dataset(data);
  if (samples.empty()) throw DataError("no samples in " + data.string());
  const AugmentationSpec spec = default_augmentation_spec(seed);
  std::size_t count = 0;
  for (const auto& s : samples) {
    const auto out = augment_sample(s, spec);
    write_dataset(out_dir, out);
    count += out.size();
  }
  return count;
}

}  // namespace dunet
