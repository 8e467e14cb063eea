// Acceptance checks: one PASS/FAIL line per criterion. Arguments select a subset (e.g. "acceptance 2 5").

#include "dunet/augment.hpp"
#include "dunet/dataset.hpp"
#include "dunet/gradcheck_suite.hpp"
#include "dunet/metrics.hpp"
#include "dunet/models.hpp"
#include "dunet/optim.hpp"
#include "dunet/synthetic.hpp"
#include "dunet/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

using namespace dunet;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os.precision(precision);
  os << v;
  return os.str();
}

fs::path scratch(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / "dunet_acceptance" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

bool same_bits(const Tensor<float>& a, const Tensor<float>& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data(), b.data(), sizeof(float) * static_cast<std::size_t>(a.size())) == 0;
}

// 1
Outcome gradient_suite() {
  const auto t0 = Clock::now();
  const auto reports = run_gradcheck_suite(20);
  const double elapsed = seconds_since(t0);
  double worst = 0;
  std::string worst_name, failed;
  for (const auto& r : reports) {
    if (r.max_relative_error > worst) {
      worst = r.max_relative_error;
      worst_name = r.name;
    }
    if (!r.passed) failed += " " + r.name;
  }
  Outcome o;
  o.pass = failed.empty() && elapsed < 300.0 && !reports.empty();
  o.detail = std::to_string(reports.size()) + " ops x 20 seeds, worst " + fmt(worst, 3) + " (" + worst_name + "), " +
             fmt(elapsed, 3) + " s" + (failed.empty() ? "" : "; failed:" + failed);
  return o;
}

// 2
Outcome shape_contract() {
  Outcome o{true, ""};
  int checked = 0;
  for (Index h : {64, 128, 256}) {
    for (Index w : {64, 128, 256}) {
      ModelConfig c;
      c.input_h = h;
      c.input_w = w;
      DoubleUNet<float> model(c, 1);
      NoGradGuard<float> g;
      auto out = model.forward(random_tensor<float>({1, 3, h, w}, 2, 0.0, 1.0), Mode::eval);
      const bool ok = out.out1.shape() == Shape{1, 1, h, w} && out.out2.shape() == Shape{1, 1, h, w} &&
                      out.combined.shape() == Shape{1, 2, h, w};
      if (!ok) {
        o.pass = false;
        o.detail += " mismatch at " + std::to_string(h) + "x" + std::to_string(w);
      }
      ++checked;
    }
  }
  o.detail = "full-width DoubleU-Net, " + std::to_string(checked) + " input sizes" + o.detail;
  return o;
}

// 3
Outcome gate_identity() {
  ModelConfig c;
  c.input_h = c.input_w = 64;
  DoubleUNet<double> model(c, 3);
  model.head1.weight.values().setZero();
  model.head1.bias.values().setConstant(50.0);
  Tensor<double> x = random_tensor<double>({2, 3, 64, 64}, 4, 0.0, 1.0);
  NoGradGuard<double> g;
  auto out = model.forward(x, Mode::eval);
  double gate_err = 0, out2_err = 0;
  for (Index i = 0; i < x.size(); ++i) gate_err = std::max(gate_err, std::abs(out.gated.data()[i] - x.data()[i]));
  auto n1 = model.network1(x, Mode::eval);
  Tensor<double> standalone = model.network2(x, n1.skips, Mode::eval);
  for (Index i = 0; i < standalone.size(); ++i) {
    out2_err = std::max(out2_err, std::abs(out.out2.data()[i] - standalone.data()[i]));
  }
  return {gate_err < 1e-6 && out2_err < 1e-6,
          "max |x*out1 - x| = " + fmt(gate_err, 3) + ", max |out2 - network2(x)| = " + fmt(out2_err, 3)};
}

// 4
Outcome metric_oracles() {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> fraction(0.0, 1.0);
  int mismatches = 0;
  double identity_err = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const double pp = fraction(rng), py = fraction(rng);
    std::bernoulli_distribution cp(pp), cy(py);
    Tensor<float> p({1, 1, 16, 16}), y({1, 1, 16, 16});
    std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
    for (Index i = 0; i < 256; ++i) {
      const bool a = cp(rng), b = cy(rng);
      p.data()[i] = a ? 1.0f : 0.0f;
      y.data()[i] = b ? 1.0f : 0.0f;
      if (a && b) ++tp;
      else if (a) ++fp;
      else if (b) ++fn;
      else ++tn;
    }
    const ConfusionCounts c = confusion_counts(p, y);
    if (c.tp != tp || c.fp != fp || c.fn != fn || c.tn != tn) ++mismatches;
    auto ratio = [](std::int64_t num, std::int64_t den) {
      return den == 0 ? 1.0 : static_cast<double>(num) / static_cast<double>(den);
    };
    const double d = ratio(2 * tp, 2 * tp + fp + fn);
    const double ifg = ratio(tp, tp + fp + fn), ibg = ratio(tn, tn + fp + fn);
    const double m = (ifg + ibg) / 2;
    const double prec = ratio(tp, tp + fp), rec = ratio(tp, tp + fn);
    if (dsc(c) != d || miou(c) != m || precision_recall(c).first != prec || precision_recall(c).second != rec) {
      ++mismatches;
    }
    identity_err = std::max(identity_err, std::abs(dsc(c) - 2 * iou_foreground(c) / (1 + iou_foreground(c))));
  }
  return {mismatches == 0 && identity_err < 1e-12,
          "1000 random 16x16 pairs, " + std::to_string(mismatches) + " mismatches, identity error " +
              fmt(identity_err, 3)};
}

struct OverfitResult {
  double dsc = 0;
  long steps = 0;
  double seconds = 0;
};

OverfitResult overfit(const std::string& model, const std::vector<Sample>& images, long max_steps) {
  TrainConfig cfg;
  cfg.model = model;
  cfg.input_height = images[0].height();
  cfg.input_width = images[0].width();
  cfg.width_multiplier = 0.125;
  cfg.se_ratio = 4;
  cfg.batch_size = static_cast<int>(images.size());
  cfg.lr = 1e-3;
  cfg.optimizer = OptimizerKind::adam;
  cfg.loss = LossKind::dice;
  cfg.epochs = static_cast<int>(max_steps);
  cfg.augmentation = false;
  cfg.deterministic = true;
  cfg.seed = 1;
  const auto t0 = Clock::now();
  Trainer trainer(cfg);
  SampleSet train(images);
  OverfitResult r;
  for (int epoch = 1; trainer.state().step < max_steps; ++epoch) {
    trainer.train_epoch(train, epoch);
    if (epoch % 10 == 0 || trainer.state().step >= max_steps) {
      r.dsc = trainer.evaluate(train, 0.5).report.mean.dsc;
      if (r.dsc >= 0.95) break;
    }
  }
  r.steps = trainer.state().step;
  r.seconds = seconds_since(t0);
  return r;
}

// 5
Outcome overfit_test() {
  SyntheticOptions so;
  so.count = 8;
  so.height = so.width = 64;
  so.seed = 11;
  const auto images = make_synthetic_dataset(so);
  const OverfitResult d = overfit("doubleunet", images, 500);
  const OverfitResult u = overfit("unet", images, 500);
  const double total = d.seconds + u.seconds;
  return {d.dsc >= 0.95 && u.dsc >= 0.95 && total < 900.0,
          "DoubleU-Net train DSC " + fmt(d.dsc) + " after " + std::to_string(d.steps) + " steps (" +
              fmt(d.seconds, 3) + " s); U-Net " + fmt(u.dsc) + " after " + std::to_string(u.steps) + " steps (" +
              fmt(u.seconds, 3) + " s)"};
}

// 6
Outcome augmentation_count() {
  SyntheticOptions so;
  so.count = 1;
  so.height = 48;
  so.width = 64;
  so.seed = 5;
  const fs::path root = scratch("augment");
  write_dataset(root / "data", make_synthetic_dataset(so));
  const Sample source = load_dataset(root / "data")[0];
  const AugmentationSpec spec = default_augmentation_spec(17);
  const auto a = augment_sample(source, spec);
  const auto b = augment_sample(source, spec);
  bool binary = true, identical = a.size() == b.size();
  for (std::size_t k = 0; k < a.size(); ++k) {
    for (Index i = 0; i < a[k].mask.size(); ++i) {
      const float v = a[k].mask.data()[i];
      binary = binary && (v == 0.0f || v == 1.0f);
    }
    identical = identical && a[k].id == b[k].id && same_bits(a[k].image, b[k].image) && same_bits(a[k].mask, b[k].mask);
  }
  const std::size_t n1 = run_augment(root / "data", root / "aug1", 17);
  const std::size_t n2 = run_augment(root / "data", root / "aug2", 17);
  bool files_identical = true;
  std::size_t files = 0;
  for (const auto& entry : fs::recursive_directory_iterator(root / "aug1")) {
    if (!entry.is_regular_file()) continue;
    ++files;
    const fs::path twin = root / "aug2" / fs::relative(entry.path(), root / "aug1");
    files_identical = files_identical && slurp(entry.path()) == slurp(twin);
  }
  const bool pass = a.size() == 26 && n1 == 26 && n2 == 26 && files == 52 && binary && identical && files_identical;
  return {pass, std::to_string(a.size()) + " samples in memory, " + std::to_string(files / 2) +
                    " image/mask pairs on disk, masks binary: " + (binary ? "yes" : "no") +
                    ", bitwise repeatable: " + (identical && files_identical ? "yes" : "no")};
}

// 7
Outcome split_arithmetic() {
  std::vector<Sample> samples;
  for (int i = 0; i < 612; ++i) {
    samples.push_back(Sample{"img" + std::to_string(i), Tensor<float>({1, 3, 1, 1}), Tensor<float>({1, 1, 1, 1})});
  }
  const DataSplits s = split_dataset(samples, SplitSpec{42});
  std::set<std::string> seen;
  std::size_t duplicates = 0;
  for (const auto* part : {&s.train, &s.val, &s.test}) {
    for (const auto& x : *part) duplicates += seen.insert(x.id).second ? 0 : 1;
  }
  const bool pass = s.train.size() == 489 && s.val.size() == 61 && s.test.size() == 62 && duplicates == 0 &&
                    seen.size() == 612;
  return {pass, std::to_string(s.train.size()) + "/" + std::to_string(s.val.size()) + "/" +
                    std::to_string(s.test.size()) + ", " + std::to_string(duplicates) + " ids in more than one split"};
}

std::string state_without_paths(const fs::path& file) {
  std::istringstream is(slurp(file));
  std::string out;
  for (std::string line; std::getline(is, line);) {
    if (line.rfind("config.out", 0) == 0 || line.rfind("config.data", 0) == 0) continue;
    out += line + "\n";
  }
  return out;
}

// 8
Outcome determinism_resume() {
  const fs::path root = scratch("determinism");
  SyntheticOptions so;
  so.count = 10;
  so.height = so.width = 32;
  write_dataset(root / "data", make_synthetic_dataset(so));
  TrainConfig cfg;
  cfg.data = (root / "data").string();
  cfg.input_height = cfg.input_width = 32;
  cfg.width_multiplier = 0.125;
  cfg.se_ratio = 4;
  cfg.batch_size = 4;
  cfg.lr = 1e-3;
  cfg.epochs = 10;
  cfg.augmentation = true;
  cfg.max_steps = 0;
  cfg.deterministic = true;

  auto run = [&](const std::string& name, int epochs, const fs::path& resume = {}) {
    TrainConfig c = cfg;
    c.out = (root / name).string();
    c.epochs = epochs;
    return run_train(c, resume);
  };
  const Trainer a = run("a", 10);
  const Trainer b = run("b", 10);
  bool identical = true;
  for (const char* f : {"weights.duow", "optimizer.duow"}) {
    identical = identical && slurp(root / "a" / "last" / f) == slurp(root / "b" / "last" / f) &&
                slurp(root / "a" / "best" / f) == slurp(root / "b" / "best" / f);
  }
  identical = identical && state_without_paths(root / "a" / "last" / "state.cfg") ==
                               state_without_paths(root / "b" / "last" / "state.cfg");
  identical = identical && slurp(root / "a" / "train_log.csv") == slurp(root / "b" / "train_log.csv");

  run("c", 5);
  TrainConfig rest = cfg;
  rest.out = (root / "c").string();
  const Trainer c = run_train(rest, root / "c" / "last");
  const bool resumed = c.log() == a.log() &&
                       slurp(root / "c" / "last" / "weights.duow") == slurp(root / "a" / "last" / "weights.duow") &&
                       slurp(root / "c" / "last" / "optimizer.duow") == slurp(root / "a" / "last" / "optimizer.duow");
  return {identical && resumed && a.log().size() == 10,
          std::string("repeat run bitwise identical: ") + (identical ? "yes" : "no") +
              ", 5 + resume + 5 equals 10 straight: " + (resumed ? "yes" : "no") + " (" +
              std::to_string(a.state().step) + " steps on augmented data)"};
}

// 9
Outcome optimizer_oracles() {
  double worst = 0;
  for (OptimizerKind kind : {OptimizerKind::adam, OptimizerKind::nadam}) {
    for (double g : {1.0, -0.5, 3.0}) {
      ParameterRegistry<double> reg(0);
      Tensor<double> theta = reg.constant("theta", {1, 1, 1, 1}, 0.25);
      AdamOptions o;
      Optimizer<double> opt(kind, o, reg.parameters());
      const double b1 = 0.9, b2 = 0.999, eps = 1e-8, lr = 1e-3;
      // Step 1 and step 2, written out.
      const double m1 = (1 - b1) * g, v1 = (1 - b2) * g * g;
      const double m2 = b1 * m1 + (1 - b1) * g, v2 = b2 * v1 + (1 - b2) * g * g;
      double expect1, expect2;
      if (kind == OptimizerKind::adam) {
        expect1 = 0.25 - lr * (m1 / (1 - b1)) / (std::sqrt(v1 / (1 - b2)) + eps);
        expect2 = expect1 - lr * (m2 / (1 - b1 * b1)) / (std::sqrt(v2 / (1 - b2 * b2)) + eps);
      } else {
        expect1 = 0.25 - lr * (b1 * m1 / (1 - b1 * b1) + (1 - b1) * g / (1 - b1)) / (std::sqrt(v1 / (1 - b2)) + eps);
        expect2 = expect1 - lr * (b1 * m2 / (1 - b1 * b1 * b1) + (1 - b1) * g / (1 - b1 * b1)) /
                                (std::sqrt(v2 / (1 - b2 * b2)) + eps);
      }
      theta.grad()[0] = g;
      opt.step();
      worst = std::max(worst, std::abs(theta.data()[0] - expect1));
      opt.zero_grad();
      theta.grad()[0] = g;
      opt.step();
      worst = std::max(worst, std::abs(theta.data()[0] - expect2));
    }
  }
  ParameterRegistry<double> reg(0);
  Tensor<double> theta = reg.constant("theta", {1, 1, 1, 1}, 1.0);
  AdamOptions o;
  o.lr = 0.1;
  Optimizer<double> opt(OptimizerKind::adam, o, reg.parameters());
  for (int s = 0; s < 200; ++s) {
    opt.zero_grad();
    backward(sum(mul(theta, theta)));
    opt.step();
  }
  const double final_theta = std::abs(theta.data()[0]);
  return {worst < 1e-12 && final_theta < 1e-2,
          "max deviation from unrolled recurrences " + fmt(worst, 3) + "; |theta| after 200 Adam steps on theta^2 = " +
              fmt(final_theta, 3)};
}

// 10
Outcome relative_ordering() {
  SyntheticOptions so;
  so.count = 24;
  so.height = so.width = 64;
  so.seed = 99;
  so.ellipses = true;
  so.max_shapes = 2;
  so.noise = 0.08;
  auto all = make_synthetic_dataset(so);
  std::vector<Sample> train(all.begin(), all.begin() + 16), held(all.begin() + 16, all.end());
  double result[2] = {0, 0};
  const char* kinds[2] = {"doubleunet", "unet"};
  for (int k = 0; k < 2; ++k) {
    TrainConfig cfg;
    cfg.model = kinds[k];
    cfg.input_height = cfg.input_width = 64;
    cfg.width_multiplier = 0.125;
    cfg.se_ratio = 4;
    cfg.batch_size = 8;
    cfg.lr = 1e-3;
    cfg.optimizer = OptimizerKind::adam;
    cfg.loss = LossKind::dice;
    cfg.augmentation = false;
    cfg.seed = 5;
    Trainer t(cfg);
    for (int epoch = 1; t.state().step < 200; ++epoch) t.train_epoch(SampleSet(train), epoch);
    result[k] = t.evaluate(SampleSet(held), 0.5).report.mean.dsc;
  }
  return {true, "diagnostic only, 200 steps each, held-out DSC: DoubleU-Net " + fmt(result[0]) + " vs U-Net " +
                    fmt(result[1])};
}

}  // namespace

int main(int argc, char** argv) {
  struct Criterion {
    int id;
    const char* title;
    Outcome (*run)();
  };
  const Criterion criteria[] = {
      {1, "gradient suite", gradient_suite},
      {2, "shape contract", shape_contract},
      {3, "gate identity", gate_identity},
      {4, "metric oracles", metric_oracles},
      {5, "overfit test", overfit_test},
      {6, "augmentation count", augmentation_count},
      {7, "split arithmetic", split_arithmetic},
      {8, "determinism and resume", determinism_resume},
      {9, "optimizer oracles", optimizer_oracles},
      {10, "relative ordering (diagnostic)", relative_ordering},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  int failures = 0;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::cout << (o.pass ? "PASS" : "FAIL") << "  criterion " << c.id << ": " << c.title << " - " << o.detail
              << std::endl;
    failures += o.pass ? 0 : 1;
  }
  return failures == 0 ? 0 : 1;
}
