#include "cli.hpp"

#include "dunet/gradcheck_suite.hpp"
#include "dunet/synthetic.hpp"
#include "dunet/tensor_io.hpp"
#include "dunet/trainer.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <ostream>

namespace dunet::cli {

namespace {

struct TrainArgs {
  std::string config;
  std::string data, out, model, optimizer, loss, resume;
  std::optional<std::uint64_t> seed;
  std::optional<double> lr, width;
  std::optional<int> batch, epochs;
  std::optional<long> max_steps;
  std::vector<std::string> set;
  bool deterministic = false;
  bool no_augment = false;
  bool print_config = false;
};

TrainConfig resolve(const TrainArgs& a) {
  TrainConfig cfg = a.config.empty() ? TrainConfig{} : parse_config(a.config);
  if (!a.data.empty()) cfg.data = a.data;
  if (!a.out.empty()) cfg.out = a.out;
  if (!a.model.empty()) set_config_value(cfg, "model", a.model, "--model");
  if (!a.optimizer.empty()) set_config_value(cfg, "optimizer", a.optimizer, "--optimizer");
  if (!a.loss.empty()) set_config_value(cfg, "loss", a.loss, "--loss");
  if (a.seed) cfg.seed = *a.seed;
  if (a.lr) cfg.lr = *a.lr;
  if (a.width) cfg.width_multiplier = *a.width;
  if (a.batch) cfg.batch_size = *a.batch;
  if (a.epochs) cfg.epochs = *a.epochs;
  if (a.max_steps) cfg.max_steps = *a.max_steps;
  if (a.deterministic) cfg.deterministic = true;
  if (a.no_augment) cfg.augmentation = false;
  for (const auto& kv : a.set) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1), "--set");
  }
  cfg.validate();
  return cfg;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"DoubleU-Net segmentation: train, evaluate, predict, augment, gradcheck"};
  app.require_subcommand(1);

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train a model (writes train_log.csv, best/ and last/ checkpoints)");
  train->add_option("--config", ta.config, "key = value configuration file")->check(CLI::ExistingFile);
  train->add_option("--data", ta.data, "Dataset root holding images/ and masks/");
  train->add_option("--out", ta.out, "Output directory");
  train->add_option("--seed", ta.seed, "Random seed");
  train->add_option("--lr", ta.lr, "Learning rate");
  train->add_option("--batch", ta.batch, "Batch size");
  train->add_option("--model", ta.model, "doubleunet|unet");
  train->add_option("--optimizer", ta.optimizer, "adam|nadam");
  train->add_option("--loss", ta.loss, "bce|dice");
  train->add_option("--epochs", ta.epochs, "Epoch budget");
  train->add_option("--width", ta.width, "Width multiplier in (0, 1]");
  train->add_option("--max-steps", ta.max_steps, "Stop after this many optimizer steps");
  train->add_option("--resume", ta.resume, "Continue from a checkpoint directory");
  train->add_option("--set", ta.set, "Override any config key: --set key=value");
  train->add_flag("--deterministic", ta.deterministic, "Fully serial execution");
  train->add_flag("--no-augment", ta.no_augment, "Disable augmentation");
  train->add_flag("--print-config", ta.print_config, "Print the resolved configuration and exit");

  std::string ev_weights, ev_data, ev_split = "test", ev_csv;
  double ev_threshold = 0.5;
  auto* evaluate = app.add_subcommand("evaluate", "Per-image and mean DSC, mIoU, precision, recall");
  evaluate->add_option("--weights", ev_weights, "Checkpoint directory or its weights.duow")->required();
  evaluate->add_option("--data", ev_data, "Dataset root")->required();
  evaluate->add_option("--split", ev_split, "train|val|test|all");
  evaluate->add_option("--threshold", ev_threshold, "Binarization threshold");
  evaluate->add_option("--csv", ev_csv, "Write the report here instead of stdout");

  std::string pr_weights, pr_input, pr_out;
  double pr_threshold = 0.5;
  auto* predict = app.add_subcommand("predict", "Write out1/out2 masks and an input|out1|out2 panel");
  predict->add_option("--weights", pr_weights, "Checkpoint directory or its weights.duow")->required();
  predict->add_option("--input", pr_input, "PNG image or directory of PNGs")->required();
  predict->add_option("--out", pr_out, "Output directory")->required();
  predict->add_option("--threshold", pr_threshold, "Binarization threshold");

  std::string au_data, au_out;
  std::uint64_t au_seed = 42;
  auto* augment = app.add_subcommand("augment", "Write 26 variants of every image/mask pair");
  augment->add_option("--data", au_data, "Dataset root")->required();
  augment->add_option("--out", au_out, "Output dataset root")->required();
  augment->add_option("--seed", au_seed, "Augmentation seed");

  int gc_seeds = 20;
  double gc_tolerance = 1e-4;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every op and block");
  gradcheck->add_option("--seeds", gc_seeds, "Random draws per op")->check(CLI::PositiveNumber);
  gradcheck->add_option("--tolerance", gc_tolerance, "Maximum relative error");

  SyntheticOptions so;
  std::string sy_out;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic disc dataset");
  synth->add_option("--out", sy_out, "Output dataset root")->required();
  synth->add_option("--count", so.count, "Number of images");
  synth->add_option("--height", so.height, "Image height");
  synth->add_option("--width", so.width, "Image width");
  synth->add_option("--seed", so.seed, "Generator seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << "run with --help for usage\n";
    return kUsage;
  }

  try {
    if (*train) {
      TrainConfig cfg = resolve(ta);
      if (ta.print_config) {
        out << to_config_text(cfg);
        return kOk;
      }
      out << "epoch,train_loss,val_loss,val_dsc,val_miou,lr,steps\n";
      Trainer t = run_train(cfg, ta.resume, [&out](const EpochLog& r) {
        out << r.epoch << ',' << format_double(r.train_loss) << ',' << format_double(r.val_loss) << ','
            << format_double(r.val_dsc) << ',' << format_double(r.val_miou) << ',' << format_double(r.lr) << ','
            << r.steps << std::endl;
      });
      out << "best val DSC " << format_double(t.state().best_val_dsc) << " at epoch " << t.state().best_epoch
          << "; checkpoints in " << cfg.out << "\n";
    } else if (*evaluate) {
      MetricsReport report = run_evaluate(ev_weights, ev_data, parse_split(ev_split), ev_threshold);
      if (ev_csv.empty()) {
        report.write_csv(out);
      } else {
        std::ofstream os(ev_csv);
        if (!os) throw DataError("cannot write " + ev_csv);
        report.write_csv(os);
        out << "mean DSC " << format_double(report.mean.dsc) << ", mIoU " << format_double(report.mean.miou)
            << " over " << report.images.size() << " images\n";
      }
    } else if (*predict) {
      for (const auto& p : run_predict(pr_weights, pr_input, pr_out, pr_threshold)) out << p.string() << "\n";
    } else if (*augment) {
      out << run_augment(au_data, au_out, au_seed) << " samples written to " << au_out << "\n";
    } else if (*gradcheck) {
      GradCheckOptions o;
      o.tolerance = gc_tolerance;
      const auto reports = run_gradcheck_suite(gc_seeds, o);
      write_gradcheck_table(out, reports);
      for (const auto& r : reports) {
        if (!r.passed) return kNumericError;
      }
    } else if (*synth) {
      const auto samples = make_synthetic_dataset(so);
      write_dataset(sy_out, samples);
      out << samples.size() << " samples written to " << sy_out << "\n";
    }
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << "\n";
    return kUsage;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << "\n";
    return kNumericError;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const FormatError& e) {
    err << "format error: " << e.what() << "\n";
    return kDataError;
  } catch (const std::invalid_argument& e) {
    err << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kDataError;
  }
  return kOk;
}

}  // namespace dunet::cli
