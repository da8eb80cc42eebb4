// crl_lab: generate data, train, attack, sweep and report from one JSON config.
//
// Exit codes: 0 success, 2 config or usage error, 1 runtime failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "crl/experiment.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kOk = 0;
constexpr int kRuntime = 1;
constexpr int kUsage = 2;

bool is_usage_error(crl::ErrorKind kind) {
  return kind == crl::ErrorKind::Config || kind == crl::ErrorKind::Parse || kind == crl::ErrorKind::InvalidParameter;
}

// --out wins over the config's output_dir; one of them must be set.
fs::path output_dir(const std::string& flag, const crl::ExperimentConfig& cfg) {
  if (!flag.empty()) return flag;
  crl::require(!cfg.output_dir.empty(), crl::ErrorKind::Config, "output_dir: missing (pass --out or set it)");
  return cfg.output_dir;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Center-based relaxed learning lab: train defended MLPs and measure membership leakage"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(CRL_VERSION));

  crl::BlobSpec blobs;
  std::string data_out;
  auto* gen = app.add_subcommand("gen-data", "Write a noisy Gaussian-blob dataset as CSV");
  gen->add_option("--seed", blobs.seed, "Generator seed")->capture_default_str();
  gen->add_option("--n", blobs.n, "Number of samples")->capture_default_str()->check(CLI::PositiveNumber);
  gen->add_option("--d", blobs.dim, "Feature dimension")->capture_default_str()->check(CLI::PositiveNumber);
  gen->add_option("--classes", blobs.classes, "Number of classes")->capture_default_str()->check(CLI::Range(2, 1 << 20));
  gen->add_option("--sep", blobs.separation, "Distance scale between class means")->capture_default_str()
      ->check(CLI::PositiveNumber);
  gen->add_option("--noise", blobs.label_noise, "Fraction of relabelled samples")->capture_default_str()
      ->check(CLI::Range(0.0, 0.999999));
  gen->add_option("--out", data_out, "Output CSV path")->required();

  std::string config_path, out_flag, target_dir, report_dir;
  auto* train = app.add_subcommand("train", "Train the configured model and defense on the target split");
  train->add_option("--config", config_path, "Experiment config (JSON)")->required();
  train->add_option("--out", out_flag, "Output directory (default: output_dir from the config)");

  auto* attack = app.add_subcommand("attack", "Attack a trained target with the configured attacks");
  attack->add_option("--target", target_dir, "Directory written by 'train'")->required();
  attack->add_option("--config", config_path, "Experiment config naming the target's defense")->required();
  attack->add_option("--out", out_flag, "Output directory (default: output_dir from the config)");

  auto* sweep = app.add_subcommand("sweep", "Train and attack every point of sweep.grid");
  sweep->add_option("--config", config_path, "Experiment config with a sweep.grid section")->required();
  sweep->add_option("--out", out_flag, "Output directory (default: output_dir from the config)");

  auto* report = app.add_subcommand("report", "Summarize a train, attack or sweep output directory");
  report->add_option("--run", report_dir, "Output directory of a previous command")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*gen) {
      crl::run_gen_data(blobs, data_out);
      std::cout << "wrote " << blobs.n << " samples to " << data_out << "\n";
    } else if (*train) {
      const auto cfg = crl::load_config(config_path);
      const fs::path out = output_dir(out_flag, cfg);
      const auto r = crl::run_train(cfg, out);
      std::cout << "train_acc " << r.train_acc << " test_acc " << r.test_acc << " checkpoint " << r.checkpoint_hash
                << " -> " << out.string() << "\n";
    } else if (*attack) {
      const auto cfg = crl::load_config(config_path);
      const fs::path out = output_dir(out_flag, cfg);
      const auto r = crl::run_attack(cfg, target_dir, out);
      for (const auto& rep : r.suite.reports) std::cout << rep.name << " auc " << rep.auc << "\n";
      std::cout << "-> " << out.string() << "\n";
    } else if (*sweep) {
      crl::require(fs::exists(config_path), crl::ErrorKind::Config, "config file not found: " + config_path);
      crl::json doc;
      try {
        doc = crl::json::parse(crl::detail::read_file(config_path));
      } catch (const crl::json::parse_error& e) {
        crl::fail(crl::ErrorKind::Config, config_path + ": " + e.what());
      }
      const fs::path base = fs::path(config_path).parent_path().empty() ? fs::path(".") : fs::path(config_path).parent_path();
      const auto cfg = crl::parse_config(doc, base);
      const fs::path out = output_dir(out_flag, cfg);
      const std::size_t n = crl::run_sweep(doc, base, out);
      std::cout << n << " grid points -> " << (out / "frontier.csv").string() << "\n";
    } else if (*report) {
      std::cout << crl::render_report(report_dir);
    }
  } catch (const crl::Error& e) {
    std::cerr << "crl_lab: " << e.what() << "\n";
    return is_usage_error(e.kind()) ? kUsage : kRuntime;
  } catch (const std::exception& e) {
    std::cerr << "crl_lab: " << e.what() << "\n";
    return kRuntime;
  }
  return kOk;
}
