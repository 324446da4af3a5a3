#pragma once

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "canet/bench.hpp"
#include "canet/checkpoint.hpp"
#include "canet/data.hpp"
#include "canet/hash.hpp"
#include "canet/models.hpp"
#include "canet/profiler.hpp"
#include "canet/trainer.hpp"

namespace canet {

inline constexpr const char* kCliVersion = "canet 0.1.0";

namespace cli_detail {

inline std::string iso8601_now() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline nlohmann::json load_config_file(const std::string& path) {
  if (path.empty()) return nlohmann::json::object();
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("malformed config file " + path + ": " + e.what());
  }
  if (!j.is_object()) throw std::runtime_error("config file " + path + " must hold an object");
  return j;
}

// Precedence: explicit flags beat config-file values beat built-in defaults.
template <typename T>
void cfg_override(const CLI::App& app, const nlohmann::json& cfg, const std::string& key,
                  T& value) {
  if (app.count("--" + key) == 0 && cfg.contains(key)) value = cfg.at(key).get<T>();
}

// Output contract shared by every command: each declared file must exist,
// be non-empty, and parse when it claims to be JSON; the manifest referencing
// them lands at the output root. Returns false (after explaining) otherwise.
inline bool finalize_run(const std::string& out_dir, const std::string& command,
                         const nlohmann::json& resolved_config,
                         const std::vector<std::string>& input_paths,
                         const std::vector<std::string>& output_paths) {
  for (const auto& path : output_paths) {
    std::error_code ec;
    const auto size = std::filesystem::file_size(path, ec);
    if (ec || size == 0) {
      std::cerr << "error: declared output " << path << " was not written\n";
      return false;
    }
    if (path.size() > 5 && path.substr(path.size() - 5) == ".json") {
      std::ifstream in(path);
      nlohmann::json parsed;
      try {
        in >> parsed;
      } catch (const nlohmann::json::exception& e) {
        std::cerr << "error: output " << path << " is not valid JSON: " << e.what() << "\n";
        return false;
      }
    }
  }
  nlohmann::json inputs = nlohmann::json::object();
  for (const auto& path : input_paths) {
    inputs[path] = hex64(fnv1a64_file(path));
  }
  nlohmann::json manifest{{"command", command},      {"config", resolved_config},
                          {"inputs", inputs},        {"outputs", output_paths},
                          {"version", kCliVersion},  {"timestamp", iso8601_now()}};
  std::ofstream out(out_dir + "/manifest.json", std::ios::trunc);
  if (!out) {
    std::cerr << "error: cannot write " << out_dir << "/manifest.json\n";
    return false;
  }
  out << manifest.dump(2) << "\n";
  return out.good();
}

inline int usage_error(const std::string& message) {
  std::cerr << "error: " << message << "\n";
  return 2;
}

inline bool known_arch(const std::string& arch) {
  return arch == "resnet18" || arch == "mobilenetv2" || arch == "tiny";
}

inline AttentionSpec make_spec(const std::string& attention, bool per_group) {
  AttentionSpec spec;
  spec.kind = parse_attention_kind(attention);
  spec.per_group_filters = per_group;
  spec.validate();
  return spec;
}

inline std::string expected_data_files(const std::string& dir) {
  return "expected data_batch_1.bin .. data_batch_5.bin and test_batch.bin under '" + dir + "'";
}

struct CommonModelOpts {
  std::string arch = "resnet18";
  std::string attention = "none";
  bool per_group = false;
  std::size_t classes = 10;
};

inline void add_model_options(CLI::App& app, CommonModelOpts& opts) {
  app.add_option("--arch", opts.arch, "architecture: resnet18, mobilenetv2, tiny")
      ->capture_default_str();
  app.add_option("--attn", opts.attention, "channel attention: none, se, eca, lca")
      ->capture_default_str();
  app.add_flag("--per-group", opts.per_group,
               "give each channel group its own 1d filter (lca only)");
  app.add_option("--classes", opts.classes, "classifier width")->capture_default_str();
}

inline int check_model_options(const CommonModelOpts& opts) {
  if (!known_arch(opts.arch)) {
    return usage_error("unknown arch '" + opts.arch +
                       "' (valid: resnet18, mobilenetv2, tiny)");
  }
  try {
    parse_attention_kind(opts.attention);
  } catch (const std::invalid_argument& e) {
    return usage_error(e.what());
  }
  return 0;
}

}  // namespace cli_detail

inline int cmd_profile(int argc, char** argv) {
  CLI::App app{"analytic parameter and flop accounting for one configuration"};
  cli_detail::CommonModelOpts model;
  std::string out_dir = "canet_out";
  std::string config_path;
  cli_detail::add_model_options(app, model);
  app.add_option("--out", out_dir, "output directory")->capture_default_str();
  app.add_option("--config", config_path, "JSON config file (flags take precedence)");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  nlohmann::json cfg;
  try {
    cfg = cli_detail::load_config_file(config_path);
  } catch (const std::runtime_error& e) {
    return cli_detail::usage_error(e.what());
  }
  cli_detail::cfg_override(app, cfg, "arch", model.arch);
  cli_detail::cfg_override(app, cfg, "attn", model.attention);
  cli_detail::cfg_override(app, cfg, "per-group", model.per_group);
  cli_detail::cfg_override(app, cfg, "classes", model.classes);
  cli_detail::cfg_override(app, cfg, "out", out_dir);

  if (int rc = cli_detail::check_model_options(model); rc != 0) return rc;

  const auto spec = cli_detail::make_spec(model.attention, model.per_group);
  auto g = build_model<float>(model.arch, spec, model.classes);
  auto report = profile_graph(g);
  AttentionSpec none;
  auto baseline = profile_graph(build_model<float>(model.arch, none, model.classes));
  auto diff = diff_reports(baseline, report);

  std::filesystem::create_directories(out_dir);
  const std::string json_path = out_dir + "/profile.json";
  const std::string csv_path = out_dir + "/profile.csv";
  {
    std::ofstream out(json_path, std::ios::trunc);
    if (!out) return cli_detail::usage_error("cannot write " + json_path);
    out << profile_to_json(report).dump(2) << "\n";
  }
  {
    std::ofstream out(csv_path, std::ios::trunc);
    if (!out) return cli_detail::usage_error("cannot write " + csv_path);
    out << profile_to_csv(report);
  }

  std::printf("%s/%s  params %.2fM (%+lld)  flops %.2fM (%+lld)\n", model.arch.c_str(),
              model.attention.c_str(), round_millions(report.total_params),
              static_cast<long long>(diff.param_delta), round_millions(report.total_flops),
              static_cast<long long>(diff.flops_delta));

  nlohmann::json resolved{{"arch", model.arch},
                          {"attn", model.attention},
                          {"per-group", model.per_group},
                          {"classes", model.classes},
                          {"out", out_dir}};
  std::vector<std::string> inputs;
  if (!config_path.empty()) inputs.push_back(config_path);
  return cli_detail::finalize_run(out_dir, "profile", resolved, inputs,
                                  {json_path, csv_path})
             ? 0
             : 1;
}

inline int cmd_train(int argc, char** argv) {
  CLI::App app{"full training recipe, or a desk-scale subset of it"};
  cli_detail::CommonModelOpts model;
  std::string data_dir;
  std::string out_dir = "canet_out";
  std::string config_path;
  TrainConfig train_cfg;  // paper defaults
  cli_detail::add_model_options(app, model);
  app.add_option("--data-dir", data_dir,
                 "directory with the binary batch files (falls back to $CANET_DATA_DIR)");
  app.add_option("--out", out_dir, "output directory")->capture_default_str();
  app.add_option("--config", config_path, "JSON config file (flags take precedence)");
  app.add_option("--epochs", train_cfg.epochs, "training epochs")->capture_default_str();
  app.add_option("--lr", train_cfg.base_lr, "initial learning rate, cosine-annealed per epoch")
      ->capture_default_str();
  app.add_option("--momentum", train_cfg.momentum, "classical momentum coefficient")
      ->capture_default_str();
  app.add_option("--weight-decay", train_cfg.weight_decay,
                 "l2 coefficient (conv/linear/attention weights only)")
      ->capture_default_str();
  app.add_option("--batch", train_cfg.batch_size, "minibatch size")->capture_default_str();
  app.add_option("--seed", train_cfg.seed, "rng seed for init, shuffling, augmentation")
      ->capture_default_str();
  app.add_option("--subset", train_cfg.subset_size,
                 "train on a seeded subset of this many images (0 = full split)")
      ->capture_default_str();
  app.add_option("--eval-subset", train_cfg.eval_subset_size,
                 "evaluate on a seeded subset of this many images (0 = full split)")
      ->capture_default_str();
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  nlohmann::json cfg;
  try {
    cfg = cli_detail::load_config_file(config_path);
  } catch (const std::runtime_error& e) {
    return cli_detail::usage_error(e.what());
  }
  cli_detail::cfg_override(app, cfg, "arch", model.arch);
  cli_detail::cfg_override(app, cfg, "attn", model.attention);
  cli_detail::cfg_override(app, cfg, "per-group", model.per_group);
  cli_detail::cfg_override(app, cfg, "classes", model.classes);
  cli_detail::cfg_override(app, cfg, "data-dir", data_dir);
  cli_detail::cfg_override(app, cfg, "out", out_dir);
  cli_detail::cfg_override(app, cfg, "epochs", train_cfg.epochs);
  cli_detail::cfg_override(app, cfg, "lr", train_cfg.base_lr);
  cli_detail::cfg_override(app, cfg, "momentum", train_cfg.momentum);
  cli_detail::cfg_override(app, cfg, "weight-decay", train_cfg.weight_decay);
  cli_detail::cfg_override(app, cfg, "batch", train_cfg.batch_size);
  cli_detail::cfg_override(app, cfg, "seed", train_cfg.seed);
  cli_detail::cfg_override(app, cfg, "subset", train_cfg.subset_size);
  cli_detail::cfg_override(app, cfg, "eval-subset", train_cfg.eval_subset_size);

  if (int rc = cli_detail::check_model_options(model); rc != 0) return rc;
  try {
    train_cfg.validate();
  } catch (const std::invalid_argument& e) {
    return cli_detail::usage_error(e.what());
  }
  if (data_dir.empty()) {
    const char* env = std::getenv("CANET_DATA_DIR");
    if (env != nullptr) data_dir = env;
  }
  if (data_dir.empty()) {
    return cli_detail::usage_error(
        "no data directory: pass --data-dir or set CANET_DATA_DIR; " +
        cli_detail::expected_data_files("<data-dir>"));
  }

  Cifar10Set train_set, test_set;
  try {
    train_set = load_cifar10_bin(data_dir, Split::Train);
    test_set = load_cifar10_bin(data_dir, Split::Test);
  } catch (const std::runtime_error& e) {
    std::cerr << "error: " << e.what() << "\n       "
              << cli_detail::expected_data_files(data_dir) << "\n";
    return 1;
  }

  NormStats stats;
  try {
    stats = compute_norm_stats(train_set);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  std::filesystem::create_directories(out_dir);
  const std::string stats_path = out_dir + "/norm_stats.json";
  const std::string ckpt_path = out_dir + "/model.ckpt";
  const std::string log_csv = out_dir + "/train_log.csv";
  const std::string log_json = out_dir + "/train_log.json";
  save_norm_stats(stats_path, stats);

  const auto spec = cli_detail::make_spec(model.attention, model.per_group);
  auto g = build_model<float>(model.arch, spec, model.classes);
  init_weights(g, train_cfg.seed);

  auto log = train(g, train_set, test_set, train_cfg, stats, ckpt_path);
  save_text(log_csv, train_log_to_csv(log));
  nlohmann::json log_wrapper{{"arch", model.arch},
                             {"attention", model.attention},
                             {"log", train_log_to_json(log)}};
  save_text(log_json, log_wrapper.dump(2) + "\n");

  if (!log.rows.empty()) {
    const auto& last = log.rows.back();
    std::printf("%s/%s  epoch %zu  train_loss %.4f  test_acc %.4f\n", model.arch.c_str(),
                model.attention.c_str(), last.epoch, last.train_loss, last.test_acc);
  }

  nlohmann::json resolved{{"arch", model.arch},
                          {"attn", model.attention},
                          {"per-group", model.per_group},
                          {"classes", model.classes},
                          {"data-dir", data_dir},
                          {"out", out_dir},
                          {"epochs", train_cfg.epochs},
                          {"lr", train_cfg.base_lr},
                          {"momentum", train_cfg.momentum},
                          {"weight-decay", train_cfg.weight_decay},
                          {"batch", train_cfg.batch_size},
                          {"seed", train_cfg.seed},
                          {"subset", train_cfg.subset_size},
                          {"eval-subset", train_cfg.eval_subset_size}};
  std::vector<std::string> inputs;
  if (!config_path.empty()) inputs.push_back(config_path);
  for (const auto& name : cifar10_filenames(Split::Train)) {
    inputs.push_back(data_dir + "/" + name);
  }
  inputs.push_back(data_dir + "/" + cifar10_filenames(Split::Test)[0]);

  const bool finalized = cli_detail::finalize_run(
      out_dir, "train", resolved, inputs, {stats_path, ckpt_path, log_csv, log_json});
  if (log.diverged) {
    std::cerr << "error: training diverged (" << log.divergence_note
              << "); last good checkpoint kept at " << ckpt_path << "\n";
    return 1;
  }
  return finalized ? 0 : 1;
}

inline int cmd_bench(int argc, char** argv) {
  CLI::App app{"forward-latency protocol: untimed warmup, then timed iterations"};
  cli_detail::CommonModelOpts model;
  std::string checkpoint;
  std::string out_dir = "canet_out";
  std::string config_path;
  std::string env_note;
  std::size_t batch = 1, iters = 100, warmup = 10;
  std::uint64_t seed = 42;
  double throughput_budget_ms = 0.0;
  cli_detail::add_model_options(app, model);
  app.add_option("--checkpoint", checkpoint,
                 "benchmark this trained model instead of a fresh init");
  app.add_option("--out", out_dir, "output directory")->capture_default_str();
  app.add_option("--config", config_path, "JSON config file (flags take precedence)");
  app.add_option("--batch", batch, "inference batch size")->capture_default_str();
  app.add_option("--iters", iters, "timed iterations")->capture_default_str();
  app.add_option("--warmup", warmup, "untimed warmup iterations")->capture_default_str();
  app.add_option("--seed", seed, "init seed when no checkpoint is given")
      ->capture_default_str();
  app.add_option("--env-note", env_note, "host description recorded in the report");
  app.add_option("--throughput-budget-ms", throughput_budget_ms,
                 "also measure steady-state throughput for this long (0 = skip)")
      ->capture_default_str();
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  nlohmann::json cfg;
  try {
    cfg = cli_detail::load_config_file(config_path);
  } catch (const std::runtime_error& e) {
    return cli_detail::usage_error(e.what());
  }
  cli_detail::cfg_override(app, cfg, "arch", model.arch);
  cli_detail::cfg_override(app, cfg, "attn", model.attention);
  cli_detail::cfg_override(app, cfg, "per-group", model.per_group);
  cli_detail::cfg_override(app, cfg, "classes", model.classes);
  cli_detail::cfg_override(app, cfg, "checkpoint", checkpoint);
  cli_detail::cfg_override(app, cfg, "out", out_dir);
  cli_detail::cfg_override(app, cfg, "batch", batch);
  cli_detail::cfg_override(app, cfg, "iters", iters);
  cli_detail::cfg_override(app, cfg, "warmup", warmup);
  cli_detail::cfg_override(app, cfg, "seed", seed);
  cli_detail::cfg_override(app, cfg, "env-note", env_note);
  cli_detail::cfg_override(app, cfg, "throughput-budget-ms", throughput_budget_ms);

  if (iters < 2) {
    return cli_detail::usage_error("--iters must be at least 2 (standard deviation needs it)");
  }
  if (batch < 1) return cli_detail::usage_error("--batch must be at least 1");

  ModelGraph<float> g;
  if (!checkpoint.empty()) {
    try {
      g = load_checkpoint<float>(checkpoint);
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      return 1;
    }
  } else {
    if (int rc = cli_detail::check_model_options(model); rc != 0) return rc;
    g = build_model<float>(model.arch, cli_detail::make_spec(model.attention, model.per_group),
                           model.classes);
    init_weights(g, seed);
  }

  auto report = measure_latency(g, batch, warmup, iters, steady_clock_ms, env_note);
  nlohmann::json report_json = bench_report_to_json(report);
  if (throughput_budget_ms > 0.0) {
    auto thr = measure_throughput(g, batch, throughput_budget_ms);
    report_json["steady_state_throughput"] = {{"batches", thr.batches},
                                              {"images", thr.images},
                                              {"elapsed_ms", thr.elapsed_ms},
                                              {"ips", thr.ips}};
  }

  std::filesystem::create_directories(out_dir);
  const std::string json_path = out_dir + "/bench.json";
  save_text(json_path, report_json.dump(2) + "\n");
  std::printf("%s/%s  batch %zu  mean %.4f ms  p95 %.4f ms  %.1f ips\n", report.arch.c_str(),
              report.attention.c_str(), batch, report.latency_ms.mean, report.latency_ms.p95,
              report.throughput_ips);

  nlohmann::json resolved{{"arch", report.arch},
                          {"attn", report.attention},
                          {"checkpoint", checkpoint},
                          {"out", out_dir},
                          {"batch", batch},
                          {"iters", iters},
                          {"warmup", warmup},
                          {"seed", seed},
                          {"env-note", env_note},
                          {"throughput-budget-ms", throughput_budget_ms}};
  std::vector<std::string> inputs;
  if (!config_path.empty()) inputs.push_back(config_path);
  if (!checkpoint.empty()) inputs.push_back(checkpoint);
  return cli_detail::finalize_run(out_dir, "bench", resolved, inputs, {json_path}) ? 0 : 1;
}

inline int cmd_report(int argc, char** argv) {
  CLI::App app{"merge profile/train/bench outputs into the results table and figure data"};
  std::vector<std::string> input_paths;
  std::string out_dir = "canet_out";
  std::string config_path;
  app.add_option("inputs", input_paths, "profile.json / train_log.json / bench.json files")
      ->required();
  app.add_option("--out", out_dir, "output directory")->capture_default_str();
  app.add_option("--config", config_path, "JSON config file (flags take precedence)");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  nlohmann::json cfg;
  try {
    cfg = cli_detail::load_config_file(config_path);
  } catch (const std::runtime_error& e) {
    return cli_detail::usage_error(e.what());
  }
  cli_detail::cfg_override(app, cfg, "out", out_dir);

  ResultsBundle bundle;
  for (const auto& path : input_paths) {
    std::ifstream in(path);
    if (!in) {
      std::cerr << "error: cannot open input " << path << "\n";
      return 1;
    }
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      std::cerr << "error: " << path << " is not valid JSON: " << e.what() << "\n";
      return 1;
    }
    try {
      if (j.contains("convention") && j.contains("per_node")) {
        merge_profile(bundle, profile_from_json(j), path);
      } else if (j.contains("latency_ms")) {
        merge_bench(bundle, bench_report_from_json(j), path);
      } else if (j.contains("log") && j.contains("arch")) {
        const auto& log = j.at("log");
        const bool diverged = log.at("diverged").get<bool>();
        const auto& rows = log.at("rows");
        if (diverged || rows.empty()) {
          std::cerr << "warning: " << path
                    << " holds a diverged or empty training log; accuracy not merged\n";
        } else {
          merge_accuracy(bundle, j.at("arch").get<std::string>(),
                         j.at("attention").get<std::string>(),
                         rows.back().at("test_acc").get<double>(), path);
        }
      } else if (j.contains("rows")) {
        auto sub = results_bundle_from_json(j);
        for (const auto& row : sub.rows) {
          auto& target = bundle.row(row.arch, row.attention);
          if (row.accuracy) {
            detail::merge_metric(target, "accuracy", target.accuracy, *row.accuracy, path);
          }
          if (row.params) {
            detail::merge_metric(target, "params", target.params, *row.params, path);
          }
          if (row.flops) {
            detail::merge_metric(target, "flops", target.flops, *row.flops, path);
          }
          if (row.latency_ms) {
            detail::merge_metric(target, "latency_ms", target.latency_ms, *row.latency_ms,
                                 path);
          }
          if (row.throughput_ips) {
            detail::merge_metric(target, "throughput_ips", target.throughput_ips,
                                 *row.throughput_ips, path);
          }
        }
      } else {
        std::cerr << "error: " << path
                  << " is not a recognized profile, bench, train-log, or results file\n";
        return 1;
      }
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      return 1;
    }
  }

  std::filesystem::create_directories(out_dir);
  EmitOutputs outputs;
  try {
    outputs = emit_results(bundle, out_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  for (const auto& warning : outputs.warnings) {
    std::cerr << "warning: " << warning << "\n";
  }
  std::printf("merged %zu configurations into %s\n", bundle.rows.size(), out_dir.c_str());

  nlohmann::json resolved{{"inputs", input_paths}, {"out", out_dir}};
  return cli_detail::finalize_run(out_dir, "report", resolved, input_paths, outputs.files)
             ? 0
             : 1;
}

inline int cli_main(int argc, char** argv) {
  if (argc < 2) {
    std::cerr << "usage: canet <profile|train|bench|report> [options]\n"
              << "       canet <command> --help for the command's defaults\n";
    return 2;
  }
  const std::string command = argv[1];
  if (command == "profile") return cmd_profile(argc - 1, argv + 1);
  if (command == "train") return cmd_train(argc - 1, argv + 1);
  if (command == "bench") return cmd_bench(argc - 1, argv + 1);
  if (command == "report") return cmd_report(argc - 1, argv + 1);
  if (command == "--help" || command == "-h") {
    std::printf(
        "canet: channel-attention study pipeline\n"
        "  profile  parameter/flop accounting and deltas vs the no-attention baseline\n"
        "  train    full recipe (100 epochs, lr 0.1, momentum 0.9, wd 0.0005, batch 128,\n"
        "           seed 42) or desk-scale subsets via --subset/--epochs\n"
        "  bench    latency protocol (batch 1, 10 warmup, 100 timed iterations)\n"
        "  report   merge outputs into results table + figure data\n");
    return 0;
  }
  if (command == "--version") {
    std::printf("%s\n", kCliVersion);
    return 0;
  }
  std::cerr << "error: unknown command '" << command
            << "' (valid: profile, train, bench, report)\n";
  return 2;
}

}  // namespace canet
