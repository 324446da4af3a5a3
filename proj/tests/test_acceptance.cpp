// Acceptance gate. Each numbered criterion prints exactly one [PASS] or
// [FAIL] line; indented lines underneath are supporting detail. The process
// exit code is the number of failed criteria.
//
// The training smoke criterion uses real CIFAR-10 when CANET_CIFAR10_DIR
// points at the binary batches, and the bundled synthetic generator
// otherwise; its line says which source was used. Run a subset of criteria
// with `test_acceptance --only 1,2,3`.

#include <fcntl.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "canet/attention.hpp"
#include "canet/bench.hpp"
#include "canet/cli.hpp"
#include "canet/data.hpp"
#include "canet/models.hpp"
#include "canet/ops.hpp"
#include "canet/profiler.hpp"
#include "canet/trainer.hpp"

namespace fs = std::filesystem;
using canet::AttentionCache;
using canet::AttentionKind;
using canet::AttentionSpec;
using canet::ConvSpec;
using canet::Tensor;

namespace {

struct Failure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require(bool ok, const std::string& message) {
  if (!ok) throw Failure(message);
}

// ---------------------------------------------------------------- utilities

Tensor<double> random_tensor(std::vector<std::size_t> shape, std::mt19937& rng, double lo = -1.0,
                             double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

double rel_error(double a, double b) {
  return std::fabs(a - b) / (std::max(std::fabs(a), std::fabs(b)) + 1e-6);
}

double check_grad(const std::function<double()>& loss, Tensor<double>& x,
                  const Tensor<double>& analytic, double eps = 1e-5) {
  require(x.same_shape(analytic), "gradient check: analytic grad shape mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + eps;
    const double up = loss();
    x[i] = keep - eps;
    const double down = loss();
    x[i] = keep;
    worst = std::max(worst, rel_error((up - down) / (2.0 * eps), analytic[i]));
  }
  return worst;
}

double weighted_sum(const Tensor<double>& y, const Tensor<double>& w) {
  double acc = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) acc += y[i] * w[i];
  return acc;
}

canet::ProfileReport profile_for(const std::string& arch, const std::string& attention) {
  AttentionSpec spec;
  spec.kind = canet::parse_attention_kind(attention);
  return canet::profile_graph(canet::build_model<float>(arch, spec, 10));
}

const char* kArchs[] = {"resnet18", "mobilenetv2"};
const char* kAttns[] = {"none", "se", "eca", "lca"};

// Runs the command-line entry point with stdout/stderr sent to /dev/null so
// per-command output does not interleave with the criterion lines.
int run_cli_quiet(std::vector<std::string> args) {
  args.insert(args.begin(), "canet");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  std::fflush(stdout);
  std::fflush(stderr);
  const int saved_out = dup(STDOUT_FILENO);
  const int saved_err = dup(STDERR_FILENO);
  const int devnull = open("/dev/null", O_WRONLY);
  dup2(devnull, STDOUT_FILENO);
  dup2(devnull, STDERR_FILENO);
  const int rc = canet::cli_main(static_cast<int>(argv.size()), argv.data());
  std::fflush(stdout);
  std::fflush(stderr);
  dup2(saved_out, STDOUT_FILENO);
  dup2(saved_err, STDERR_FILENO);
  close(devnull);
  close(saved_out);
  close(saved_err);
  return rc;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string drop_timestamp_line(const std::string& text) {
  std::istringstream in(text);
  std::string out, line;
  while (std::getline(in, line)) {
    if (line.find("\"timestamp\"") == std::string::npos) out += line + "\n";
  }
  return out;
}

// ---------------------------------------------------------------- criteria

// 1. Integer parameter deltas added by each attention variant.
std::string criterion_param_deltas() {
  struct Case {
    const char* arch;
    const char* attn;
    long long expect;
  };
  const Case cases[] = {
      {"resnet18", "se", 87040},   {"resnet18", "eca", 36},    {"resnet18", "lca", 36},
      {"mobilenetv2", "se", 28464}, {"mobilenetv2", "eca", 59}, {"mobilenetv2", "lca", 59},
  };
  std::string problems;
  for (const auto& c : cases) {
    const auto diff = canet::diff_reports(profile_for(c.arch, "none"), profile_for(c.arch, c.attn));
    if (diff.param_delta != c.expect) {
      problems += std::string(problems.empty() ? "" : "; ") + c.arch + "/" + c.attn +
                  " adds +" + std::to_string(diff.param_delta) + ", required +" +
                  std::to_string(c.expect);
    }
  }
  require(problems.empty(), problems + " (integer identity, zero tolerance)");
  return "";
}

// 2. Parameter totals match the reference totals at 0.01M rounding.
std::string criterion_param_totals() {
  const std::map<std::pair<std::string, std::string>, double> expect = {
      {{"resnet18", "none"}, 11.17}, {{"resnet18", "se"}, 11.26},
      {{"resnet18", "eca"}, 11.17},  {{"resnet18", "lca"}, 11.17},
      {{"mobilenetv2", "none"}, 2.24}, {{"mobilenetv2", "se"}, 2.27},
      {{"mobilenetv2", "eca"}, 2.24},  {{"mobilenetv2", "lca"}, 2.24},
  };
  std::string problems;
  for (const auto& [key, want] : expect) {
    const double got = canet::round_millions(profile_for(key.first, key.second).total_params);
    if (std::fabs(got - want) > 1e-9) {
      char buf[96];
      std::snprintf(buf, sizeof buf, "%s%s/%s rounds to %.2fM, required %.2fM",
                    problems.empty() ? "" : "; ", key.first.c_str(), key.second.c_str(), got,
                    want);
      problems += buf;
    }
  }
  require(problems.empty(), problems);
  return "";
}

// 3. FLOPs within 1% of the reference totals; attention overhead below 1%.
std::string criterion_flops() {
  const std::map<std::pair<std::string, std::string>, double> expect = {
      {{"resnet18", "none"}, 557.78e6}, {{"resnet18", "se"}, 558.36e6},
      {{"resnet18", "eca"}, 558.28e6},  {{"resnet18", "lca"}, 558.28e6},
      {{"mobilenetv2", "none"}, 92.80e6}, {{"mobilenetv2", "se"}, 93.10e6},
      {{"mobilenetv2", "eca"}, 93.08e6},  {{"mobilenetv2", "lca"}, 93.08e6},
  };
  std::string problems;
  double worst_pct = 0.0;
  for (const auto& [key, want] : expect) {
    const double got = static_cast<double>(profile_for(key.first, key.second).total_flops);
    const double pct = std::fabs(got - want) / want * 100.0;
    worst_pct = std::max(worst_pct, pct);
    if (pct > 1.0) {
      char buf[128];
      std::snprintf(buf, sizeof buf, "%s%s/%s measures %.0f flops, %.2f%% from %.0f",
                    problems.empty() ? "" : "; ", key.first.c_str(), key.second.c_str(), got,
                    pct, want);
      problems += buf;
    }
  }
  for (const char* arch : kArchs) {
    const double base = static_cast<double>(profile_for(arch, "none").total_flops);
    for (const char* attn : {"se", "eca", "lca"}) {
      const double overhead =
          (static_cast<double>(profile_for(arch, attn).total_flops) - base) / base;
      if (!(overhead < 0.01)) {
        problems += std::string(problems.empty() ? "" : "; ") + arch + "/" + attn +
                    " overhead not below 1%";
      }
    }
  }
  require(problems.empty(), problems);
  char note[48];
  std::snprintf(note, sizeof note, "max table deviation %.3f%%", worst_pct);
  return note;
}

// 4. Central finite differences agree with every analytic backward.
std::string criterion_gradients() {
  const auto started = std::chrono::steady_clock::now();
  constexpr double kOpTol = 1e-4;
  constexpr double kGraphTol = 1e-3;
  double worst_op = 0.0;

  auto bump = [&](double err, const char* what) {
    require(err < kOpTol, std::string(what) + " max relative error " + std::to_string(err));
    worst_op = std::max(worst_op, err);
  };

  std::mt19937 rng(20240817);

  {  // conv2d: standard, strided, depthwise, grouped, 1x1
    const std::vector<std::size_t> xshapes[] = {
        {2, 2, 5, 5}, {1, 2, 6, 6}, {2, 4, 4, 4}, {1, 4, 5, 5}, {2, 3, 4, 4}};
    const ConvSpec specs[] = {ConvSpec{2, 3, 3, 3, 1, 1, 1, true},
                              ConvSpec{2, 4, 3, 3, 2, 1, 1, false},
                              ConvSpec{4, 4, 3, 3, 1, 1, 4, true},
                              ConvSpec{4, 6, 3, 3, 1, 0, 2, false},
                              ConvSpec{3, 5, 1, 1, 1, 0, 1, false}};
    for (int i = 0; i < 5; ++i) {
      for (int trial = 0; trial < 5; ++trial) {
        const auto& spec = specs[i];
        auto x = random_tensor(xshapes[i], rng);
        auto w = random_tensor(
            {spec.out_channels, spec.in_channels / spec.groups, spec.kernel_h, spec.kernel_w},
            rng);
        Tensor<double> b;
        if (spec.has_bias) b = random_tensor({spec.out_channels}, rng);
        auto probe = random_tensor({xshapes[i][0], spec.out_channels,
                                    spec.out_h(xshapes[i][2]), spec.out_w(xshapes[i][3])},
                                   rng);
        auto loss = [&] {
          return weighted_sum(
              canet::conv2d_forward<double>(x, w, spec.has_bias ? &b : nullptr, spec), probe);
        };
        auto g = canet::conv2d_backward<double>(x, w, spec, probe);
        bump(check_grad(loss, x, g.input), "conv2d input");
        bump(check_grad(loss, w, g.weights), "conv2d weights");
        if (spec.has_bias) bump(check_grad(loss, b, *g.bias), "conv2d bias");
      }
    }
  }

  for (int trial = 0; trial < 20; ++trial) {  // batchnorm, training statistics
    auto x = random_tensor({3, 2, 3, 3}, rng, -2.0, 2.0);
    auto gamma = random_tensor({2}, rng, 0.5, 1.5);
    auto beta = random_tensor({2}, rng);
    auto probe = random_tensor({3, 2, 3, 3}, rng);
    auto loss = [&] {
      Tensor<double> rm({2});
      auto rv = Tensor<double>::ones({2});
      return weighted_sum(
          canet::batchnorm_forward<double>(x, gamma, beta, rm, rv, true, 0.1, 1e-5), probe);
    };
    Tensor<double> rm({2});
    auto rv = Tensor<double>::ones({2});
    canet::BatchNormCache<double> cache;
    canet::batchnorm_forward<double>(x, gamma, beta, rm, rv, true, 0.1, 1e-5, &cache);
    auto g = canet::batchnorm_backward<double>(x, gamma, cache, probe);
    bump(check_grad(loss, x, g.input), "batchnorm input");
    bump(check_grad(loss, gamma, g.gamma), "batchnorm gamma");
    bump(check_grad(loss, beta, g.beta), "batchnorm beta");
  }

  for (int trial = 0; trial < 20; ++trial) {  // activations, away from kinks
    Tensor<double> x({16});
    std::uniform_real_distribution<double> dist(-3.0, 9.0);
    for (auto& v : x.values()) {
      do {
        v = dist(rng);
      } while (std::fabs(v) < 0.1 || std::fabs(v - 6.0) < 0.1);
    }
    auto probe = random_tensor({16}, rng);
    auto yr = canet::relu_forward(x);
    auto relu_loss = [&] { return weighted_sum(canet::relu_forward(x), probe); };
    bump(check_grad(relu_loss, x, canet::relu_backward(yr, probe)), "relu");
    auto y6 = canet::relu6_forward(x);
    auto relu6_loss = [&] { return weighted_sum(canet::relu6_forward(x), probe); };
    bump(check_grad(relu6_loss, x, canet::relu6_backward(y6, probe)), "relu6");
    auto ys = canet::sigmoid_forward(x);
    auto sig_loss = [&] { return weighted_sum(canet::sigmoid_forward(x), probe); };
    bump(check_grad(sig_loss, x, canet::sigmoid_backward(ys, probe)), "sigmoid");
  }

  for (int trial = 0; trial < 20; ++trial) {  // global average pool
    auto x = random_tensor({2, 3, 3, 4}, rng);
    auto probe = random_tensor({2, 3}, rng);
    auto loss = [&] { return weighted_sum(canet::global_avg_pool(x), probe); };
    bump(check_grad(loss, x, canet::global_avg_pool_backward(probe, 3, 4)), "gap");
  }

  for (int trial = 0; trial < 20; ++trial) {  // linear
    auto x = random_tensor({3, 5}, rng);
    auto w = random_tensor({4, 5}, rng);
    auto b = random_tensor({4}, rng);
    auto probe = random_tensor({3, 4}, rng);
    auto loss = [&] { return weighted_sum(canet::linear_forward<double>(x, w, &b), probe); };
    auto g = canet::linear_backward<double>(x, w, probe);
    bump(check_grad(loss, x, g.input), "linear input");
    bump(check_grad(loss, w, g.weights), "linear weights");
    bump(check_grad(loss, b, g.bias), "linear bias");
  }

  for (int trial = 0; trial < 20; ++trial) {  // 1d channel conv, shared and per-group
    auto x = random_tensor({2, 8}, rng);
    auto probe = random_tensor({2, 8}, rng);
    for (std::size_t groups : {std::size_t{1}, std::size_t{4}}) {
      auto k = random_tensor({3}, rng);
      auto loss = [&] {
        return weighted_sum(canet::grouped_conv1d<double>(x, k, groups), probe);
      };
      auto g = canet::grouped_conv1d_backward<double>(x, k, groups, probe);
      bump(check_grad(loss, x, g.input), "conv1d input");
      bump(check_grad(loss, k, g.kernel), "conv1d kernel");
    }
    auto kg = random_tensor({4, 3}, rng);
    auto loss = [&] { return weighted_sum(canet::grouped_conv1d<double>(x, kg, 4), probe); };
    auto g = canet::grouped_conv1d_backward<double>(x, kg, 4, probe);
    bump(check_grad(loss, x, g.input), "per-group conv1d input");
    bump(check_grad(loss, kg, g.kernel), "per-group conv1d kernel");
  }

  for (int trial = 0; trial < 20; ++trial) {  // channel scaling
    auto x = random_tensor({2, 3, 2, 2}, rng);
    auto s = random_tensor({2, 3}, rng);
    auto probe = random_tensor({2, 3, 2, 2}, rng);
    auto loss = [&] { return weighted_sum(canet::channel_scale(x, s), probe); };
    auto g = canet::channel_scale_backward(x, s, probe);
    bump(check_grad(loss, x, g.input), "channel scale input");
    bump(check_grad(loss, s, g.scale), "channel scale gate");
  }

  for (int trial = 0; trial < 20; ++trial) {  // each attention mechanism end-to-end
    auto x = random_tensor({2, 8, 3, 3}, rng);
    auto probe = random_tensor({2, 8, 3, 3}, rng);

    auto w1 = random_tensor({2, 8}, rng);
    auto w2 = random_tensor({8, 2}, rng);
    auto se_loss = [&] { return weighted_sum(canet::se_forward<double>(x, w1, w2), probe); };
    AttentionCache<double> se_cache;
    canet::se_forward<double>(x, w1, w2, &se_cache);
    auto gs = canet::se_backward<double>(x, w1, w2, se_cache, probe);
    bump(check_grad(se_loss, x, gs.input), "se input");
    bump(check_grad(se_loss, w1, gs.w1), "se squeeze weights");
    bump(check_grad(se_loss, w2, gs.w2), "se excite weights");

    auto k = random_tensor({3}, rng);
    auto eca_loss = [&] { return weighted_sum(canet::eca_forward<double>(x, k), probe); };
    AttentionCache<double> eca_cache;
    canet::eca_forward<double>(x, k, &eca_cache);
    auto ge = canet::eca_backward<double>(x, k, eca_cache, probe);
    bump(check_grad(eca_loss, x, ge.input), "eca input");
    bump(check_grad(eca_loss, k, ge.kernel), "eca kernel");

    auto lca_loss = [&] { return weighted_sum(canet::lca_forward<double>(x, k, 4), probe); };
    AttentionCache<double> lca_cache;
    canet::lca_forward<double>(x, k, 4, &lca_cache);
    auto gl = canet::lca_backward<double>(x, k, 4, lca_cache, probe);
    bump(check_grad(lca_loss, x, gl.input), "lca input");
    bump(check_grad(lca_loss, k, gl.kernel), "lca kernel");
  }

  // Full reduced graph, every parameter, all four attention kinds.
  for (auto kind :
       {AttentionKind::None, AttentionKind::Se, AttentionKind::Eca, AttentionKind::Lca}) {
    AttentionSpec att;
    att.kind = kind;
    auto g = canet::build_tiny_cifar<double>(att, 4);
    canet::init_weights(g, 7);
    std::mt19937 grng(121);
    auto x = random_tensor({2, 3, 8, 8}, grng, 0.0, 1.0);
    auto probe = random_tensor({2, 4}, grng);
    auto loss = [&] {
      canet::ModelGraph<double> copy = g;
      return weighted_sum(canet::forward(copy, x, true), probe);
    };
    {
      canet::ModelGraph<double> copy = g;
      canet::ForwardCache<double> cache;
      canet::forward(copy, x, true, &cache);
      copy.zero_grads();
      canet::backward(copy, cache, probe);
      for (std::size_t i = 0; i < g.nodes.size(); ++i)
        for (std::size_t p = 0; p < g.nodes[i].params.size(); ++p)
          g.nodes[i].params[p].grad = copy.nodes[i].params[p].grad;
    }
    for (auto& node : g.nodes) {
      for (auto& param : node.params) {
        const double err = check_grad(loss, param.value, param.grad);
        require(err < kGraphTol, "full graph (" + canet::to_string(kind) + ") param " +
                                     param.name + " error " + std::to_string(err));
      }
    }
  }

  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  require(seconds < 120.0, "gradient checks took " + std::to_string(seconds) + "s, budget 120s");
  char note[64];
  std::snprintf(note, sizeof note, "worst op error %.2e, %.1fs", worst_op, seconds);
  return note;
}

// 5. Attention behavioral invariants.
std::string criterion_attention_invariants() {
  std::mt19937 rng(211);

  {  // shape preserved, every gate strictly inside (0,1)
    auto x = random_tensor({3, 16, 5, 5}, rng, -2.0, 2.0);
    auto w1 = random_tensor({1, 16}, rng);
    auto w2 = random_tensor({16, 1}, rng);
    AttentionCache<double> cache;
    auto y = canet::se_forward<double>(x, w1, w2, &cache);
    require(y.same_shape(x), "se changed the output shape");
    for (auto s : cache.s.values()) require(s > 0.0 && s < 1.0, "se gate left (0,1)");

    auto k = random_tensor({3}, rng);
    AttentionCache<double> ecache;
    require(canet::eca_forward<double>(x, k, &ecache).same_shape(x),
            "eca changed the output shape");
    for (auto s : ecache.s.values()) require(s > 0.0 && s < 1.0, "eca gate left (0,1)");

    AttentionCache<double> lcache;
    require(canet::lca_forward<double>(x, k, 4, &lcache).same_shape(x),
            "lca changed the output shape");
    for (auto s : lcache.s.values()) require(s > 0.0 && s < 1.0, "lca gate left (0,1)");
  }

  {  // zero weights gate exactly 0.5
    auto x = random_tensor({2, 8, 3, 3}, rng);
    Tensor<double> w1({1, 8}), w2({8, 1}), k({3});
    auto yse = canet::se_forward<double>(x, w1, w2);
    auto yeca = canet::eca_forward<double>(x, k);
    auto ylca = canet::lca_forward<double>(x, k, 4);
    for (std::size_t i = 0; i < x.size(); ++i) {
      require(yse[i] == 0.5 * x[i], "zero-weight se is not exactly a 0.5 scale");
      require(yeca[i] == 0.5 * x[i], "zero-weight eca is not exactly a 0.5 scale");
      require(ylca[i] == 0.5 * x[i], "zero-weight lca is not exactly a 0.5 scale");
    }
  }

  {  // one-group locality degenerates to the global 1d conv, bit for bit
    auto x = random_tensor({2, 32, 4, 4}, rng);
    auto k = random_tensor({5}, rng);
    auto eca = canet::eca_forward<double>(x, k);
    auto lca = canet::lca_forward<double>(x, k, 1);
    require(eca.same_shape(lca), "single-group lca shape differs from eca");
    for (std::size_t i = 0; i < eca.size(); ++i)
      require(eca[i] == lca[i], "single-group lca is not bit-identical to eca");
  }

  {  // cross-segment locality: perturbing one segment leaves the others' gates alone
    auto x = random_tensor({1, 8, 3, 3}, rng);
    auto k = random_tensor({3}, rng);
    AttentionCache<double> before;
    canet::lca_forward<double>(x, k, 4, &before);
    for (std::size_t i = 0; i < 9; ++i) x.at(0, 0, i / 3, i % 3) += 0.37;
    AttentionCache<double> after;
    canet::lca_forward<double>(x, k, 4, &after);
    for (std::size_t c = 2; c < 8; ++c)
      require(before.s.at(0, c) == after.s.at(0, c), "lca gate leaked across segments");
    require(before.s.at(0, 0) != after.s.at(0, 0) || before.s.at(0, 1) != after.s.at(0, 1),
            "lca gates ignored an in-segment perturbation");
  }
  return "";
}

// 6. Desk-scale training smoke test over all eight configurations.
std::string criterion_training_smoke() {
  std::string source = "real CIFAR-10";
  std::string data_dir;
  if (const char* env = std::getenv("CANET_CIFAR10_DIR")) {
    data_dir = env;
  } else {
    source = "synthetic stand-in";
    const fs::path dir = fs::temp_directory_path() / "canet_acceptance_data";
    if (!fs::exists(dir / "test_batch.bin")) {
      fs::create_directories(dir);
      canet::make_synthetic_cifar10(dir.string(), 500, 200, 11);
    }
    data_dir = dir.string();
  }
  const auto train_set = canet::load_cifar10_bin(data_dir, canet::Split::Train);
  const auto test_set = canet::load_cifar10_bin(data_dir, canet::Split::Test);
  require(train_set.size() >= 2000, "training split holds fewer than 2000 images");
  const auto stats = canet::compute_norm_stats(train_set);

  std::string problems;
  const auto started = std::chrono::steady_clock::now();
  for (const char* arch : kArchs) {
    for (const char* attn : kAttns) {
      AttentionSpec spec;
      spec.kind = canet::parse_attention_kind(attn);
      auto g = canet::build_model<float>(arch, spec, 10);
      canet::init_weights(g, 42);

      canet::TrainConfig cfg;
      cfg.epochs = 5;
      cfg.subset_size = 2000;
      cfg.eval_subset_size = 500;
      const auto log = canet::train(g, train_set, test_set, cfg, stats);

      const std::string name = std::string(arch) + "/" + attn;
      if (log.diverged || log.rows.size() != 5) {
        problems += (problems.empty() ? "" : "; ") + name + " diverged";
        std::printf("       %-18s diverged: %s\n", name.c_str(), log.divergence_note.c_str());
        std::fflush(stdout);
        continue;
      }
      const double acc = log.rows.back().test_acc;
      const bool decreasing = log.rows[0].train_loss > log.rows[1].train_loss &&
                              log.rows[1].train_loss > log.rows[2].train_loss;
      std::printf("       %-18s acc %.3f  loss %.3f > %.3f > %.3f%s\n", name.c_str(), acc,
                  log.rows[0].train_loss, log.rows[1].train_loss, log.rows[2].train_loss,
                  (acc > 0.40 && decreasing) ? "" : "  <-- failed");
      std::fflush(stdout);
      if (acc <= 0.40) {
        problems += (problems.empty() ? "" : "; ") + name + " held-out accuracy " +
                    std::to_string(acc) + " not above 0.40";
      }
      if (!decreasing) {
        problems +=
            (problems.empty() ? "" : "; ") + name + " loss not strictly decreasing over epochs 1-3";
      }
    }
  }
  const double minutes =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count() / 60.0;
  require(problems.empty(), problems);
  char note[96];
  std::snprintf(note, sizeof note, "%s, 8 configs, %.1f min", source.c_str(), minutes);
  return note;
}

// 7. Latency protocol conformance under an injected deterministic clock.
std::string criterion_bench_protocol() {
  std::size_t work_calls = 0;
  std::size_t clock_calls = 0;
  double now = 0.0;
  // Every timed iteration reads the clock twice; the i-th iteration is made
  // to last exactly i+1 ms by advancing time on each second read.
  canet::Clock clock = [&]() {
    ++clock_calls;
    if (clock_calls % 2 == 0) now += static_cast<double>(clock_calls / 2);
    return now;
  };
  auto work = [&] { ++work_calls; };

  const auto report = canet::measure_latency_fn(work, 1, 10, 100, clock);
  require(work_calls == 110, "expected 10 warmup + 100 timed executions, saw " +
                                 std::to_string(work_calls));
  require(clock_calls == 200, "expected 200 clock reads (2 per timed iteration), saw " +
                                  std::to_string(clock_calls));

  // Samples are 1..100 ms, so the statistics have closed forms.
  require(report.latency_ms.mean == 50.5, "mean of 1..100 must be exactly 50.5");
  require(report.latency_ms.min == 1.0, "min must be exactly 1");
  require(report.latency_ms.p50 == 50.0, "nearest-rank p50 of 1..100 must be 50");
  require(report.latency_ms.p95 == 95.0, "nearest-rank p95 of 1..100 must be 95");
  require(report.latency_ms.std == std::sqrt(83325.0 / 99.0),
          "sample standard deviation of 1..100 must be sqrt(83325/99)");
  require(report.throughput_ips == 1000.0 / 50.5, "throughput must be batch/mean");
  return "";
}

// 8. profile + report across all eight configurations, rerun byte-identical.
std::string criterion_pipeline_reproducibility() {
  const fs::path base = fs::temp_directory_path() / "canet_acceptance_c8";

  auto run_pipeline = [&base]() {
    std::vector<std::string> profile_jsons;
    for (const char* arch : kArchs) {
      for (const char* attn : kAttns) {
        const fs::path out = base / (std::string("p_") + arch + "_" + attn);
        require(run_cli_quiet({"profile", "--arch", arch, "--attn", attn, "--out",
                               out.string()}) == 0,
                "profile failed for " + std::string(arch) + "/" + attn);
        profile_jsons.push_back((out / "profile.json").string());
      }
    }
    std::vector<std::string> report_args{"report"};
    report_args.insert(report_args.end(), profile_jsons.begin(), profile_jsons.end());
    report_args.push_back("--out");
    report_args.push_back((base / "rep").string());
    require(run_cli_quiet(report_args) == 0, "report failed over the eight profiles");
  };

  auto snapshot = [&base]() {
    std::map<std::string, std::string> files;
    for (const auto& entry : fs::recursive_directory_iterator(base)) {
      if (!entry.is_regular_file()) continue;
      std::string text = slurp(entry.path());
      if (entry.path().filename() == "manifest.json") text = drop_timestamp_line(text);
      files[entry.path().string()] = std::move(text);
    }
    return files;
  };

  fs::remove_all(base);
  run_pipeline();
  const auto first = snapshot();
  run_pipeline();
  const auto second = snapshot();

  require(first.size() == second.size(), "rerun changed the set of emitted files");
  for (const auto& [path, text] : first) {
    auto it = second.find(path);
    require(it != second.end(), "rerun did not rewrite " + path);
    require(it->second == text, "rerun changed the bytes of " + path);
  }

  const std::string results_csv = slurp(base / "rep" / "results.csv");
  require(results_csv.rfind("arch,attention,accuracy,params,flops,latency_ms,throughput_ips\n",
                            0) == 0,
          "results.csv header is wrong");
  std::size_t lines = 0;
  for (char ch : results_csv) lines += ch == '\n';
  require(lines == 9, "results.csv must hold a header plus eight configuration rows, has " +
                          std::to_string(lines) + " lines");
  for (const char* fig : {"fig_latency.csv", "fig_acc_latency.csv", "fig_acc_params.csv",
                          "fig_acc_flops.csv", "fig_acc_throughput.csv"}) {
    require(fs::exists(base / "rep" / fig), std::string(fig) + " was not emitted");
  }
  return "16 profile files + report bundle stable across reruns";
}

}  // namespace

int main(int argc, char** argv) {
  struct Criterion {
    int id;
    const char* label;
    std::function<std::string()> body;
  };
  const std::vector<Criterion> criteria = {
      {1, "attention parameter deltas are exact integers", criterion_param_deltas},
      {2, "parameter totals match the reference totals at 0.01M rounding",
       criterion_param_totals},
      {3, "flop totals within 1% of the reference totals, overhead below 1%", criterion_flops},
      {4, "analytic gradients pass central finite-difference checks", criterion_gradients},
      {5, "attention invariants (shape, gate range, locality, degeneracy)",
       criterion_attention_invariants},
      {6, "desk-scale training exceeds 40% held-out accuracy on all 8 configs",
       criterion_training_smoke},
      {7, "latency protocol: 10 untimed + 100 timed, exact statistics",
       criterion_bench_protocol},
      {8, "profile + report pipeline byte-identical across reruns",
       criterion_pipeline_reproducibility},
  };

  std::vector<int> only;
  for (int i = 1; i < argc; ++i) {
    if (std::string(argv[i]) == "--only" && i + 1 < argc) {
      std::istringstream list(argv[++i]);
      std::string token;
      while (std::getline(list, token, ',')) only.push_back(std::stoi(token));
    }
  }

  int failures = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    std::string note;
    bool ok = true;
    std::string detail;
    try {
      note = c.body();
    } catch (const std::exception& e) {
      ok = false;
      detail = e.what();
    }
    if (ok) {
      std::printf("[PASS] criterion %d: %s%s%s\n", c.id, c.label, note.empty() ? "" : " -- ",
                  note.c_str());
    } else {
      ++failures;
      std::printf("[FAIL] criterion %d: %s -- %s\n", c.id, c.label, detail.c_str());
    }
    std::fflush(stdout);
  }
  return failures;
}
