// Acceptance suite: one PASS/FAIL line per criterion. Pass criterion ids as
// arguments to run a subset; no arguments runs all. Exit status is non-zero
// when any selected criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cli.hpp"
#include "format_cases.hpp"
#include "fsle/distill.hpp"
#include "fsle/fewshot.hpp"
#include "fsle/ops.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

namespace fsle::acceptance {
namespace {

using nlohmann::json;

// Pinned tolerances.
constexpr double kRefParams = 0.961e6;
constexpr double kRefFlops = 0.512e9;
constexpr double kParamsTol = 0.05;
constexpr double kFlopsTol = 0.15;
constexpr double kEnergyTolJ = 0.0005;
constexpr double kReductionTarget = 0.37;
constexpr double kReductionTol = 0.005;
constexpr double kKernelTol = 1e-5;
constexpr double kLossFraction = 0.01;
constexpr double kNcmGain = 0.20;
constexpr double kCiRatio = 2.0;
constexpr double kCiRatioTol = 0.10;
constexpr int kFuzzCases = 10'000;

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) pass = false;
    if (!detail.empty()) detail += "; ";
    detail += (ok ? "" : "FAILED ") + what;
  }
};

struct Criterion {
  std::string id;
  double budget_s;
  std::function<Outcome()> run;
};

std::string fmt(double v, int precision = 6) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

json cli_json(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  if (code != 0) throw std::runtime_error("fsle exited " + std::to_string(code) + ": " + err.str());
  return json::parse(out.str());
}

Outcome complexity() {
  Outcome o;
  const json j = cli_json({"inspect", "--resolution", "84"});
  const double params = j["param_count"];
  const double perr = std::abs(params - kRefParams) / kRefParams;
  o.require(perr <= kParamsTol, "params " + fmt(params, 7) + " vs 0.961M, rel err " + fmt(perr, 4) +
                                    " (tol " + fmt(kParamsTol) + ")");
  o.require(j["config_walk"]["agrees"].get<bool>(), "graph walk == config walk");
  const double ferr = j["reference"]["flops_relative_error"];
  o.require(ferr <= kFlopsTol, "FLOPs " + j["reference"]["flops_value"].dump() + " (" +
                                   j["reference"]["flops_convention"].get<std::string>() +
                                   ", closer convention) vs 0.512G, rel err " + fmt(ferr, 4) +
                                   " (tol " + fmt(kFlopsTol) + ")");
  return o;
}

Outcome energy() {
  Outcome o;
  const std::string dir = FSLE_FIXTURE_DIR;
  const json j = cli_json({"power", "--load", dir + "/resnet12_load.csv", "--load",
                           dir + "/mobilevit_xxs_load.csv", "--latency-ms", "3.6", "--latency-ms",
                           "2.6", "--idle", dir + "/idle_4w.csv"});
  const double e0 = j["reports"][0]["energy_per_inference_j"];
  const double e1 = j["reports"][1]["energy_per_inference_j"];
  const double red = j["reports"][1]["dynamic_power_reduction_vs_first"];
  o.require(std::abs(e0 - 0.072) <= kEnergyTolJ, "ResNet12 " + fmt(e0) + " J vs 0.072");
  o.require(std::abs(e1 - 0.036) <= kEnergyTolJ, "MobileViT-XXS " + fmt(e1) + " J vs 0.036");
  o.require(std::abs(red - kReductionTarget) <= kReductionTol,
            "dynamic reduction " + fmt(100 * red, 4) + "% vs 37% +- 0.5 pt");
  return o;
}

double max_rel_error(std::span<const float> got, const std::vector<double>& want) {
  if (got.size() != want.size()) return INFINITY;
  double worst = 0.0;
  for (std::size_t i = 0; i < want.size(); ++i) {
    worst = std::max(worst, std::abs(got[i] - want[i]) / std::max(1.0, std::abs(want[i])));
  }
  return worst;
}

Outcome oracle_equivalence() {
  Outcome o;
  Rng rng(derive_seed(0xACCE, 3));
  int fit_mismatch = 0, classify_mismatch = 0, queries = 0;
  for (int inst = 0; inst < 1000; ++inst) {
    const std::size_t dim = 1 + rng.uniform_index(24);
    const int shots = 1 + static_cast<int>(rng.uniform_index(5));
    // Half the instances draw from a coarse integer grid so exact distance
    // ties occur and exercise the lowest-class-id rule.
    const bool grid = inst % 2 == 0;
    auto draw = [&] {
      return grid ? static_cast<float>(rng.uniform_index(3)) - 1.0f
                  : static_cast<float>(rng.normal());
    };
    EmbeddingDataset support(dim);
    std::vector<float> v(dim);
    std::vector<std::int32_t> ids;
    while (ids.size() < 5) {
      const auto id = static_cast<std::int32_t>(rng.uniform_index(50));
      if (std::find(ids.begin(), ids.end(), id) == ids.end()) ids.push_back(id);
    }
    for (int s = 0; s < shots; ++s) {
      for (auto id : ids) {
        for (float& x : v) x = draw();
        support.push_back(id, v);
      }
    }
    const auto ps = ncm_fit(support);
    for (const auto& p : ps) {
      if (p.vector != oracle::naive_mean(support, p.class_id)) ++fit_mismatch;
    }
    for (int q = 0; q < 15; ++q, ++queries) {
      for (float& x : v) x = draw();
      if (ncm_classify(ps, v).class_id != oracle::brute_force_class(ps, v)) ++classify_mismatch;
    }
  }
  o.require(fit_mismatch == 0, "NCM fit: " + std::to_string(fit_mismatch) +
                                   " prototype mismatches over 1000 5-way instances");
  o.require(classify_mismatch == 0, "NCM classify: " + std::to_string(classify_mismatch) + "/" +
                                        std::to_string(queries) + " query mismatches");

  double conv_worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t c_in = 1 + rng.uniform_index(6), c_out = 1 + rng.uniform_index(6);
    const std::size_t k = 1 + rng.uniform_index(5);
    const int stride = 1 + static_cast<int>(rng.uniform_index(3));
    const int pad = static_cast<int>(rng.uniform_index(3));
    const std::size_t h = k + rng.uniform_index(12), w = k + rng.uniform_index(12);
    const Tensor in = oracle::random_tensor({c_in, h, w}, rng);
    const Tensor kernel = oracle::random_tensor({c_out, c_in, k, k}, rng);
    std::vector<float> bias(c_out);
    for (float& b : bias) b = static_cast<float>(rng.uniform(-1, 1));
    std::size_t oh, ow;
    const auto want = oracle::conv2d(in, kernel, bias, stride, pad, oh, ow);
    conv_worst = std::max(conv_worst, max_rel_error(ops::conv2d(in, kernel, bias, stride, pad).data(), want));
  }
  o.require(conv_worst <= kKernelTol, "conv2d 200 shapes, max rel err " + fmt(conv_worst, 3));

  double attn_worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const int heads = 1 + static_cast<int>(rng.uniform_index(4));
    const std::size_t d = heads * (1 + rng.uniform_index(6)), n = 1 + rng.uniform_index(16);
    ops::AttentionWeights w{oracle::random_tensor({d, d}, rng), oracle::random_tensor({d, d}, rng),
                            oracle::random_tensor({d, d}, rng), oracle::random_tensor({d, d}, rng)};
    if (trial % 2 == 0) {
      w.bq = oracle::random_tensor({d}, rng);
      w.bk = oracle::random_tensor({d}, rng);
      w.bv = oracle::random_tensor({d}, rng);
      w.bo = oracle::random_tensor({d}, rng);
    }
    const Tensor x = oracle::random_tensor({n, d}, rng);
    const auto want = oracle::attention(x, w.wq, w.wk, w.wv, w.wo, w.bq, w.bk, w.bv, w.bo, heads);
    attn_worst = std::max(attn_worst, max_rel_error(ops::multi_head_attention(x, w, heads).data(), want));
  }
  o.require(attn_worst <= kKernelTol, "attention 200 shapes, max rel err " + fmt(attn_worst, 3));
  return o;
}

Outcome gradients() {
  Outcome o;
  Rng rng(derive_seed(0xACCE, 4));
  int mse_bad = 0, mse_checked = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng.uniform_index(20);
    auto s = gradcheck::random_target(n, rng);
    const auto t = gradcheck::random_target(n, rng);
    const auto r = mse_feature_loss<double>(s, t);
    for (std::size_t i = 0; i < n; ++i, ++mse_checked) {
      const double saved = s[i];
      s[i] = saved + gradcheck::kStep;
      const double up = mse_feature_loss<double>(s, t).loss;
      s[i] = saved - gradcheck::kStep;
      const double down = mse_feature_loss<double>(s, t).loss;
      s[i] = saved;
      if (!gradcheck::close(r.grad[i], (up - down) / (2 * gradcheck::kStep))) ++mse_bad;
    }
  }
  o.require(mse_bad == 0, "mse_feature_loss " + std::to_string(mse_bad) + "/" +
                              std::to_string(mse_checked) + " coordinates off");
  const auto cases = gradcheck::op_cases();
  for (std::size_t ci = 0; ci < cases.size(); ++ci) {
    const auto& c = cases[ci];
    std::size_t bad = 0, checked = 0;
    std::string first;
    for (int trial = 0; trial < 5; ++trial) {
      Network<double> net(c.spec, c.projection, rng.next_u64());
      for (auto& p : net.params())
        for (double& v : p.value.data()) v += rng.uniform(-0.3, 0.3);
      const auto x = gradcheck::random_input(c.spec.input_shape, rng);
      const auto t = gradcheck::random_target(net.output_dim(), rng);
      const auto mism = gradcheck::check(net, x, t, 64, rng);
      checked += 64;
      bad += mism.size();
      if (!mism.empty() && first.empty()) {
        first = " first " + mism[0].where + " analytic " + fmt(mism[0].analytic) + " numeric " +
                fmt(mism[0].numeric);
      }
    }
    o.require(bad == 0, c.name + " " + std::to_string(checked - bad) + "/" +
                            std::to_string(checked) + first);
  }
  o.detail = "rel tol " + fmt(gradcheck::kRelTol) + ", step " + fmt(gradcheck::kStep) + ": " + o.detail;
  return o;
}

Outcome distillation() {
  Outcome o;
  SyntheticTeacherConfig tc;
  tc.seed = 21;
  const SyntheticTeacherTask task = make_synthetic_teacher(tc);
  DistillConfig c;
  c.student = {task.train.input_shape, {{LayerKind::kLinear, task.train.targets.dim}}};
  c.learning_rate = 0.001;
  c.epochs = 100;
  c.seed = 5;
  const Network<float> untrained(c.student, 0, c.seed);
  const TrainResult r = train(c, task.train);
  o.require(r.final_loss < kLossFraction * r.initial_loss,
            "loss " + fmt(r.initial_loss, 4) + " -> " + fmt(r.final_loss, 4) + " (ratio " +
                fmt(r.final_loss / r.initial_loss, 3) + ", need < " + fmt(kLossFraction) + ")");
  Protocol p;
  p.n_way = tc.classes;
  p.k_shot = 1;
  p.episodes = 1000;
  p.seeds = 1;
  p.root_seed = 8;
  const double before = evaluate(embed(untrained, task.heldout), p, {}).grand_mean;
  const double after = evaluate(embed(r.student, task.heldout), p, {}).grand_mean;
  o.require(after - before >= kNcmGain, "held-out " + std::to_string(p.n_way) +
                                            "-way 1-shot NCM " + fmt(before, 4) + " -> " +
                                            fmt(after, 4) + " (gain " +
                                            fmt(100 * (after - before), 3) + " pt, need >= 20)");
  return o;
}

Outcome protocol_statistics() {
  Outcome o;
  const EmbeddingDataset chance = oracle::gaussian_clusters(20, 100, 16, 0.0, 1.0, 77);
  Protocol p;  // 5-way 1-shot 15 queries
  p.episodes = 2000;
  p.seeds = 5;
  p.root_seed = 31;
  const EvalReport r = evaluate(chance, p, {});
  o.require(std::abs(r.grand_mean - 0.2) <= 3 * r.ci95_half_width,
            "chance mean " + fmt(r.grand_mean, 5) + " vs 0.20, |diff| " +
                fmt(std::abs(r.grand_mean - 0.2), 3) + " <= 3*CI " + fmt(3 * r.ci95_half_width, 3));
  Protocol small = p;
  small.seeds = 1;
  small.episodes = 1000;
  Protocol large = small;
  large.episodes = 4000;
  const double ratio = evaluate(chance, small, {}).ci95_half_width /
                       evaluate(chance, large, {}).ci95_half_width;
  o.require(std::abs(ratio - kCiRatio) <= kCiRatioTol * kCiRatio,
            "CI(1000)/CI(4000) = " + fmt(ratio, 4) + " vs 2 +- 10%");
  const EvalReport base = evaluate(chance, p, {}, 1);
  bool same = true;
  for (unsigned w : {2u, 3u, 8u}) {
    const EvalReport other = evaluate(chance, p, {}, w);
    same = same && other.episode_accuracies == base.episode_accuracies &&
           other.grand_mean == base.grand_mean && other.ci95_half_width == base.ci95_half_width;
  }
  o.require(same, "workers 1/2/3/8 bit-identical");
  return o;
}

Outcome format_robustness() {
  Outcome o;
  Rng rng(derive_seed(0xACCE, 7));
  int bundle_bad = 0, emb_bad = 0;
  for (int i = 0; i < kFuzzCases; ++i) {
    const WeightBundle b = format_cases::random_bundle(rng);
    if (!format_cases::bundles_equal(read_bundle(write_bundle(b)), b)) ++bundle_bad;
    const EmbeddingDataset d = format_cases::random_dataset(rng);
    if (!format_cases::datasets_equal(read_embeddings(write_embeddings(d)), d)) ++emb_bad;
  }
  o.require(bundle_bad == 0, "weight bundle fuzz " + std::to_string(bundle_bad) + "/" +
                                 std::to_string(kFuzzCases) + " mismatches");
  o.require(emb_bad == 0, "embedding fuzz " + std::to_string(emb_bad) + "/" +
                              std::to_string(kFuzzCases) + " mismatches");
  int wrong = 0, total = 0;
  std::string first;
  for (const auto& c : format_cases::corruption_cases()) {
    ++total;
    const auto e = format_cases::read_error(c);
    const bool ok = e && e->format_kind() == c.kind && (!c.offset || e->byte_offset() == *c.offset);
    if (!ok) {
      ++wrong;
      if (first.empty()) first = " first " + c.name;
    }
  }
  o.require(wrong == 0, "corruption classes " + std::to_string(total - wrong) + "/" +
                            std::to_string(total) + " rejected with designated error" + first);
  return o;
}

std::vector<Criterion> criteria() {
  return {
      {"complexity", 1.0, complexity},
      {"energy", 1.0, energy},
      {"oracle_equivalence", 120.0, oracle_equivalence},
      {"gradients", 120.0, gradients},
      {"distillation", 300.0, distillation},
      {"protocol_statistics", 120.0, protocol_statistics},
      {"format_robustness", 120.0, format_robustness},
  };
}

}  // namespace
}  // namespace fsle::acceptance

int main(int argc, char** argv) {
  using namespace fsle::acceptance;
  const std::vector<std::string> wanted(argv + 1, argv + argc);
  const auto all = criteria();
  for (const auto& w : wanted) {
    if (std::none_of(all.begin(), all.end(), [&](const Criterion& c) { return c.id == w; })) {
      std::cerr << "unknown criterion '" << w << "'\n";
      return 2;
    }
  }
  bool all_pass = true;
  for (const auto& c : all) {
    if (!wanted.empty() && std::find(wanted.begin(), wanted.end(), c.id) == wanted.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.require(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    o.require(secs < c.budget_s, "runtime " + fmt(secs, 3) + " s < " + fmt(c.budget_s) + " s");
    all_pass = all_pass && o.pass;
    std::cout << (o.pass ? "PASS " : "FAIL ") << c.id << ": " << o.detail << std::endl;
  }
  return all_pass ? 0 : 1;
}
