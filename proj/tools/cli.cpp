#include "cli.hpp"

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "fsle/complexity.hpp"
#include "fsle/distill.hpp"
#include "fsle/energy.hpp"
#include "fsle/fewshot.hpp"
#include "fsle/model_graph.hpp"
#include "fsle/model_io.hpp"
#include "fsle/rng.hpp"

namespace fsle::cli {
namespace {

using nlohmann::json;

constexpr double kReferenceParams = 0.961e6;
constexpr double kReferenceFlops = 0.512e9;

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorKind::kIo, "cannot open '" + path + "' for writing");
  f << text;
  if (!f) throw Error(ErrorKind::kIo, "write to '" + path + "' failed");
}

std::string read_text(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorKind::kIo, "cannot open '" + path + "'");
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

json parse_json_file(const std::string& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::kConfig, "'" + path + "' is not valid JSON: " + e.what());
  }
}

void emit(const json& report, const std::string& out_path, std::ostream& out) {
  const std::string text = report.dump(2) + "\n";
  if (out_path.empty()) {
    out << text;
  } else {
    write_text(out_path, text);
  }
}

ModelGraph model_from(const std::string& weights, const std::string& arch_path, int resolution,
                      std::uint64_t seed) {
  if (!weights.empty()) return load_model(load_bundle(weights));
  const ArchConfig config = arch_path.empty() ? mobilevit_xxs(resolution, resolution)
                                              : arch_from_json(parse_json_file(arch_path));
  ModelGraph g = build_mobilevit(config);
  g.load_weights(random_weights(g, seed));
  return g;
}

struct EvalOptions {
  std::string data;
  std::string base_mean;
  int ways = 5;
  int shots = 1;
  int queries = 15;
  int episodes = 10'000;
  int seeds = 5;
  std::uint64_t seed = 0;
  unsigned workers = 0;
  bool preprocess = true;
  bool transductive = false;
  int kmeans_iterations = 10;
  double temperature = 1.0;
  std::string out;
};

void cmd_eval(const EvalOptions& o, std::ostream& out) {
  const EmbeddingDataset data = load_embeddings(o.data);
  Protocol p;
  p.n_way = o.ways;
  p.k_shot = o.shots;
  p.q_queries = o.queries;
  p.episodes = o.episodes;
  p.seeds = o.seeds;
  p.root_seed = o.seed;
  ClassifierConfig c;
  c.preprocess = o.preprocess;
  if (!o.base_mean.empty()) c.base_mean = dataset_mean(load_embeddings(o.base_mean));
  c.transductive = o.transductive;
  c.soft_kmeans.iterations = o.kmeans_iterations;
  c.soft_kmeans.temperature = o.temperature;
  const EvalReport r = evaluate(data, p, c, o.workers);
  json j = to_json(r);
  // Worker count is excluded: it never changes the result.
  j["config"] = {{"data", o.data},
                 {"base_mean", o.base_mean.empty() ? json(nullptr) : json(o.base_mean)},
                 {"ways", o.ways},
                 {"shots", o.shots},
                 {"queries", o.queries},
                 {"episodes", o.episodes},
                 {"seeds", o.seeds},
                 {"seed", o.seed},
                 {"preprocess", o.preprocess},
                 {"transductive", o.transductive},
                 {"kmeans_iterations", o.kmeans_iterations},
                 {"temperature", o.temperature}};
  emit(j, o.out, out);
}

struct DistillOptions {
  std::string inputs;
  std::string targets;
  std::string student;
  std::string bundle_out;
  bool projection = false;
  double lr = 0.001;
  int epochs = 100;
  int batch_size = 1;
  std::uint64_t seed = 0;
  std::string out;
};

void cmd_distill(const DistillOptions& o, std::ostream& out) {
  const TeacherSet data = teacher_set_from(load_embeddings(o.inputs), load_embeddings(o.targets));
  DistillConfig c;
  c.learning_rate = o.lr;
  c.epochs = o.epochs;
  c.batch_size = o.batch_size;
  c.projection = o.projection;
  c.seed = o.seed;
  if (o.student.empty()) {
    // Default student: one linear layer straight into the teacher space.
    StudentSpec s;
    s.input_shape = data.input_shape;
    if (s.input_shape.size() > 1) s.layers.push_back({LayerKind::kFlatten});
    s.layers.push_back({LayerKind::kLinear, data.targets.dim});
    c.student = s;
  } else {
    c.student = student_from_json(parse_json_file(o.student));
  }
  const TrainResult r = train(c, data);
  if (!o.bundle_out.empty()) save_bundle(o.bundle_out, r.student.to_bundle());
  json j = {{"config", to_json(c)},
            {"inputs", o.inputs},
            {"targets", o.targets},
            {"items", data.size()},
            {"initial_loss", r.initial_loss},
            {"final_loss", r.final_loss},
            {"loss_ratio", r.initial_loss > 0 ? r.final_loss / r.initial_loss : 0.0},
            {"loss_curve", r.loss_curve},
            {"student_bundle", o.bundle_out.empty() ? json(nullptr) : json(o.bundle_out)}};
  emit(j, o.out, out);
}

struct InspectOptions {
  std::string weights;
  std::string arch;
  int resolution = 84;
  double reference_params = kReferenceParams;
  double reference_flops = kReferenceFlops;
  bool per_layer = false;
  std::string out;
};

void cmd_inspect(const InspectOptions& o, std::ostream& out) {
  ArchConfig config;
  if (!o.weights.empty()) {
    config = arch_from_json(load_bundle(o.weights).arch);
  } else if (!o.arch.empty()) {
    config = arch_from_json(parse_json_file(o.arch));
  } else {
    config = mobilevit_xxs(o.resolution, o.resolution);
  }
  const ModelGraph g = build_mobilevit(config);
  const ComplexityReport r = complexity(g, o.resolution, o.resolution);
  const ComplexityTotals walk = complexity_from_config(config, o.resolution, o.resolution);
  const ConventionMatch m = closest_convention(r, o.reference_flops);
  json j = to_json(r);
  if (!o.per_layer) j.erase("per_layer");
  j["config_walk"] = {{"param_count", walk.param_count},
                      {"macs", walk.macs},
                      {"agrees", walk.param_count == r.param_count && walk.macs == r.macs}};
  j["reference"] = {
      {"params", o.reference_params},
      {"params_relative_error",
       (static_cast<double>(r.param_count) - o.reference_params) / o.reference_params},
      {"flops", o.reference_flops},
      {"flops_convention", m.convention == FlopsConvention::kMacs ? "macs" : "flops_2x"},
      {"flops_value", m.value},
      {"flops_relative_error", m.relative_error}};
  j["config"] = {{"weights", o.weights.empty() ? json(nullptr) : json(o.weights)},
                 {"arch", o.arch.empty() ? json(nullptr) : json(o.arch)},
                 {"resolution", o.resolution},
                 {"reference_params", o.reference_params},
                 {"reference_flops", o.reference_flops},
                 {"per_layer", o.per_layer}};
  emit(j, o.out, out);
}

struct BenchOptions {
  std::string weights;
  std::string arch;
  int resolution = 84;
  int repetitions = 100;
  int warmup = 10;
  int images = 8;
  std::uint64_t seed = 0;
  std::string out;
};

void cmd_bench(const BenchOptions& o, std::ostream& out) {
  if (o.images < 1) throw Error(ErrorKind::kInvalidArgument, "--images must be >= 1");
  const ModelGraph g = model_from(o.weights, o.arch, o.resolution, derive_seed(o.seed, 0));
  const Shape in = g.input_shape();
  std::vector<Tensor> images;
  Rng rng(derive_seed(o.seed, 1));
  for (int i = 0; i < o.images; ++i) {
    Tensor x(in);
    for (float& v : x.data()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    images.push_back(std::move(x));
  }
  const BenchResult r = bench_model(g, images, o.repetitions, o.warmup);
  json j = to_json(r);
  j["input_shape"] = in;
  j["config"] = {{"weights", o.weights.empty() ? json(nullptr) : json(o.weights)},
                 {"arch", o.arch.empty() ? json(nullptr) : json(o.arch)},
                 {"resolution", o.resolution},
                 {"repetitions", o.repetitions},
                 {"warmup", o.warmup},
                 {"images", o.images},
                 {"seed", o.seed}};
  emit(j, o.out, out);
}

struct PowerOptions {
  std::vector<std::string> load;
  std::vector<double> latency_ms;
  std::vector<long> inferences;
  std::vector<double> throughput;
  std::string idle;
  std::string out;
};

void cmd_power(const PowerOptions& o, std::ostream& out) {
  const std::size_t n = o.load.size();
  if (o.latency_ms.size() != n) {
    throw Error(ErrorKind::kInvalidArgument, "need one --latency-ms per --load trace");
  }
  if (!o.inferences.empty() && o.inferences.size() != n) {
    throw Error(ErrorKind::kInvalidArgument, "--inferences must be given once per --load or not at all");
  }
  if (!o.throughput.empty() && o.throughput.size() != n) {
    throw Error(ErrorKind::kInvalidArgument, "--throughput must be given once per --load or not at all");
  }
  const PowerTrace idle = load_trace(o.idle);
  std::vector<EnergyReport> reports;
  json items = json::array();
  for (std::size_t i = 0; i < n; ++i) {
    const PowerTrace load = load_trace(o.load[i]);
    const long count = o.inferences.empty() ? 0 : o.inferences[i];
    const std::optional<double> tput =
        o.throughput.empty() ? std::nullopt : std::optional<double>(o.throughput[i]);
    reports.push_back(energy_report(load, idle, o.latency_ms[i], count, tput));
    json item = to_json(reports.back());
    item["load_trace"] = o.load[i];
    item["dynamic_power_reduction_vs_first"] =
        i == 0 ? json(nullptr) : json(dynamic_power_reduction(reports.front(), reports.back()));
    items.push_back(std::move(item));
  }
  json j = {{"idle_trace", o.idle},
            {"reports", std::move(items)},
            {"config",
             {{"load", o.load},
              {"latency_ms", o.latency_ms},
              {"inferences", o.inferences},
              {"throughput", o.throughput},
              {"idle", o.idle}}}};
  emit(j, o.out, out);
}

struct GenEmbeddingsOptions {
  SyntheticEmbeddingConfig c;
  std::string out;
};

struct GenWeightsOptions {
  std::string arch;
  int resolution = 256;
  std::uint64_t seed = 0;
  std::string out;
};

struct GenTraceOptions {
  SyntheticTraceConfig c;
  bool electrical = false;
  std::string out;
};

struct GenTeacherOptions {
  SyntheticTeacherConfig c;
  std::string out_dir;
};

void cmd_gen_teacher(const GenTeacherOptions& o) {
  const SyntheticTeacherTask task = make_synthetic_teacher(o.c);
  const std::filesystem::path dir(o.out_dir);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::kIo, "cannot create '" + o.out_dir + "': " + ec.message());
  save_embeddings(dir / "train_inputs.fsle", inputs_as_dataset(task.train));
  save_embeddings(dir / "train_targets.fsle", task.train.targets);
  save_embeddings(dir / "heldout_inputs.fsle", inputs_as_dataset(task.heldout));
  save_embeddings(dir / "heldout_targets.fsle", task.heldout.targets);
}

}  // namespace

int exit_code(ErrorKind kind) { return 10 + static_cast<int>(kind); }

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Few-shot learning engine: evaluation, distillation, complexity and energy tools",
               "fsle"};
  app.set_config("--config", "", "TOML file with option values; command-line flags take precedence");
  app.require_subcommand(1);

  EvalOptions ev;
  auto* eval = app.add_subcommand("eval", "Episodic NCM evaluation on an embedding dataset");
  eval->add_option("--data", ev.data, "Embedding dataset file")->required();
  eval->add_option("--base-mean", ev.base_mean, "Embedding file whose mean is used for centering");
  eval->add_option("--ways", ev.ways, "Classes per episode")->capture_default_str();
  eval->add_option("--shots", ev.shots, "Support items per class")->capture_default_str();
  eval->add_option("--queries", ev.queries, "Query items per class")->capture_default_str();
  eval->add_option("--episodes", ev.episodes, "Episodes per seed")->capture_default_str();
  eval->add_option("--seeds", ev.seeds, "Independent seeded runs")->capture_default_str();
  eval->add_option("--seed", ev.seed, "Root seed")->envname("FSLE_SEED")->capture_default_str();
  eval->add_option("--workers", ev.workers, "Worker threads, 0 = hardware concurrency")
      ->capture_default_str();
  eval->add_flag("--preprocess,!--no-preprocess", ev.preprocess,
                 "Center and L2-normalize embeddings")
      ->capture_default_str();
  eval->add_flag("--transductive", ev.transductive, "Refine prototypes with soft k-means");
  eval->add_option("--kmeans-iterations", ev.kmeans_iterations)->capture_default_str();
  eval->add_option("--temperature", ev.temperature)->capture_default_str();
  eval->add_option("--out", ev.out, "Report path (default stdout)");

  DistillOptions di;
  auto* distill = app.add_subcommand("distill", "Train a student to match teacher embeddings");
  distill->add_option("--inputs", di.inputs, "Student input dataset")->required();
  distill->add_option("--targets", di.targets, "Teacher embedding dataset")->required();
  distill->add_option("--student", di.student, "Student spec JSON (default: one linear layer)");
  distill->add_option("--bundle-out", di.bundle_out, "Write the trained student bundle here");
  distill->add_flag("--projection", di.projection, "Add a linear projection head");
  distill->add_option("--lr", di.lr, "Learning rate")->capture_default_str();
  distill->add_option("--epochs", di.epochs)->capture_default_str();
  distill->add_option("--batch-size", di.batch_size)->capture_default_str();
  distill->add_option("--seed", di.seed)->envname("FSLE_SEED")->capture_default_str();
  distill->add_option("--out", di.out, "Report path (default stdout)");

  InspectOptions in;
  auto* inspect = app.add_subcommand("inspect", "Parameter and FLOP counts for a backbone");
  inspect->add_option("--weights", in.weights, "Weight bundle whose architecture is counted");
  inspect->add_option("--arch", in.arch, "Architecture JSON (default: MobileViT-XXS)");
  inspect->add_option("--resolution", in.resolution, "Square input size")->capture_default_str();
  inspect->add_option("--reference-params", in.reference_params)->capture_default_str();
  inspect->add_option("--reference-flops", in.reference_flops)->capture_default_str();
  inspect->add_flag("--per-layer", in.per_layer, "Include the per-layer breakdown");
  inspect->add_option("--out", in.out, "Report path (default stdout)");

  BenchOptions be;
  auto* bench = app.add_subcommand("bench", "Time backbone forward passes");
  bench->add_option("--weights", be.weights, "Weight bundle (default: seeded random XXS)");
  bench->add_option("--arch", be.arch, "Architecture JSON for random weights");
  bench->add_option("--resolution", be.resolution)->capture_default_str();
  bench->add_option("--repetitions", be.repetitions)->capture_default_str();
  bench->add_option("--warmup", be.warmup)->capture_default_str();
  bench->add_option("--images", be.images, "Distinct random inputs cycled through")
      ->capture_default_str();
  bench->add_option("--seed", be.seed)->envname("FSLE_SEED")->capture_default_str();
  bench->add_option("--out", be.out, "Report path (default stdout)");

  PowerOptions po;
  auto* power = app.add_subcommand("power", "Energy report from power traces");
  power->add_option("--load", po.load, "Load trace CSV; repeat for several runs")->required();
  power->add_option("--latency-ms", po.latency_ms, "Mean latency per --load trace")->required();
  power->add_option("--inferences", po.inferences, "Inferences covered by each --load trace");
  power->add_option("--throughput", po.throughput, "Measured throughput per --load trace");
  power->add_option("--idle", po.idle, "Idle trace CSV")->required();
  power->add_option("--out", po.out, "Report path (default stdout)");

  auto* gen = app.add_subcommand("gen", "Synthetic artifacts");
  gen->require_subcommand(1);

  GenEmbeddingsOptions ge;
  auto* gen_emb = gen->add_subcommand("embeddings", "Gaussian-class embedding dataset");
  gen_emb->add_option("--classes", ge.c.classes)->capture_default_str();
  gen_emb->add_option("--per-class", ge.c.per_class)->capture_default_str();
  gen_emb->add_option("--dim", ge.c.dim)->capture_default_str();
  gen_emb->add_option("--spread", ge.c.class_spread, "Class center std; 0 = chance level")
      ->capture_default_str();
  gen_emb->add_option("--noise", ge.c.noise, "Within-class std")->capture_default_str();
  gen_emb->add_option("--seed", ge.c.seed)->envname("FSLE_SEED")->capture_default_str();
  gen_emb->add_option("--out", ge.out)->required();

  GenWeightsOptions gw;
  auto* gen_w = gen->add_subcommand("weights", "Seeded random weight bundle");
  gen_w->add_option("--arch", gw.arch, "Architecture JSON (default: MobileViT-XXS)");
  gen_w->add_option("--resolution", gw.resolution)->capture_default_str();
  gen_w->add_option("--seed", gw.seed)->envname("FSLE_SEED")->capture_default_str();
  gen_w->add_option("--out", gw.out)->required();

  GenTraceOptions gt;
  auto* gen_t = gen->add_subcommand("trace", "Synthetic power trace CSV");
  gen_t->add_option("--power", gt.c.power_w, "Mean power in watts")->capture_default_str();
  gen_t->add_flag("--electrical", gt.electrical, "Write voltage and current columns");
  gen_t->add_option("--voltage", gt.c.voltage_v)->capture_default_str();
  gen_t->add_option("--ripple", gt.c.ripple_w, "Sinusoidal ripple amplitude in watts")
      ->capture_default_str();
  gen_t->add_option("--ripple-hz", gt.c.ripple_hz)->capture_default_str();
  gen_t->add_option("--duration", gt.c.duration_s, "Seconds")->capture_default_str();
  gen_t->add_option("--rate", gt.c.rate_hz, "Samples per second")->capture_default_str();
  gen_t->add_option("--start", gt.c.start_s, "First timestamp")->capture_default_str();
  gen_t->add_option("--out", gt.out)->required();

  GenTeacherOptions gd;
  auto* gen_d = gen->add_subcommand("teacher", "Synthetic distillation task");
  gen_d->add_option("--classes", gd.c.classes)->capture_default_str();
  gen_d->add_option("--train-per-class", gd.c.train_per_class)->capture_default_str();
  gen_d->add_option("--heldout-per-class", gd.c.heldout_per_class)->capture_default_str();
  gen_d->add_option("--input-dim", gd.c.input_dim)->capture_default_str();
  gen_d->add_option("--signal-dims", gd.c.signal_dims)->capture_default_str();
  gen_d->add_option("--teacher-dim", gd.c.teacher_dim)->capture_default_str();
  gen_d->add_option("--class-spread", gd.c.class_spread)->capture_default_str();
  gen_d->add_option("--signal-noise", gd.c.signal_noise)->capture_default_str();
  gen_d->add_option("--nuisance-std", gd.c.nuisance_std)->capture_default_str();
  gen_d->add_option("--seed", gd.c.seed)->envname("FSLE_SEED")->capture_default_str();
  gen_d->add_option("--out-dir", gd.out_dir, "Directory for the four dataset files")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (eval->parsed()) {
      cmd_eval(ev, out);
    } else if (distill->parsed()) {
      cmd_distill(di, out);
    } else if (inspect->parsed()) {
      cmd_inspect(in, out);
    } else if (bench->parsed()) {
      cmd_bench(be, out);
    } else if (power->parsed()) {
      cmd_power(po, out);
    } else if (gen_emb->parsed()) {
      save_embeddings(ge.out, make_synthetic_embeddings(ge.c));
    } else if (gen_w->parsed()) {
      const ArchConfig config = gw.arch.empty() ? mobilevit_xxs(gw.resolution, gw.resolution)
                                                : arch_from_json(parse_json_file(gw.arch));
      save_bundle(gw.out, random_weights(build_mobilevit(config), gw.seed));
    } else if (gen_t->parsed()) {
      SyntheticTraceConfig c = gt.c;
      c.columns = gt.electrical ? TraceColumns::kElectrical : TraceColumns::kPower;
      write_text(gt.out, serialize_trace(make_synthetic_trace(c)));
    } else if (gen_d->parsed()) {
      cmd_gen_teacher(gd);
    }
  } catch (const Error& e) {
    err << "fsle: error [" << to_string(e.kind()) << "]: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    err << "fsle: internal error: " << e.what() << "\n";
    return kExitInternal;
  }
  return kExitOk;
}

}  // namespace fsle::cli
