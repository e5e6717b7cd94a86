#include <cmath>
#include <numeric>

#include "fsle/distill.hpp"
#include "fsle/rng.hpp"

namespace fsle {

template <typename T>
LossResult<T> mse_feature_loss(std::span<const T> student, std::span<const T> teacher) {
  if (student.size() != teacher.size() || student.empty()) {
    throw Error(ErrorKind::kShapeMismatch, "student embedding dim " +
                                               std::to_string(student.size()) +
                                               " does not match teacher dim " +
                                               std::to_string(teacher.size()));
  }
  const double d = static_cast<double>(student.size());
  LossResult<T> r;
  r.grad.resize(student.size());
  for (std::size_t i = 0; i < student.size(); ++i) {
    const T diff = student[i] - teacher[i];
    r.loss += static_cast<double>(diff) * static_cast<double>(diff);
    r.grad[i] = static_cast<T>(2.0 / d) * diff;
  }
  r.loss /= d;
  return r;
}

template LossResult<float> mse_feature_loss(std::span<const float>, std::span<const float>);
template LossResult<double> mse_feature_loss(std::span<const double>, std::span<const double>);

Tensor TeacherSet::input(std::size_t i) const {
  const std::size_t n = shape_product(input_shape);
  return Tensor(input_shape, std::vector<float>(inputs.begin() + static_cast<long>(i * n),
                                                inputs.begin() + static_cast<long>((i + 1) * n)));
}

void TeacherSet::validate() const {
  if (targets.empty()) throw Error(ErrorKind::kInsufficientData, "teacher set is empty");
  if (input_shape.empty() || shape_product(input_shape) == 0) {
    throw Error(ErrorKind::kConfig, "teacher set input shape is empty");
  }
  if (inputs.size() != size() * shape_product(input_shape)) {
    throw Error(ErrorKind::kShapeMismatch, "teacher set has " + std::to_string(inputs.size()) +
                                               " input values for " + std::to_string(size()) +
                                               " items of shape " +
                                               shape_to_string(input_shape));
  }
}

TeacherSet teacher_set_from(const EmbeddingDataset& inputs, const EmbeddingDataset& targets) {
  if (inputs.size() != targets.size()) {
    throw Error(ErrorKind::kShapeMismatch, "inputs have " + std::to_string(inputs.size()) +
                                               " items, targets have " +
                                               std::to_string(targets.size()));
  }
  TeacherSet set;
  set.input_shape = Shape{inputs.dim};
  if (inputs.attributes.contains("input_shape")) {
    try {
      set.input_shape = inputs.attributes["input_shape"].get<Shape>();
    } catch (const nlohmann::json::exception&) {
      throw Error(ErrorKind::kConfig, "input_shape attribute must be a list of dimensions");
    }
  }
  if (shape_product(set.input_shape) != inputs.dim) {
    throw Error(ErrorKind::kShapeMismatch, "input_shape " + shape_to_string(set.input_shape) +
                                               " does not match input dim " +
                                               std::to_string(inputs.dim));
  }
  set.inputs = inputs.vectors;
  set.targets = targets;
  return set;
}

EmbeddingDataset inputs_as_dataset(const TeacherSet& set) {
  EmbeddingDataset d(shape_product(set.input_shape));
  d.labels = set.targets.labels;
  d.vectors = set.inputs;
  d.attributes["input_shape"] = set.input_shape;
  return d;
}

void validate(const DistillConfig& c) {
  if (!std::isfinite(c.learning_rate) || c.learning_rate < 0.0) {
    throw Error(ErrorKind::kInvalidHyperparameter, "learning_rate must be finite and >= 0");
  }
  if (c.epochs < 1) throw Error(ErrorKind::kInvalidHyperparameter, "epochs must be >= 1");
  if (c.batch_size < 1) throw Error(ErrorKind::kInvalidHyperparameter, "batch_size must be >= 1");
  infer_shapes(c.student);
}

nlohmann::json to_json(const DistillConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"epochs", c.epochs},
          {"batch_size", c.batch_size},       {"student", to_json(c.student)},
          {"projection", c.projection},       {"seed", c.seed}};
}

double dataset_loss(const Network<float>& student, const TeacherSet& data) {
  double sum = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Tensor y = student.forward(data.input(i));
    sum += mse_feature_loss<float>(y.data(), data.targets.vector(i)).loss;
  }
  return sum / static_cast<double>(data.size());
}

TrainResult train(const DistillConfig& config, const TeacherSet& data) {
  validate(config);
  data.validate();
  if (data.input_shape != config.student.input_shape) {
    throw Error(ErrorKind::kShapeMismatch, "student input " +
                                               shape_to_string(config.student.input_shape) +
                                               " does not match data " +
                                               shape_to_string(data.input_shape));
  }
  const std::size_t student_dim = infer_shapes(config.student).back()[0];
  const std::size_t teacher_dim = data.targets.dim;
  if (student_dim != teacher_dim && !config.projection) {
    throw Error(ErrorKind::kConfig, "student dim " + std::to_string(student_dim) +
                                        " differs from teacher dim " +
                                        std::to_string(teacher_dim) + "; enable projection");
  }
  TrainResult r{Network<float>(config.student, config.projection ? teacher_dim : 0, config.seed),
                {}, 0.0, 0.0};
  Network<float>& net = r.student;
  r.initial_loss = dataset_loss(net, data);

  const std::size_t n = data.size();
  const auto batch = static_cast<std::size_t>(config.batch_size);
  const auto lr = static_cast<float>(config.learning_rate);
  std::vector<std::size_t> order(n);
  std::vector<double> item_loss(n);
  Network<float>::Tape tape;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(config.seed, static_cast<std::uint64_t>(epoch)));
    rng.shuffle(std::span(order));
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t end = std::min(n, start + batch);
      net.zero_grad();
      for (std::size_t b = start; b < end; ++b) {
        const std::size_t item = order[b];
        const Tensor y = net.forward(data.input(item), &tape);
        const LossResult<float> l = mse_feature_loss<float>(y.data(), data.targets.vector(item));
        item_loss[item] = l.loss;
        net.backward(tape, Tensor(y.shape(), l.grad));
      }
      const float scale = lr / static_cast<float>(end - start);
      for (auto& p : net.params()) {
        for (std::size_t i = 0; i < p.value.size(); ++i) p.value[i] -= scale * p.grad[i];
      }
    }
    double sum = 0.0;
    for (double l : item_loss) sum += l;
    const double mean = sum / static_cast<double>(n);
    if (!std::isfinite(mean)) throw DivergenceError(epoch + 1, mean);
    r.loss_curve.push_back(mean);
  }
  r.final_loss = dataset_loss(net, data);
  if (!std::isfinite(r.final_loss)) throw DivergenceError(config.epochs, r.final_loss);
  return r;
}

EmbeddingDataset embed(const Network<float>& student, const TeacherSet& data) {
  EmbeddingDataset out(student.output_dim());
  for (std::size_t i = 0; i < data.size(); ++i) {
    out.push_back(data.targets.labels[i], student.forward(data.input(i)).data());
  }
  return out;
}

SyntheticTeacherTask make_synthetic_teacher(const SyntheticTeacherConfig& c) {
  if (c.classes < 1 || c.train_per_class < 1 || c.heldout_per_class < 0 || c.signal_dims < 1 ||
      c.signal_dims > c.input_dim || c.teacher_dim < 1) {
    throw Error(ErrorKind::kInvalidArgument, "invalid synthetic teacher configuration");
  }
  Rng rng(c.seed);
  std::vector<std::vector<double>> means(static_cast<std::size_t>(c.classes),
                                         std::vector<double>(c.signal_dims));
  for (auto& m : means)
    for (double& v : m) v = c.class_spread * rng.normal();
  std::vector<double> teacher(c.teacher_dim * c.signal_dims);
  const double scale = 1.0 / std::sqrt(static_cast<double>(c.signal_dims));
  for (double& v : teacher) v = scale * rng.normal();

  auto make = [&](int per_class) {
    TeacherSet set;
    set.input_shape = {c.input_dim};
    set.targets = EmbeddingDataset(c.teacher_dim);
    std::vector<float> x(c.input_dim), t(c.teacher_dim);
    for (int i = 0; i < per_class; ++i) {
      for (int k = 0; k < c.classes; ++k) {
        for (std::size_t j = 0; j < c.input_dim; ++j) {
          x[j] = static_cast<float>(j < c.signal_dims ? means[k][j] + c.signal_noise * rng.normal()
                                                      : c.nuisance_std * rng.normal());
        }
        for (std::size_t o = 0; o < c.teacher_dim; ++o) {
          double acc = 0.0;
          for (std::size_t j = 0; j < c.signal_dims; ++j) acc += teacher[o * c.signal_dims + j] * x[j];
          t[o] = static_cast<float>(acc);
        }
        set.inputs.insert(set.inputs.end(), x.begin(), x.end());
        set.targets.push_back(k, t);
      }
    }
    return set;
  };
  SyntheticTeacherTask task{make(c.train_per_class), make(c.heldout_per_class)};
  const nlohmann::json attrs = {{"generator", "synthetic_teacher"},
                                {"classes", c.classes},
                                {"input_dim", c.input_dim},
                                {"signal_dims", c.signal_dims},
                                {"teacher_dim", c.teacher_dim},
                                {"class_spread", c.class_spread},
                                {"signal_noise", c.signal_noise},
                                {"nuisance_std", c.nuisance_std},
                                {"seed", c.seed}};
  task.train.targets.attributes = attrs;
  task.heldout.targets.attributes = attrs;
  return task;
}

}  // namespace fsle
