#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fsle/model_io.hpp"
#include "fsle/tensor.hpp"

namespace fsle {

// Differentiable op subset available to students.
enum class LayerKind { kLinear, kConv2d, kDepthwiseConv2d, kSilu, kLayerNorm, kGlobalAvgPool, kFlatten };

std::string_view to_string(LayerKind kind);

// Students stay small enough for finite-difference verification.
inline constexpr int kMaxParameterizedLayers = 5;

struct LayerSpec {
  LayerKind kind = LayerKind::kLinear;
  std::size_t out = 0;  // linear out features / conv2d out channels
  int kernel = 3;
  int stride = 1;
  int padding = 1;
};

struct StudentSpec {
  Shape input_shape;  // [features] or [C,H,W]
  std::vector<LayerSpec> layers;
};

// Output shape of every layer, after validation. Op names outside the
// differentiable subset raise kNonDifferentiable.
std::vector<Shape> infer_shapes(const StudentSpec& spec);

nlohmann::json to_json(const StudentSpec& spec);
StudentSpec student_from_json(const nlohmann::json& j);

template <typename T>
struct Parameter {
  std::string name;
  BasicTensor<T> value;
  BasicTensor<T> grad;
};

// Feed-forward student with reverse-mode gradients. Instantiated for float
// (training) and double (finite-difference verification). An optional
// trainable linear projection named "projection" maps the student embedding
// into the teacher space.
template <typename T>
class Network {
 public:
  // Saved layer inputs for backward.
  struct Tape {
    std::vector<BasicTensor<T>> inputs;
  };

  // Weights and biases ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)) drawn in double;
  // layernorm gamma = 1, beta = 0. projection_dim = 0 means no projection.
  Network(StudentSpec spec, std::size_t projection_dim, std::uint64_t seed);

  const StudentSpec& spec() const noexcept { return spec_; }
  std::vector<Parameter<T>>& params() noexcept { return params_; }
  const std::vector<Parameter<T>>& params() const noexcept { return params_; }
  bool has_projection() const noexcept { return projection_dim_ > 0; }
  std::size_t embedding_dim() const;  // student output, before projection
  std::size_t output_dim() const;     // teacher-space output

  // Runs all layers plus the projection when present. With `project` false
  // the student embedding is returned and no tape is recorded.
  BasicTensor<T> forward(const BasicTensor<T>& x, Tape* tape = nullptr, bool project = true) const;

  // Adds parameter gradients for one forward pass into Parameter::grad and
  // returns the gradient with respect to the input.
  BasicTensor<T> backward(const Tape& tape, const BasicTensor<T>& grad_out);

  void zero_grad();

  WeightBundle to_bundle() const;
  void load(const WeightBundle& bundle);

 private:
  struct Layer {
    LayerSpec spec;
    Shape in_shape;
    Shape out_shape;
    std::size_t first_param = 0;
    std::size_t param_count = 0;
  };

  BasicTensor<T> layer_forward(const Layer& layer, const BasicTensor<T>& x) const;
  BasicTensor<T> layer_backward(const Layer& layer, const BasicTensor<T>& x,
                                const BasicTensor<T>& gy);

  StudentSpec spec_;
  std::size_t projection_dim_ = 0;
  std::vector<Layer> layers_;
  std::vector<Parameter<T>> params_;
};

extern template class Network<float>;
extern template class Network<double>;

// Student architecture and projection stored in a bundle's arch document.
Network<float> load_student(const WeightBundle& bundle);

template <typename T>
struct LossResult {
  double loss = 0.0;
  std::vector<T> grad;
};

// loss = (1/D) sum (s - t)^2, grad = (2/D)(s - t).
template <typename T>
LossResult<T> mse_feature_loss(std::span<const T> student, std::span<const T> teacher);

extern template LossResult<float> mse_feature_loss(std::span<const float>, std::span<const float>);
extern template LossResult<double> mse_feature_loss(std::span<const double>, std::span<const double>);

// Precomputed teacher embeddings paired with student inputs. Labels on
// `targets` are optional class ids used for downstream few-shot checks.
struct TeacherSet {
  Shape input_shape;
  std::vector<float> inputs;  // [size(), product(input_shape)]
  EmbeddingDataset targets;

  std::size_t size() const noexcept { return targets.size(); }
  Tensor input(std::size_t i) const;
  void validate() const;
};

// Inputs are stored as an embedding dataset with the per-item shape in the
// "input_shape" attribute.
TeacherSet teacher_set_from(const EmbeddingDataset& inputs, const EmbeddingDataset& targets);
EmbeddingDataset inputs_as_dataset(const TeacherSet& set);

struct DistillConfig {
  double learning_rate = 0.001;
  int epochs = 100;
  int batch_size = 1;
  StudentSpec student;
  // Required when the student embedding and teacher dims differ.
  bool projection = false;
  std::uint64_t seed = 0;
};

void validate(const DistillConfig& config);
nlohmann::json to_json(const DistillConfig& config);

struct TrainResult {
  Network<float> student;
  std::vector<double> loss_curve;  // per-epoch mean of the per-item losses seen while training
  double initial_loss = 0.0;       // full-set mean loss before the first update
  double final_loss = 0.0;         // full-set mean loss after the last update
};

// Plain SGD: each epoch shuffles the items with derive_seed(seed, epoch),
// averages gradients over a batch, and steps every parameter by
// -learning_rate * gradient. Throws DivergenceError on a non-finite loss.
TrainResult train(const DistillConfig& config, const TeacherSet& data);

// Mean per-item loss, items summed in index order.
double dataset_loss(const Network<float>& student, const TeacherSet& data);

// Embeds every input with the student (projection applied when present),
// keeping the target labels.
EmbeddingDataset embed(const Network<float>& student, const TeacherSet& data);

// Synthetic distillation task: `classes` Gaussian clusters living on the
// first `signal_dims` input coordinates, with high-variance nuisance noise on
// the remaining coordinates. The teacher is a fixed linear map of the signal
// coordinates, so a linear student can realize it exactly.
struct SyntheticTeacherConfig {
  int classes = 3;
  int train_per_class = 100;
  int heldout_per_class = 50;
  std::size_t input_dim = 32;
  std::size_t signal_dims = 4;
  std::size_t teacher_dim = 16;
  double class_spread = 1.0;
  double signal_noise = 0.3;
  double nuisance_std = 3.0;
  std::uint64_t seed = 0;
};

struct SyntheticTeacherTask {
  TeacherSet train;
  TeacherSet heldout;
};

SyntheticTeacherTask make_synthetic_teacher(const SyntheticTeacherConfig& config);

}  // namespace fsle
