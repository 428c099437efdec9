#pragma once

#include "causalest/common.hpp"
#include "causalest/estimators.hpp"
#include "causalest/model.hpp"

#include <nlohmann/json_fwd.hpp>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace causalest::learner {

// Trainable causal filter: a stack of LSTM layers feeding a linear readout.
//
// Cell (per layer, gates stacked in the order i, f, g, o):
//   a = W x_t + U h_{t-1} + b
//   i = σ(a_i), f = σ(a_f), g = tanh(a_g), o = σ(a_o)
//   c_t = f ⊙ c_{t-1} + i ⊙ g,   h_t = o ⊙ tanh(c_t)
//
// The prediction for step k reads the top hidden state after the network has
// consumed z̃_0 .. z̃_{k-1}; step 0 sees only the zero initial state.

struct NetShape {
  Index input = 2;
  Index hidden = 10;
  Index output = 2;
  Index layers = 2;

  Index layer_input(Index l) const { return l == 0 ? input : hidden; }
  Index parameter_count() const;
  bool operator==(const NetShape&) const = default;
};

class RecurrentFilterParams {
 public:
  using MatrixMap = Eigen::Map<MatrixXd>;
  using ConstMatrixMap = Eigen::Map<const MatrixXd>;
  using VectorMap = Eigen::Map<VectorXd>;
  using ConstVectorMap = Eigen::Map<const VectorXd>;

  explicit RecurrentFilterParams(NetShape shape);
  RecurrentFilterParams(NetShape shape, VectorXd flat);

  /// PyTorch-style init: every entry uniform in ±1/sqrt(hidden).
  static RecurrentFilterParams random(NetShape shape, std::uint64_t seed, double scale = -1.0);

  const NetShape& shape() const { return shape_; }
  const VectorXd& flat() const { return flat_; }
  VectorXd& flat() { return flat_; }

  ConstMatrixMap W(Index layer) const;  // 4h x in
  ConstMatrixMap U(Index layer) const;  // 4h x h
  ConstVectorMap b(Index layer) const;  // 4h
  ConstMatrixMap readout_W() const;     // out x h
  ConstVectorMap readout_b() const;     // out

  MatrixMap W(Index layer);
  MatrixMap U(Index layer);
  VectorMap b(Index layer);
  MatrixMap readout_W();
  VectorMap readout_b();

  /// Offsets of each named tensor inside flat(), for serialization.
  struct Tensor {
    std::string name;
    Index offset, rows, cols;
  };
  std::vector<Tensor> tensors() const;

 private:
  Index layer_offset(Index layer) const;
  NetShape shape_;
  VectorXd flat_;
};

/// Offline dataset: corrupted measurements in, smoother estimates as labels.
/// True states are kept for evaluation only.
struct Dataset {
  std::vector<MatrixXd> inputs;   // m x N each, z̃
  std::vector<MatrixXd> targets;  // n x N each, x̂_{k|N-1}
  std::vector<MatrixXd> states;   // n x N each, x_k

  std::size_t size() const { return inputs.size(); }
};

Dataset build_dataset(const LinearSystem<double>& sys, const SteadyStateKalman<double>& kal,
                      const Injector<double>& injector, std::size_t count, Index horizon, std::uint64_t seed,
                      int threads = 1);

/// Predictions x̃_{k|k-1}, n x N, for one input sequence.
MatrixXd forward(const RecurrentFilterParams& params, const MatrixXd& inputs);

/// Mean over time of ||pred_k - target_k||^2.
double loss(const MatrixXd& pred, const MatrixXd& target);
/// Mean over sequences and time.
double loss(std::span<const MatrixXd> preds, std::span<const MatrixXd> targets);

struct LossGradient {
  double loss = 0.0;
  VectorXd gradient;
};

/// Loss over the selected sequences and its gradient by backpropagation
/// through time. Sequences are processed in fixed chunks whose partial sums
/// are added in order, so the result does not depend on `threads`.
LossGradient backward(const RecurrentFilterParams& params, const Dataset& data,
                      std::span<const std::size_t> indices, int threads = 1);

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class Adam {
 public:
  Adam(Index size, AdamOptions options);
  void step(VectorXd& params, const VectorXd& grad);
  long steps() const { return t_; }

 private:
  AdamOptions opt_;
  VectorXd m_, v_;
  long t_ = 0;
};

struct TrainingConfig {
  std::size_t batch_size = 320;
  AdamOptions adam{};
  int num_epochs = 80;
  Index sequence_length = 100;  // N, used when the dataset is generated
  std::size_t dataset_size = 4000;
  Index hidden = 10;
  Index layers = 2;
  double clip_norm = 10.0;
  std::uint64_t seed = 0;
  int threads = 1;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double eval_mse_states = 0.0;
  double eval_mse_targets = 0.0;
};

struct TrainResult {
  RecurrentFilterParams params;
  std::vector<EpochRecord> curve;
};

struct Evaluation {
  double mse_states = 0.0;
  double se_states = 0.0;
  double mse_targets = 0.0;
  double se_targets = 0.0;
  std::size_t count = 0;
};

/// Minibatch Adam on the smoother-supervised loss. When `eval` is given it
/// is scored after every epoch for the learning curve. Throws Divergence if
/// an epoch's loss exceeds 1e3 times the initial loss.
TrainResult train(const Dataset& data, const TrainingConfig& config, const Dataset* eval = nullptr);

Evaluation evaluate(const RecurrentFilterParams& params, const Dataset& data, int threads = 1);

/// Model-based filter and smoother errors against the true states on the same data.
struct KalmanBaseline {
  double filter_mse = 0.0, filter_se = 0.0;
  double smoother_mse = 0.0, smoother_se = 0.0;
};
KalmanBaseline kalman_baseline(const SteadyStateKalman<double>& kal, const Dataset& data);

inline constexpr int kParamsFormatVersion = 1;
nlohmann::json to_json(const RecurrentFilterParams& params);
RecurrentFilterParams params_from_json(const nlohmann::json& doc);

}  // namespace causalest::learner
