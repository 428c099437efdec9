#include "causalest/learner.hpp"

#include "causalest/parallel.hpp"
#include "causalest/rng.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace causalest::learner {

namespace {

// Sequences per gradient chunk. Partial sums are combined in chunk order.
constexpr std::size_t kChunk = 32;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::pair<double, double> mean_and_se(const std::vector<double>& xs) {
  const double n = static_cast<double>(xs.size());
  const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  if (xs.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / (n - 1.0) / n)};
}

// Activations of one chunk for every layer and step. Step 0 holds the zero
// initial state; step s >= 1 is the state after consuming z̃_{s-1}.
struct Workspace {
  std::vector<std::vector<MatrixXd>> gates;  // [layer][step], 4h x B, post-activation
  std::vector<std::vector<MatrixXd>> cell;   // h x B
  std::vector<std::vector<MatrixXd>> cell_tanh;
  std::vector<std::vector<MatrixXd>> hidden;
  std::vector<MatrixXd> inputs;   // [step-1], m x B
  std::vector<MatrixXd> outputs;  // [k], n x B
  Index batch = 0, steps = 0;

  void run(const RecurrentFilterParams& p, const std::vector<const MatrixXd*>& seqs) {
    const NetShape& sh = p.shape();
    const Index h = sh.hidden, L = sh.layers;
    batch = static_cast<Index>(seqs.size());
    const Index N = seqs.front()->cols();
    steps = N - 1;

    inputs.assign(steps, MatrixXd(sh.input, batch));
    for (Index s = 0; s < steps; ++s)
      for (Index j = 0; j < batch; ++j) inputs[s].col(j) = seqs[j]->col(s);

    gates.assign(L, std::vector<MatrixXd>(steps + 1));
    cell.assign(L, std::vector<MatrixXd>(steps + 1, MatrixXd::Zero(h, batch)));
    cell_tanh.assign(L, std::vector<MatrixXd>(steps + 1, MatrixXd::Zero(h, batch)));
    hidden.assign(L, std::vector<MatrixXd>(steps + 1, MatrixXd::Zero(h, batch)));
    outputs.assign(N, MatrixXd(sh.output, batch));

    for (Index s = 1; s <= steps; ++s) {
      for (Index l = 0; l < L; ++l) {
        const MatrixXd& x = l == 0 ? inputs[s - 1] : hidden[l - 1][s];
        MatrixXd& a = gates[l][s];
        a.noalias() = p.W(l) * x;
        a.noalias() += p.U(l) * hidden[l][s - 1];
        a.colwise() += p.b(l);
        a.topRows(2 * h) = a.topRows(2 * h).unaryExpr(&sigmoid);
        a.middleRows(2 * h, h).array() = a.middleRows(2 * h, h).array().tanh();
        a.bottomRows(h) = a.bottomRows(h).unaryExpr(&sigmoid);
        cell[l][s] = a.middleRows(h, h).cwiseProduct(cell[l][s - 1]) +
                     a.topRows(h).cwiseProduct(a.middleRows(2 * h, h));
        cell_tanh[l][s].array() = cell[l][s].array().tanh();
        hidden[l][s] = a.bottomRows(h).cwiseProduct(cell_tanh[l][s]);
      }
    }
    for (Index k = 0; k < N; ++k) {
      outputs[k].noalias() = p.readout_W() * hidden[L - 1][k];
      outputs[k].colwise() += p.readout_b();
    }
  }

  /// Accumulates d(scale * sum of squared errors)/dθ into grad; returns the
  /// unscaled sum of squared errors.
  double backprop(const RecurrentFilterParams& p, const std::vector<const MatrixXd*>& targets, double scale,
                  RecurrentFilterParams& grad) const {
    const NetShape& sh = p.shape();
    const Index h = sh.hidden, L = sh.layers;
    const Index N = steps + 1;

    double sse = 0.0;
    std::vector<MatrixXd> dy(N, MatrixXd(sh.output, batch));
    for (Index k = 0; k < N; ++k) {
      for (Index j = 0; j < batch; ++j) dy[k].col(j) = outputs[k].col(j) - targets[j]->col(k);
      sse += dy[k].squaredNorm();
      dy[k] *= 2.0 * scale;
      grad.readout_W().noalias() += dy[k] * hidden[L - 1][k].transpose();
      grad.readout_b() += dy[k].rowwise().sum();
    }

    std::vector<MatrixXd> dh_rec(L, MatrixXd::Zero(h, batch)), dc_rec(L, MatrixXd::Zero(h, batch));
    MatrixXd dh(h, batch), dc(h, batch), da(4 * h, batch), dx_below;
    for (Index s = steps; s >= 1; --s) {
      for (Index l = L - 1; l >= 0; --l) {
        dh = dh_rec[l];
        if (l == L - 1)
          dh.noalias() += p.readout_W().transpose() * dy[s];
        else
          dh += dx_below;

        const MatrixXd& a = gates[l][s];
        const auto i = a.topRows(h).array();
        const auto f = a.middleRows(h, h).array();
        const auto g = a.middleRows(2 * h, h).array();
        const auto o = a.bottomRows(h).array();
        const auto tc = cell_tanh[l][s].array();

        dc.array() = dc_rec[l].array() + dh.array() * o * (1.0 - tc.square());
        da.topRows(h).array() = dc.array() * g * i * (1.0 - i);
        da.middleRows(h, h).array() = dc.array() * cell[l][s - 1].array() * f * (1.0 - f);
        da.middleRows(2 * h, h).array() = dc.array() * i * (1.0 - g.square());
        da.bottomRows(h).array() = dh.array() * tc * o * (1.0 - o);

        const MatrixXd& x = l == 0 ? inputs[s - 1] : hidden[l - 1][s];
        grad.W(l).noalias() += da * x.transpose();
        grad.U(l).noalias() += da * hidden[l][s - 1].transpose();
        grad.b(l) += da.rowwise().sum();

        dh_rec[l].noalias() = p.U(l).transpose() * da;
        dc_rec[l] = dc.cwiseProduct(a.middleRows(h, h));
        if (l > 0) dx_below.noalias() = p.W(l).transpose() * da;
      }
    }
    return sse;
  }
};

void check_input(const RecurrentFilterParams& p, const MatrixXd& z) {
  detail::require(z.rows() == p.shape().input, ErrorCode::DimensionMismatch,
                  "input dimension does not match the network");
  detail::require(z.cols() >= 1, ErrorCode::InvalidArgument, "empty input sequence");
}

void check_dataset(const Dataset& data) {
  detail::require(data.size() > 0, ErrorCode::InvalidArgument, "dataset is empty");
  detail::require(data.targets.size() == data.size() && data.states.size() == data.size(),
                  ErrorCode::LengthMismatch, "dataset fields differ in length");
  const Index N = data.inputs.front().cols();
  for (std::size_t i = 0; i < data.size(); ++i)
    detail::require(data.inputs[i].cols() == N && data.targets[i].cols() == N && data.states[i].cols() == N,
                    ErrorCode::LengthMismatch, "dataset sequences must share one length");
}

template <typename Fn>
void for_each_chunk(std::span<const std::size_t> indices, int threads, Fn&& fn) {
  const std::size_t chunks = (indices.size() + kChunk - 1) / kChunk;
  parallel_for(chunks, threads, [&](std::size_t c) {
    const std::size_t lo = c * kChunk, hi = std::min(indices.size(), lo + kChunk);
    fn(c, indices.subspan(lo, hi - lo));
  });
}

}  // namespace

Index NetShape::parameter_count() const {
  Index total = output * hidden + output;
  for (Index l = 0; l < layers; ++l) total += 4 * hidden * (layer_input(l) + hidden + 1);
  return total;
}

RecurrentFilterParams::RecurrentFilterParams(NetShape shape)
    : RecurrentFilterParams(shape, VectorXd::Zero(shape.parameter_count())) {}

RecurrentFilterParams::RecurrentFilterParams(NetShape shape, VectorXd flat) : shape_(shape), flat_(std::move(flat)) {
  detail::require(shape_.input > 0 && shape_.hidden > 0 && shape_.output > 0 && shape_.layers > 0,
                  ErrorCode::InvalidArgument, "network dimensions must be positive");
  detail::require(flat_.size() == shape_.parameter_count(), ErrorCode::DimensionMismatch,
                  "parameter vector length does not match the shape");
  detail::require(flat_.allFinite(), ErrorCode::InvalidArgument, "parameters must be finite");
}

RecurrentFilterParams RecurrentFilterParams::random(NetShape shape, std::uint64_t seed, double scale) {
  if (scale < 0.0) scale = 1.0 / std::sqrt(static_cast<double>(shape.hidden));
  RecurrentFilterParams p(shape);
  Rng rng(seed);
  for (Index i = 0; i < p.flat_.size(); ++i) p.flat_[i] = rng.uniform(-scale, scale);
  return p;
}

Index RecurrentFilterParams::layer_offset(Index layer) const {
  Index off = 0;
  for (Index l = 0; l < layer; ++l) off += 4 * shape_.hidden * (shape_.layer_input(l) + shape_.hidden + 1);
  return off;
}

std::vector<RecurrentFilterParams::Tensor> RecurrentFilterParams::tensors() const {
  std::vector<Tensor> out;
  const Index h4 = 4 * shape_.hidden;
  for (Index l = 0; l < shape_.layers; ++l) {
    const Index off = layer_offset(l), in = shape_.layer_input(l);
    const std::string pre = "lstm" + std::to_string(l) + ".";
    out.push_back({pre + "W", off, h4, in});
    out.push_back({pre + "U", off + h4 * in, h4, shape_.hidden});
    out.push_back({pre + "b", off + h4 * (in + shape_.hidden), h4, 1});
  }
  const Index off = layer_offset(shape_.layers);
  out.push_back({"readout.W", off, shape_.output, shape_.hidden});
  out.push_back({"readout.b", off + shape_.output * shape_.hidden, shape_.output, 1});
  return out;
}

RecurrentFilterParams::ConstMatrixMap RecurrentFilterParams::W(Index l) const {
  return {flat_.data() + layer_offset(l), 4 * shape_.hidden, shape_.layer_input(l)};
}
RecurrentFilterParams::ConstMatrixMap RecurrentFilterParams::U(Index l) const {
  return {flat_.data() + layer_offset(l) + 4 * shape_.hidden * shape_.layer_input(l), 4 * shape_.hidden,
          shape_.hidden};
}
RecurrentFilterParams::ConstVectorMap RecurrentFilterParams::b(Index l) const {
  return {flat_.data() + layer_offset(l) + 4 * shape_.hidden * (shape_.layer_input(l) + shape_.hidden),
          4 * shape_.hidden};
}
RecurrentFilterParams::ConstMatrixMap RecurrentFilterParams::readout_W() const {
  return {flat_.data() + layer_offset(shape_.layers), shape_.output, shape_.hidden};
}
RecurrentFilterParams::ConstVectorMap RecurrentFilterParams::readout_b() const {
  return {flat_.data() + layer_offset(shape_.layers) + shape_.output * shape_.hidden, shape_.output};
}

RecurrentFilterParams::MatrixMap RecurrentFilterParams::W(Index l) {
  return {flat_.data() + layer_offset(l), 4 * shape_.hidden, shape_.layer_input(l)};
}
RecurrentFilterParams::MatrixMap RecurrentFilterParams::U(Index l) {
  return {flat_.data() + layer_offset(l) + 4 * shape_.hidden * shape_.layer_input(l), 4 * shape_.hidden,
          shape_.hidden};
}
RecurrentFilterParams::VectorMap RecurrentFilterParams::b(Index l) {
  return {flat_.data() + layer_offset(l) + 4 * shape_.hidden * (shape_.layer_input(l) + shape_.hidden),
          4 * shape_.hidden};
}
RecurrentFilterParams::MatrixMap RecurrentFilterParams::readout_W() {
  return {flat_.data() + layer_offset(shape_.layers), shape_.output, shape_.hidden};
}
RecurrentFilterParams::VectorMap RecurrentFilterParams::readout_b() {
  return {flat_.data() + layer_offset(shape_.layers) + shape_.output * shape_.hidden, shape_.output};
}

Dataset build_dataset(const LinearSystem<double>& sys, const SteadyStateKalman<double>& kal,
                      const Injector<double>& injector, std::size_t count, Index horizon, std::uint64_t seed,
                      int threads) {
  detail::require(count >= 1, ErrorCode::InvalidArgument, "dataset size must be positive");
  detail::require(horizon >= 1, ErrorCode::InvalidArgument, "sequence length must be positive");
  const auto init = InitialState<double>::stationary(stationary_state_covariance(sys));
  Dataset data;
  data.inputs.resize(count);
  data.targets.resize(count);
  data.states.resize(count);
  parallel_for(count, threads, [&](std::size_t i) {
    auto traj = simulate(sys, horizon, init, injector, derive_seed(seed, "learner/dataset", i));
    data.targets[i] = smoother_run_recursive(kal, traj.corrupted).values;
    data.inputs[i] = std::move(traj.corrupted);
    data.states[i] = std::move(traj.states);
  });
  return data;
}

MatrixXd forward(const RecurrentFilterParams& params, const MatrixXd& inputs) {
  check_input(params, inputs);
  Workspace ws;
  ws.run(params, {&inputs});
  MatrixXd out(params.shape().output, inputs.cols());
  for (Index k = 0; k < inputs.cols(); ++k) out.col(k) = ws.outputs[k];
  return out;
}

double loss(const MatrixXd& pred, const MatrixXd& target) {
  detail::require(pred.rows() == target.rows() && pred.cols() == target.cols(), ErrorCode::LengthMismatch,
                  "prediction and target differ in shape");
  detail::require(pred.cols() >= 1, ErrorCode::InvalidArgument, "empty sequence");
  return (pred - target).squaredNorm() / static_cast<double>(pred.cols());
}

double loss(std::span<const MatrixXd> preds, std::span<const MatrixXd> targets) {
  detail::require(preds.size() == targets.size() && !preds.empty(), ErrorCode::LengthMismatch,
                  "prediction and target batches differ in size");
  double total = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) total += loss(preds[i], targets[i]);
  return total / static_cast<double>(preds.size());
}

LossGradient backward(const RecurrentFilterParams& params, const Dataset& data,
                      std::span<const std::size_t> indices, int threads) {
  detail::require(!indices.empty(), ErrorCode::InvalidArgument, "empty batch");
  for (std::size_t idx : indices) {
    detail::require(idx < data.size(), ErrorCode::InvalidArgument, "batch index out of range");
    check_input(params, data.inputs[idx]);
  }
  const Index N = data.inputs[indices.front()].cols();
  for (std::size_t idx : indices)
    detail::require(data.inputs[idx].cols() == N && data.targets[idx].cols() == N &&
                        data.targets[idx].rows() == params.shape().output,
                    ErrorCode::LengthMismatch, "batch sequences must share one length");
  const double scale = 1.0 / (static_cast<double>(indices.size()) * static_cast<double>(N));

  const std::size_t chunks = (indices.size() + kChunk - 1) / kChunk;
  std::vector<RecurrentFilterParams> grads(chunks, RecurrentFilterParams(params.shape()));
  std::vector<double> sse(chunks, 0.0);
  for_each_chunk(indices, threads, [&](std::size_t c, std::span<const std::size_t> part) {
    std::vector<const MatrixXd*> in, tgt;
    for (std::size_t idx : part) {
      in.push_back(&data.inputs[idx]);
      tgt.push_back(&data.targets[idx]);
    }
    Workspace ws;
    ws.run(params, in);
    sse[c] = ws.backprop(params, tgt, scale, grads[c]);
  });

  LossGradient out{0.0, VectorXd::Zero(params.flat().size())};
  for (std::size_t c = 0; c < chunks; ++c) {
    out.loss += sse[c];
    out.gradient += grads[c].flat();
  }
  out.loss *= scale;
  return out;
}

Adam::Adam(Index size, AdamOptions options)
    : opt_(options), m_(VectorXd::Zero(size)), v_(VectorXd::Zero(size)) {
  detail::require(opt_.learning_rate > 0.0 && opt_.epsilon > 0.0 && opt_.beta1 >= 0.0 && opt_.beta1 < 1.0 &&
                      opt_.beta2 >= 0.0 && opt_.beta2 < 1.0,
                  ErrorCode::InvalidArgument, "invalid Adam hyperparameters");
}

void Adam::step(VectorXd& params, const VectorXd& grad) {
  detail::require(params.size() == m_.size() && grad.size() == m_.size(), ErrorCode::DimensionMismatch,
                  "Adam state and parameter sizes differ");
  ++t_;
  m_ = opt_.beta1 * m_ + (1.0 - opt_.beta1) * grad;
  v_ = opt_.beta2 * v_ + (1.0 - opt_.beta2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
  params.array() -= opt_.learning_rate * (m_.array() / c1) / ((v_.array() / c2).sqrt() + opt_.epsilon);
}

TrainResult train(const Dataset& data, const TrainingConfig& config, const Dataset* eval) {
  check_dataset(data);
  detail::require(config.batch_size > 0 && config.num_epochs > 0 && config.hidden > 0 && config.layers > 0 &&
                      config.clip_norm > 0.0,
                  ErrorCode::InvalidArgument, "training configuration must be positive");
  const NetShape shape{data.inputs.front().rows(), config.hidden, data.targets.front().rows(), config.layers};
  TrainResult result{RecurrentFilterParams::random(shape, derive_seed(config.seed, "learner/init")), {}};
  Adam adam(shape.parameter_count(), config.adam);

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  double initial_loss = -1.0;
  for (int epoch = 1; epoch <= config.num_epochs; ++epoch) {
    std::mt19937_64 shuffler(derive_seed(config.seed, "learner/shuffle", static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), shuffler);

    double weighted = 0.0;
    for (std::size_t lo = 0; lo < order.size(); lo += config.batch_size) {
      const std::size_t hi = std::min(order.size(), lo + config.batch_size);
      const std::span<const std::size_t> batch(order.data() + lo, hi - lo);
      LossGradient lg = backward(result.params, data, batch, config.threads);
      detail::require(std::isfinite(lg.loss) && lg.gradient.allFinite(), ErrorCode::Divergence,
                      "training produced a non-finite loss or gradient");
      if (initial_loss < 0.0) initial_loss = lg.loss;
      weighted += lg.loss * static_cast<double>(batch.size());

      const double norm = lg.gradient.norm();
      if (norm > config.clip_norm) lg.gradient *= config.clip_norm / norm;
      adam.step(result.params.flat(), lg.gradient);
    }
    const double epoch_loss = weighted / static_cast<double>(order.size());
    detail::require(epoch_loss <= 1e3 * initial_loss, ErrorCode::Divergence,
                    "training loss exceeded 1000x its initial value");

    EpochRecord rec{epoch, epoch_loss, std::nan(""), std::nan("")};
    if (eval) {
      const Evaluation ev = evaluate(result.params, *eval, config.threads);
      rec.eval_mse_states = ev.mse_states;
      rec.eval_mse_targets = ev.mse_targets;
    }
    result.curve.push_back(rec);
  }
  return result;
}

Evaluation evaluate(const RecurrentFilterParams& params, const Dataset& data, int threads) {
  check_dataset(data);
  std::vector<std::size_t> all(data.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  std::vector<double> vs_states(data.size()), vs_targets(data.size());
  for_each_chunk(std::span<const std::size_t>(all), threads, [&](std::size_t, std::span<const std::size_t> part) {
    std::vector<const MatrixXd*> in;
    for (std::size_t idx : part) {
      check_input(params, data.inputs[idx]);
      in.push_back(&data.inputs[idx]);
    }
    Workspace ws;
    ws.run(params, in);
    const Index N = data.inputs[part.front()].cols();
    for (std::size_t j = 0; j < part.size(); ++j) {
      double es = 0.0, et = 0.0;
      for (Index k = 0; k < N; ++k) {
        es += (ws.outputs[k].col(j) - data.states[part[j]].col(k)).squaredNorm();
        et += (ws.outputs[k].col(j) - data.targets[part[j]].col(k)).squaredNorm();
      }
      vs_states[part[j]] = es / static_cast<double>(N);
      vs_targets[part[j]] = et / static_cast<double>(N);
    }
  });
  Evaluation ev;
  std::tie(ev.mse_states, ev.se_states) = mean_and_se(vs_states);
  std::tie(ev.mse_targets, ev.se_targets) = mean_and_se(vs_targets);
  ev.count = data.size();
  return ev;
}

KalmanBaseline kalman_baseline(const SteadyStateKalman<double>& kal, const Dataset& data) {
  check_dataset(data);
  std::vector<double> filt(data.size()), smth(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    filt[i] = loss(filter_run(kal, data.inputs[i]).values, data.states[i]);
    smth[i] = loss(data.targets[i], data.states[i]);
  }
  KalmanBaseline out;
  std::tie(out.filter_mse, out.filter_se) = mean_and_se(filt);
  std::tie(out.smoother_mse, out.smoother_se) = mean_and_se(smth);
  return out;
}

nlohmann::json to_json(const RecurrentFilterParams& params) {
  const NetShape& sh = params.shape();
  nlohmann::json doc;
  doc["format"] = "causalest.recurrent_filter";
  doc["version"] = kParamsFormatVersion;
  doc["cell"] = "lstm";
  doc["gate_order"] = "i,f,g,o";
  doc["storage"] = "column-major";
  doc["shape"] = {{"input", sh.input}, {"hidden", sh.hidden}, {"output", sh.output}, {"layers", sh.layers}};
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& t : params.tensors()) {
    std::vector<double> values(params.flat().data() + t.offset, params.flat().data() + t.offset + t.rows * t.cols);
    tensors.push_back({{"name", t.name}, {"rows", t.rows}, {"cols", t.cols}, {"values", std::move(values)}});
  }
  doc["tensors"] = std::move(tensors);
  return doc;
}

RecurrentFilterParams params_from_json(const nlohmann::json& doc) {
  try {
    detail::require(doc.at("format").get<std::string>() == "causalest.recurrent_filter", ErrorCode::Io,
                    "not a recurrent filter document");
    detail::require(doc.at("version").get<int>() == kParamsFormatVersion, ErrorCode::Io,
                    "unsupported parameter format version");
    const auto& s = doc.at("shape");
    const NetShape shape{s.at("input").get<Index>(), s.at("hidden").get<Index>(), s.at("output").get<Index>(),
                         s.at("layers").get<Index>()};
    RecurrentFilterParams params(shape);
    const auto expected = params.tensors();
    const auto& tensors = doc.at("tensors");
    detail::require(tensors.size() == expected.size(), ErrorCode::Io, "wrong number of tensors");
    for (std::size_t i = 0; i < expected.size(); ++i) {
      const auto& t = tensors[i];
      const auto& e = expected[i];
      detail::require(t.at("name").get<std::string>() == e.name && t.at("rows").get<Index>() == e.rows &&
                          t.at("cols").get<Index>() == e.cols,
                      ErrorCode::Io, "tensor metadata mismatch at " + e.name);
      const auto values = t.at("values").get<std::vector<double>>();
      detail::require(static_cast<Index>(values.size()) == e.rows * e.cols, ErrorCode::Io,
                      "tensor length mismatch at " + e.name);
      std::copy(values.begin(), values.end(), params.flat().data() + e.offset);
    }
    detail::require(params.flat().allFinite(), ErrorCode::Io, "non-finite parameter");
    return params;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Io, std::string("malformed parameter document: ") + e.what());
  }
}

}  // namespace causalest::learner
