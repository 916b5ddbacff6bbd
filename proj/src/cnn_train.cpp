#include "neurofuse/cnn/train.hpp"

#include <cmath>
#include <numeric>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "neurofuse/random.hpp"

namespace neurofuse::cnn {

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw Error(ErrorCode::InvalidArgument, "learning_rate must be finite and >= 0");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) throw Error(ErrorCode::InvalidArgument, "momentum must lie in [0, 1)");
  if (epochs < 0) throw Error(ErrorCode::InvalidArgument, "epochs must be >= 0");
  if (batch_size <= 0) throw Error(ErrorCode::InvalidArgument, "batch_size must be positive");
}

template <typename Scalar>
TrainResult<Scalar> train(Network<Scalar> net, std::type_identity_t<std::span<const Example<Scalar>>> data, const TrainConfig& cfg,
                          const std::function<void(const EpochStats&)>& on_epoch) {
  cfg.validate();
  if (data.empty()) throw Error(ErrorCode::SingleClassDataset, "training set is empty");
  std::vector<int> seen(static_cast<std::size_t>(net.spec().classes()), 0);
  for (const auto& ex : data) {
    if (ex.label < 0 || ex.label >= net.spec().classes()) {
      throw Error(ErrorCode::InvalidArgument, fmt::format("sample '{}' has label {} out of range", ex.id, ex.label));
    }
    seen[static_cast<std::size_t>(ex.label)] = 1;
  }
  if (std::accumulate(seen.begin(), seen.end(), 0) < 2) {
    throw Error(ErrorCode::SingleClassDataset, "training set holds a single class");
  }

  using Vector = typename Network<Scalar>::Vector;
  const Scalar lr = static_cast<Scalar>(cfg.learning_rate);
  const Scalar mu = static_cast<Scalar>(cfg.momentum);
  Vector velocity = Vector::Zero(net.parameter_count());
  Vector grad(net.parameter_count());
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(cfg.seed);

  TrainResult<Scalar> result{std::move(net), {}};
  Network<Scalar>& model = result.network;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0.0;
    int correct = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      grad.setZero();
      for (std::size_t k = start; k < stop; ++k) {
        const Example<Scalar>& ex = data[order[k]];
        const auto out = model.forward(ex.inputs, Mode::Train);
        const double loss = static_cast<double>(Network<Scalar>::loss(out, ex.label));
        if (!std::isfinite(loss)) {
          throw Error(ErrorCode::NonFiniteLoss,
                      fmt::format("epoch {}, sample '{}': loss {} (logits {})", epoch, ex.id, loss,
                                  fmt::join(out.cache.logits.data(), out.cache.logits.data() + out.cache.logits.size(),
                                            ", ")));
        }
        loss_sum += loss;
        Eigen::Index pred;
        out.probs.maxCoeff(&pred);
        correct += pred == ex.label;
        model.accumulate_gradient(out, ex.label, grad);
      }
      grad /= static_cast<Scalar>(stop - start);
      velocity = mu * velocity - lr * grad;
      model.parameters() += velocity;
    }
    EpochStats s{epoch, loss_sum / static_cast<double>(data.size()),
                 static_cast<double>(correct) / static_cast<double>(data.size())};
    result.history.push_back(s);
    if (on_epoch) on_epoch(s);
  }
  return result;
}

template <typename Scalar>
Evaluation evaluate(const Network<Scalar>& net, std::type_identity_t<std::span<const Example<Scalar>>> data) {
  const int classes = net.spec().classes();
  Evaluation e;
  e.confusion = Eigen::MatrixXi::Zero(classes, classes);
  int correct = 0;
  for (const auto& ex : data) {
    const auto out = net.forward(ex.inputs, Mode::Infer);
    Eigen::Index pred;
    out.probs.maxCoeff(&pred);
    e.probs.push_back(out.probs.template cast<double>());
    e.predictions.push_back(static_cast<int>(pred));
    if (ex.label >= 0 && ex.label < classes) ++e.confusion(ex.label, pred);
    correct += pred == ex.label;
  }
  e.accuracy = data.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(data.size());
  return e;
}

template TrainResult<float> train(Network<float>, std::span<const Example<float>>, const TrainConfig&,
                                  const std::function<void(const EpochStats&)>&);
template TrainResult<double> train(Network<double>, std::span<const Example<double>>, const TrainConfig&,
                                   const std::function<void(const EpochStats&)>&);
template Evaluation evaluate(const Network<float>&, std::span<const Example<float>>);
template Evaluation evaluate(const Network<double>&, std::span<const Example<double>>);

}  // namespace neurofuse::cnn
