#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include <Eigen/Dense>

#include "neurofuse/cnn/network.hpp"

namespace neurofuse::cnn {

/// SGD with classical momentum on categorical cross-entropy.
struct TrainConfig {
  double learning_rate = 1e-4;
  double momentum = 0.9;
  int epochs = 20;
  int batch_size = 4;
  std::uint64_t seed = 1;

  /// learning_rate >= 0 (0 freezes the weights), 0 <= momentum < 1.
  void validate() const;
};

template <typename Scalar>
struct Example {
  std::vector<Tensor<Scalar>> inputs;  // one per branch
  int label = 0;
  std::string id;
};

struct EpochStats {
  int epoch = 0;
  double loss = 0.0;      // mean over the epoch's training passes
  double accuracy = 0.0;  // argmax agreement during those passes
};

template <typename Scalar>
struct TrainResult {
  Network<Scalar> network;
  std::vector<EpochStats> history;
};

/// Single-threaded and deterministic for a fixed seed. The sample order is
/// reshuffled every epoch; gradients are averaged over each batch. Throws
/// SingleClassDataset, NonFiniteLoss, InvalidArgument.
template <typename Scalar>
TrainResult<Scalar> train(Network<Scalar> net, std::type_identity_t<std::span<const Example<Scalar>>> data, const TrainConfig& cfg,
                          const std::function<void(const EpochStats&)>& on_epoch = {});

struct Evaluation {
  double accuracy = 0.0;
  Eigen::MatrixXi confusion;  // rows true class, columns predicted
  std::vector<Eigen::VectorXd> probs;
  std::vector<int> predictions;
};

template <typename Scalar>
Evaluation evaluate(const Network<Scalar>& net, std::type_identity_t<std::span<const Example<Scalar>>> data);

extern template TrainResult<float> train(Network<float>, std::span<const Example<float>>, const TrainConfig&,
                                         const std::function<void(const EpochStats&)>&);
extern template TrainResult<double> train(Network<double>, std::span<const Example<double>>, const TrainConfig&,
                                          const std::function<void(const EpochStats&)>&);
extern template Evaluation evaluate(const Network<float>&, std::span<const Example<float>>);
extern template Evaluation evaluate(const Network<double>&, std::span<const Example<double>>);

}  // namespace neurofuse::cnn
