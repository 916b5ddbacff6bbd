#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "neurofuse/cnn/tensor.hpp"
#include "neurofuse/volume.hpp"

namespace neurofuse::cnn {

inline constexpr int kKernel = 5;
inline constexpr int kKernelVolume = kKernel * kKernel * kKernel;
inline constexpr int kSingleKernels = 20;
inline constexpr int kFusionKernels = 10;

enum class LayerKind { Conv3D, MaxPool3D, Flatten, FullyConnected };
enum class Activation { ReLU, Softmax };

/// Conv3D is 5x5x5, same padding, stride 1, ReLU; MaxPool3D is 2x2x2,
/// stride 2, floor division.
struct LayerSpec {
  LayerKind kind = LayerKind::Flatten;
  int outputs = 0;  // conv channels or dense nodes
  Activation activation = Activation::ReLU;

  static LayerSpec conv(int channels) { return {LayerKind::Conv3D, channels, Activation::ReLU}; }
  static LayerSpec pool() { return {LayerKind::MaxPool3D, 0, Activation::ReLU}; }
  static LayerSpec flatten() { return {LayerKind::Flatten, 0, Activation::ReLU}; }
  static LayerSpec dense(int nodes, Activation a = Activation::ReLU) { return {LayerKind::FullyConnected, nodes, a}; }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

const char* layer_kind_name(LayerKind k) noexcept;

enum class Architecture { SingleModality, Fusion };

const char* architecture_name(Architecture a) noexcept;
Architecture parse_architecture(std::string_view name);

/// Channels and spatial dims of a feature map, or a flat vector.
struct FeatureShape {
  int channels = 1;
  Dims dims{1, 1, 1};
  bool flat = false;

  Eigen::Index size() const {
    return flat ? channels : static_cast<Eigen::Index>(channels) * dims[0] * dims[1] * dims[2];
  }
};

struct NetworkSpec {
  Architecture architecture = Architecture::SingleModality;
  Dims input_dims{8, 8, 8};
  std::vector<std::vector<LayerSpec>> branches;
  std::optional<LayerSpec> merge;
  LayerSpec head = LayerSpec::dense(2, Activation::Softmax);

  int classes() const { return head.outputs; }

  /// Throws InvalidArgument for malformed graphs and InputTooSmall when a
  /// pool would shrink a dim to zero.
  void validate() const;
};

NetworkSpec build_single_modality(const Dims& input_dims, int classes = 2);
NetworkSpec build_fusion(const Dims& input_dims, int classes = 2);

/// Learnable scalars: kernels, conv biases, dense weights and biases.
std::int64_t count_parameters(const NetworkSpec& net);
std::int64_t count_parameters(const NetworkSpec& net, const Dims& input_dims);

/// Output shape of every layer of a branch for the given input.
std::vector<FeatureShape> branch_shapes(const std::vector<LayerSpec>& branch, const Dims& input_dims);

enum class Mode { Train, Infer };

/// One learnable array in the flat parameter vector.
struct ParamBlock {
  std::string name;
  Eigen::Index offset = 0;
  Eigen::Index size = 0;
  LayerKind kind = LayerKind::Conv3D;
  bool bias = false;
};

template <typename Scalar>
class Network {
 public:
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using Buffer = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  struct Cache {
    // acts[b][l] is the input of layer l of branch b; the last entry is the branch output
    std::vector<std::vector<Buffer>> acts;
    std::vector<std::vector<std::vector<std::int32_t>>> argmax;
    Buffer joined;  // concatenated branch outputs
    Buffer merged;  // merge layer output, if any
    Vector logits;
  };

  struct Output {
    Vector probs;
    Cache cache;
  };

  /// All parameters zero.
  explicit Network(NetworkSpec spec);
  /// He-uniform weights scaled by fan-in, zero biases, drawn in declaration order.
  Network(NetworkSpec spec, std::uint64_t seed);

  const NetworkSpec& spec() const { return spec_; }
  const std::vector<ParamBlock>& blocks() const { return blocks_; }
  Vector& parameters() { return params_; }
  const Vector& parameters() const { return params_; }
  Eigen::Index parameter_count() const { return params_.size(); }

  template <typename T>
  Network<T> cast() const {
    Network<T> out(spec_);
    out.parameters() = params_.template cast<T>();
    return out;
  }

  /// Throws ShapeMismatch when the inputs do not match the branches.
  Output forward(std::span<const Tensor<Scalar>> inputs, Mode mode = Mode::Infer) const;
  /// -log probs[target].
  static Scalar loss(const Output& out, int target);
  /// Cross-entropy gradient for one sample, added into `grad`.
  void accumulate_gradient(const Output& out, int target, Vector& grad) const;
  Vector backward(const Output& out, int target) const;

 private:
  struct Layer {
    LayerSpec spec;
    FeatureShape in, out;
    Eigen::Index weights = 0, bias = 0;  // offsets into params_
    Eigen::Index weight_count = 0, bias_count = 0;
    bool needs_input_grad = true;
  };

  void compile();
  Layer make_layer(const LayerSpec& s, const FeatureShape& in, const std::string& name);
  void dense_forward(const Layer& l, const Buffer& x, Buffer& y) const;

  NetworkSpec spec_;
  std::vector<std::vector<Layer>> branches_;
  std::optional<Layer> merge_;
  Layer head_;
  std::vector<ParamBlock> blocks_;
  Vector params_;
};

extern template class Network<float>;
extern template class Network<double>;

}  // namespace neurofuse::cnn
