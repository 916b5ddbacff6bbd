#include "neurofuse/cnn/network.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "neurofuse/random.hpp"

namespace neurofuse::cnn {

namespace {

constexpr int kPad = kKernel / 2;
// im2col scratch is built in z-slabs of at most this many elements
constexpr Eigen::Index kColumnBudget = Eigen::Index(1) << 23;

template <typename Scalar>
using RowMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::Index plane_of(const Dims& d) { return static_cast<Eigen::Index>(d[0]) * d[1]; }
Eigen::Index voxels_of(const Dims& d) { return plane_of(d) * d[2]; }

int slab_planes(Eigen::Index rows, const Dims& d) {
  const Eigen::Index p = kColumnBudget / std::max<Eigen::Index>(1, rows * plane_of(d));
  return static_cast<int>(std::clamp<Eigen::Index>(p, 1, d[2]));
}

// Row (c, kz, ky, kx) of the column matrix is channel c shifted by the kernel
// offset, so each row fills with contiguous copies along x.
template <typename Scalar>
void im2col(const Scalar* x, int cin, const Dims& d, int z0, int nz, RowMat<Scalar>& cols) {
  const int nx = d[0], ny = d[1];
  const Eigen::Index plane = plane_of(d), vox = voxels_of(d);
  const Eigen::Index width = plane * nz;
  cols.resize(static_cast<Eigen::Index>(cin) * kKernelVolume, width);
  for (int c = 0; c < cin; ++c)
    for (int kz = 0; kz < kKernel; ++kz)
      for (int ky = 0; ky < kKernel; ++ky)
        for (int kx = 0; kx < kKernel; ++kx) {
          const Eigen::Index row = static_cast<Eigen::Index>(c) * kKernelVolume + (kz * kKernel + ky) * kKernel + kx;
          Scalar* dst = cols.data() + row * width;
          const int dz = kz - kPad, dy = ky - kPad, dx = kx - kPad;
          const int lo = std::max(0, -dx), hi = std::min(nx, nx - dx);
          for (int z = 0; z < nz; ++z) {
            const int zs = z0 + z + dz;
            for (int y = 0; y < ny; ++y) {
              Scalar* o = dst + (static_cast<Eigen::Index>(z) * ny + y) * nx;
              const int ys = y + dy;
              if (zs < 0 || zs >= d[2] || ys < 0 || ys >= ny) {
                std::fill(o, o + nx, Scalar(0));
                continue;
              }
              const Scalar* src = x + c * vox + zs * plane + static_cast<Eigen::Index>(ys) * nx + dx;
              std::fill(o, o + lo, Scalar(0));
              std::copy(src + lo, src + hi, o + lo);
              std::fill(o + hi, o + nx, Scalar(0));
            }
          }
        }
}

template <typename Scalar>
void col2im_add(const RowMat<Scalar>& cols, int cin, const Dims& d, int z0, int nz, Scalar* x) {
  const int nx = d[0], ny = d[1];
  const Eigen::Index plane = plane_of(d), vox = voxels_of(d);
  const Eigen::Index width = plane * nz;
  for (int c = 0; c < cin; ++c)
    for (int kz = 0; kz < kKernel; ++kz)
      for (int ky = 0; ky < kKernel; ++ky)
        for (int kx = 0; kx < kKernel; ++kx) {
          const Eigen::Index row = static_cast<Eigen::Index>(c) * kKernelVolume + (kz * kKernel + ky) * kKernel + kx;
          const Scalar* src = cols.data() + row * width;
          const int dz = kz - kPad, dy = ky - kPad, dx = kx - kPad;
          const int lo = std::max(0, -dx), hi = std::min(nx, nx - dx);
          for (int z = 0; z < nz; ++z) {
            const int zs = z0 + z + dz;
            if (zs < 0 || zs >= d[2]) continue;
            for (int y = 0; y < ny; ++y) {
              const int ys = y + dy;
              if (ys < 0 || ys >= ny) continue;
              const Scalar* s = src + (static_cast<Eigen::Index>(z) * ny + y) * nx;
              Scalar* o = x + c * vox + zs * plane + static_cast<Eigen::Index>(ys) * nx + dx;
              for (int i = lo; i < hi; ++i) o[i] += s[i];
            }
          }
        }
}

template <typename Scalar>
void conv_forward(const Scalar* w, const Scalar* b, int cin, int cout, const Dims& d,
                  const Eigen::Array<Scalar, Eigen::Dynamic, 1>& x, Eigen::Array<Scalar, Eigen::Dynamic, 1>& y) {
  const Eigen::Index vox = voxels_of(d), plane = plane_of(d);
  const Eigen::Index k = static_cast<Eigen::Index>(cin) * kKernelVolume;
  y.resize(cout * vox);
  Eigen::Map<const RowMat<Scalar>> wm(w, cout, k);
  Eigen::Map<RowMat<Scalar>> ym(y.data(), cout, vox);
  RowMat<Scalar> cols;
  const int step = slab_planes(k, d);
  for (int z0 = 0; z0 < d[2]; z0 += step) {
    const int nz = std::min(step, d[2] - z0);
    im2col(x.data(), cin, d, z0, nz, cols);
    ym.middleCols(z0 * plane, nz * plane).noalias() = wm * cols;
  }
  for (int c = 0; c < cout; ++c) ym.row(c) = (ym.row(c).array() + b[c]).max(Scalar(0)).matrix();
}

// dy is masked in place by the ReLU derivative.
template <typename Scalar>
void conv_backward(const Scalar* w, int cin, int cout, const Dims& d, const Eigen::Array<Scalar, Eigen::Dynamic, 1>& x,
                   const Eigen::Array<Scalar, Eigen::Dynamic, 1>& y, Eigen::Array<Scalar, Eigen::Dynamic, 1>& dy,
                   Scalar* gw, Scalar* gb, Eigen::Array<Scalar, Eigen::Dynamic, 1>* dx) {
  const Eigen::Index vox = voxels_of(d), plane = plane_of(d);
  const Eigen::Index k = static_cast<Eigen::Index>(cin) * kKernelVolume;
  dy = (y > Scalar(0)).select(dy, Scalar(0));
  Eigen::Map<const RowMat<Scalar>> wm(w, cout, k);
  Eigen::Map<const RowMat<Scalar>> dz(dy.data(), cout, vox);
  Eigen::Map<RowMat<Scalar>> gwm(gw, cout, k);
  Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(gb, cout) += dz.rowwise().sum();
  if (dx) *dx = Eigen::Array<Scalar, Eigen::Dynamic, 1>::Zero(cin * vox);
  RowMat<Scalar> cols, dcols;
  const int step = slab_planes(k, d);
  for (int z0 = 0; z0 < d[2]; z0 += step) {
    const int nz = std::min(step, d[2] - z0);
    const auto dzs = dz.middleCols(z0 * plane, nz * plane);
    im2col(x.data(), cin, d, z0, nz, cols);
    gwm.noalias() += dzs * cols.transpose();
    if (dx) {
      dcols.noalias() = wm.transpose() * dzs;
      col2im_add(dcols, cin, d, z0, nz, dx->data());
    }
  }
}

template <typename Scalar>
void pool_forward(int channels, const Dims& d, const Eigen::Array<Scalar, Eigen::Dynamic, 1>& x,
                  Eigen::Array<Scalar, Eigen::Dynamic, 1>& y, std::vector<std::int32_t>& idx) {
  const Dims o{d[0] / 2, d[1] / 2, d[2] / 2};
  const Eigen::Index vox = voxels_of(d), plane = plane_of(d), ovox = voxels_of(o);
  y.resize(channels * ovox);
  idx.resize(static_cast<std::size_t>(channels * ovox));
  const Eigen::Index offsets[8] = {0, 1, d[0], d[0] + 1, plane, plane + 1, plane + d[0], plane + d[0] + 1};
  Eigen::Index n = 0;
  for (int c = 0; c < channels; ++c)
    for (int z = 0; z < o[2]; ++z)
      for (int yy = 0; yy < o[1]; ++yy)
        for (int xx = 0; xx < o[0]; ++xx, ++n) {
          const Eigen::Index base = c * vox + 2 * z * plane + 2 * static_cast<Eigen::Index>(yy) * d[0] + 2 * xx;
          Eigen::Index best = base;
          for (int k = 1; k < 8; ++k)
            if (x[base + offsets[k]] > x[best]) best = base + offsets[k];
          y[n] = x[best];
          idx[static_cast<std::size_t>(n)] = static_cast<std::int32_t>(best);
        }
}

template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> softmax(const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& logits) {
  const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> e = (logits.array() - logits.maxCoeff()).exp().matrix();
  return e / e.sum();
}

}  // namespace

const char* layer_kind_name(LayerKind k) noexcept {
  switch (k) {
    case LayerKind::Conv3D: return "conv";
    case LayerKind::MaxPool3D: return "pool";
    case LayerKind::Flatten: return "flatten";
    case LayerKind::FullyConnected: return "dense";
  }
  return "?";
}

const char* architecture_name(Architecture a) noexcept {
  return a == Architecture::Fusion ? "fusion" : "single";
}

Architecture parse_architecture(std::string_view name) {
  if (name == "single") return Architecture::SingleModality;
  if (name == "fusion") return Architecture::Fusion;
  throw Error(ErrorCode::InvalidArgument, fmt::format("unknown architecture '{}'", name));
}

std::vector<FeatureShape> branch_shapes(const std::vector<LayerSpec>& branch, const Dims& input_dims) {
  for (int v : input_dims)
    if (v <= 0) throw Error(ErrorCode::NonPositiveDim, "input dims must be positive");
  FeatureShape s{1, input_dims, false};
  std::vector<FeatureShape> out;
  for (const auto& l : branch) {
    switch (l.kind) {
      case LayerKind::Conv3D:
        if (s.flat) throw Error(ErrorCode::InvalidArgument, "conv after flatten");
        if (l.outputs <= 0) throw Error(ErrorCode::InvalidArgument, "conv needs positive channels");
        s.channels = l.outputs;
        break;
      case LayerKind::MaxPool3D:
        if (s.flat) throw Error(ErrorCode::InvalidArgument, "pool after flatten");
        for (int& v : s.dims) {
          if (v < 2) {
            throw Error(ErrorCode::InputTooSmall,
                        fmt::format("input {}x{}x{} does not survive every pool", input_dims[0], input_dims[1],
                                    input_dims[2]));
          }
          v /= 2;
        }
        break;
      case LayerKind::Flatten:
        if (s.flat) throw Error(ErrorCode::InvalidArgument, "flatten applied twice");
        s = FeatureShape{static_cast<int>(s.size()), {1, 1, 1}, true};
        break;
      case LayerKind::FullyConnected:
        if (!s.flat) throw Error(ErrorCode::InvalidArgument, "dense layer needs a flattened input");
        if (l.outputs <= 0) throw Error(ErrorCode::InvalidArgument, "dense layer needs positive width");
        if (l.activation != Activation::ReLU) throw Error(ErrorCode::InvalidArgument, "softmax only at the head");
        s.channels = l.outputs;
        break;
    }
    out.push_back(s);
  }
  return out;
}

void NetworkSpec::validate() const {
  if (branches.empty() || branches.size() > 2) throw Error(ErrorCode::InvalidArgument, "network needs 1 or 2 branches");
  for (const auto& b : branches) {
    if (b.empty()) throw Error(ErrorCode::InvalidArgument, "empty branch");
    if (!branch_shapes(b, input_dims).back().flat) {
      throw Error(ErrorCode::InvalidArgument, "branch must end in a flat feature vector");
    }
  }
  if (merge && (merge->kind != LayerKind::FullyConnected || merge->activation != Activation::ReLU || merge->outputs <= 0)) {
    throw Error(ErrorCode::InvalidArgument, "merge must be a ReLU dense layer");
  }
  if (head.kind != LayerKind::FullyConnected || head.activation != Activation::Softmax || head.outputs < 2) {
    throw Error(ErrorCode::InvalidArgument, "head must be a softmax dense layer over at least 2 classes");
  }
}

namespace {

std::vector<LayerSpec> standard_branch(int kernels) {
  return {LayerSpec::conv(kernels), LayerSpec::pool(),      LayerSpec::conv(kernels),
          LayerSpec::pool(),        LayerSpec::conv(kernels), LayerSpec::pool(),
          LayerSpec::flatten(),     LayerSpec::dense(1024),  LayerSpec::dense(128)};
}

void require_size(const Dims& d) {
  for (int v : d)
    if (v < 8) throw Error(ErrorCode::InputTooSmall, fmt::format("input {}x{}x{} below 8 per axis", d[0], d[1], d[2]));
}

}  // namespace

NetworkSpec build_single_modality(const Dims& input_dims, int classes) {
  require_size(input_dims);
  NetworkSpec s;
  s.architecture = Architecture::SingleModality;
  s.input_dims = input_dims;
  s.branches = {standard_branch(kSingleKernels)};
  s.head = LayerSpec::dense(classes, Activation::Softmax);
  s.validate();
  return s;
}

NetworkSpec build_fusion(const Dims& input_dims, int classes) {
  require_size(input_dims);
  NetworkSpec s;
  s.architecture = Architecture::Fusion;
  s.input_dims = input_dims;
  s.branches = {standard_branch(kFusionKernels), standard_branch(kFusionKernels)};
  s.merge = LayerSpec::dense(128);
  s.head = LayerSpec::dense(classes, Activation::Softmax);
  s.validate();
  return s;
}

std::int64_t count_parameters(const NetworkSpec& net) {
  net.validate();
  std::int64_t total = 0, joined = 0;
  for (const auto& b : net.branches) {
    const auto shapes = branch_shapes(b, net.input_dims);
    FeatureShape in{1, net.input_dims, false};
    for (std::size_t l = 0; l < b.size(); ++l) {
      if (b[l].kind == LayerKind::Conv3D) total += std::int64_t(in.channels) * kKernelVolume * b[l].outputs + b[l].outputs;
      if (b[l].kind == LayerKind::FullyConnected) total += in.size() * b[l].outputs + b[l].outputs;
      in = shapes[l];
    }
    joined += in.size();
  }
  if (net.merge) {
    total += joined * net.merge->outputs + net.merge->outputs;
    joined = net.merge->outputs;
  }
  return total + joined * net.head.outputs + net.head.outputs;
}

std::int64_t count_parameters(const NetworkSpec& net, const Dims& input_dims) {
  NetworkSpec s = net;
  s.input_dims = input_dims;
  return count_parameters(s);
}

template <typename Scalar>
Network<Scalar>::Network(NetworkSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  compile();
}

template <typename Scalar>
Network<Scalar>::Network(NetworkSpec spec, std::uint64_t seed) : Network(std::move(spec)) {
  Rng rng(seed);
  for (const auto& b : blocks_) {
    if (b.bias) continue;
    // fan-in is the row length of the weight matrix
    Eigen::Index fan_in = 0;
    auto find = [&](const Layer& l) {
      if (l.weight_count > 0 && l.weights == b.offset) fan_in = l.weight_count / l.spec.outputs;
    };
    for (const auto& br : branches_)
      for (const auto& l : br) find(l);
    if (merge_) find(*merge_);
    find(head_);
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (Eigen::Index i = 0; i < b.size; ++i) params_[b.offset + i] = static_cast<Scalar>(rng.uniform(-bound, bound));
  }
}

template <typename Scalar>
typename Network<Scalar>::Layer Network<Scalar>::make_layer(const LayerSpec& s, const FeatureShape& in,
                                                            const std::string& name) {
  Layer l;
  l.spec = s;
  l.in = in;
  Eigen::Index offset = blocks_.empty() ? 0 : blocks_.back().offset + blocks_.back().size;
  if (s.kind == LayerKind::Conv3D) {
    l.out = FeatureShape{s.outputs, in.dims, false};
    l.weight_count = static_cast<Eigen::Index>(in.channels) * kKernelVolume * s.outputs;
  } else if (s.kind == LayerKind::FullyConnected) {
    l.out = FeatureShape{s.outputs, {1, 1, 1}, true};
    l.weight_count = in.size() * s.outputs;
  } else if (s.kind == LayerKind::MaxPool3D) {
    l.out = FeatureShape{in.channels, {in.dims[0] / 2, in.dims[1] / 2, in.dims[2] / 2}, false};
  } else {
    l.out = FeatureShape{static_cast<int>(in.size()), {1, 1, 1}, true};
  }
  if (l.weight_count > 0) {
    l.bias_count = s.outputs;
    l.weights = offset;
    l.bias = offset + l.weight_count;
    blocks_.push_back({name + ".weight", l.weights, l.weight_count, s.kind, false});
    blocks_.push_back({name + ".bias", l.bias, l.bias_count, s.kind, true});
  }
  return l;
}

template <typename Scalar>
void Network<Scalar>::compile() {
  Eigen::Index joined = 0;
  for (std::size_t b = 0; b < spec_.branches.size(); ++b) {
    std::vector<Layer> layers;
    FeatureShape s{1, spec_.input_dims, false};
    bool trainable_before = false;
    for (std::size_t i = 0; i < spec_.branches[b].size(); ++i) {
      const LayerSpec& ls = spec_.branches[b][i];
      Layer l = make_layer(ls, s, fmt::format("branch{}.{}{}", b, layer_kind_name(ls.kind), i));
      l.needs_input_grad = trainable_before;
      trainable_before = trainable_before || l.weight_count > 0;
      s = l.out;
      layers.push_back(l);
    }
    joined += s.size();
    branches_.push_back(std::move(layers));
  }
  FeatureShape h{static_cast<int>(joined), {1, 1, 1}, true};
  if (spec_.merge) {
    merge_ = make_layer(*spec_.merge, h, "merge");
    h = merge_->out;
  }
  head_ = make_layer(spec_.head, h, "head");
  params_ = Vector::Zero(blocks_.back().offset + blocks_.back().size);
}

template <typename Scalar>
void Network<Scalar>::dense_forward(const Layer& l, const Buffer& x, Buffer& y) const {
  Eigen::Map<const RowMat<Scalar>> w(params_.data() + l.weights, l.spec.outputs, l.in.size());
  Eigen::Map<const Vector> b(params_.data() + l.bias, l.spec.outputs);
  y = (w * x.matrix() + b).array();
  if (l.spec.activation == Activation::ReLU) y = y.max(Scalar(0));
}

template <typename Scalar>
typename Network<Scalar>::Output Network<Scalar>::forward(std::span<const Tensor<Scalar>> inputs, Mode mode) const {
  if (inputs.size() != branches_.size()) {
    throw Error(ErrorCode::ShapeMismatch,
                fmt::format("network has {} branches but got {} inputs", branches_.size(), inputs.size()));
  }
  const std::vector<int> expect = volume_shape(spec_.input_dims);
  Output out;
  Cache& c = out.cache;
  c.acts.resize(branches_.size());
  c.argmax.resize(branches_.size());
  for (std::size_t b = 0; b < branches_.size(); ++b) {
    if (inputs[b].shape() != expect) {
      throw Error(ErrorCode::ShapeMismatch, fmt::format("input {} does not match the {}x{}x{} network input", b,
                                                        spec_.input_dims[0], spec_.input_dims[1], spec_.input_dims[2]));
    }
    const auto& layers = branches_[b];
    c.argmax[b].resize(layers.size());
    Buffer cur = inputs[b].data();
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const Layer& l = layers[i];
      Buffer next;
      switch (l.spec.kind) {
        case LayerKind::Conv3D:
          conv_forward(params_.data() + l.weights, params_.data() + l.bias, l.in.channels, l.spec.outputs, l.in.dims,
                       cur, next);
          break;
        case LayerKind::MaxPool3D:
          pool_forward(l.in.channels, l.in.dims, cur, next, c.argmax[b][i]);
          break;
        case LayerKind::Flatten:
          next = cur;
          break;
        case LayerKind::FullyConnected:
          dense_forward(l, cur, next);
          break;
      }
      if (mode == Mode::Train) c.acts[b].push_back(std::move(cur));
      cur = std::move(next);
    }
    c.acts[b].push_back(std::move(cur));
  }
  Eigen::Index n = 0;
  for (const auto& a : c.acts) n += a.back().size();
  c.joined.resize(n);
  n = 0;
  for (const auto& a : c.acts) {
    c.joined.segment(n, a.back().size()) = a.back();
    n += a.back().size();
  }
  const Buffer* h = &c.joined;
  if (merge_) {
    dense_forward(*merge_, c.joined, c.merged);
    h = &c.merged;
  }
  Buffer logits;
  dense_forward(head_, *h, logits);
  c.logits = logits.matrix();
  out.probs = softmax(c.logits);
  return out;
}

template <typename Scalar>
Scalar Network<Scalar>::loss(const Output& out, int target) {
  const auto& z = out.cache.logits;
  const Scalar m = z.maxCoeff();
  return m + std::log((z.array() - m).exp().sum()) - z[target];
}

template <typename Scalar>
void Network<Scalar>::accumulate_gradient(const Output& out, int target, Vector& grad) const {
  if (target < 0 || target >= spec_.classes()) throw Error(ErrorCode::InvalidArgument, "target class out of range");
  if (grad.size() != params_.size()) throw Error(ErrorCode::ShapeMismatch, "gradient size mismatch");
  const Cache& c = out.cache;
  for (std::size_t b = 0; b < branches_.size(); ++b)
    if (c.acts.size() != branches_.size() || c.acts[b].size() != branches_[b].size() + 1) {
      throw Error(ErrorCode::InvalidArgument, "backward needs a Train-mode forward");
    }

  auto dense_backward = [&](const Layer& l, const Buffer& x, const Buffer& y, Buffer dz, Buffer* dx) {
    if (l.spec.activation == Activation::ReLU) dz = (y > Scalar(0)).select(dz, Scalar(0));
    Eigen::Map<const RowMat<Scalar>> w(params_.data() + l.weights, l.spec.outputs, l.in.size());
    Eigen::Map<RowMat<Scalar>> gw(grad.data() + l.weights, l.spec.outputs, l.in.size());
    gw.noalias() += dz.matrix() * x.matrix().transpose();
    Eigen::Map<Vector>(grad.data() + l.bias, l.spec.outputs) += dz.matrix();
    if (dx) *dx = (w.transpose() * dz.matrix()).array();
  };

  Buffer dlogits = out.probs.array();
  dlogits[target] -= Scalar(1);
  Buffer dh;
  if (merge_) {
    Buffer dm;
    dense_backward(head_, c.merged, Buffer(), dlogits, &dm);
    dense_backward(*merge_, c.joined, c.merged, dm, &dh);
  } else {
    dense_backward(head_, c.joined, Buffer(), dlogits, &dh);
  }

  Eigen::Index offset = 0;
  for (std::size_t b = 0; b < branches_.size(); ++b) {
    const auto& layers = branches_[b];
    const auto& acts = c.acts[b];
    Buffer g = dh.segment(offset, acts.back().size());
    offset += acts.back().size();
    for (std::size_t i = layers.size(); i-- > 0;) {
      const Layer& l = layers[i];
      const bool want = l.needs_input_grad;
      Buffer next;
      switch (l.spec.kind) {
        case LayerKind::Conv3D:
          conv_backward(params_.data() + l.weights, l.in.channels, l.spec.outputs, l.in.dims, acts[i], acts[i + 1], g,
                        grad.data() + l.weights, grad.data() + l.bias, want ? &next : nullptr);
          break;
        case LayerKind::MaxPool3D:
          if (want) {
            next = Buffer::Zero(l.in.size());
            const auto& idx = c.argmax[b][i];
            for (std::size_t k = 0; k < idx.size(); ++k) next[idx[k]] += g[static_cast<Eigen::Index>(k)];
          }
          break;
        case LayerKind::Flatten:
          next = std::move(g);
          break;
        case LayerKind::FullyConnected:
          dense_backward(l, acts[i], acts[i + 1], g, want ? &next : nullptr);
          break;
      }
      if (!want) break;
      g = std::move(next);
    }
  }
}

template <typename Scalar>
typename Network<Scalar>::Vector Network<Scalar>::backward(const Output& out, int target) const {
  Vector grad = Vector::Zero(params_.size());
  accumulate_gradient(out, target, grad);
  return grad;
}

template class Network<float>;
template class Network<double>;

}  // namespace neurofuse::cnn
