#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>
#include <set>

#include "neurofuse/cnn/checkpoint.hpp"
#include "neurofuse/cnn/network.hpp"
#include "neurofuse/cnn/train.hpp"
#include "neurofuse/nifti.hpp"
#include "neurofuse/random.hpp"

#include "cnn_support.hpp"

using namespace neurofuse;
using namespace neurofuse::cnn;

namespace {

template <typename Scalar>
Tensor<Scalar> random_input(const Dims& d, Rng& rng, double lo = 0.0, double hi = 1.0) {
  Tensor<Scalar> t(volume_shape(d));
  for (Eigen::Index i = 0; i < t.size(); ++i) t[i] = static_cast<Scalar>(rng.uniform(lo, hi));
  return t;
}

// Direct 5x5x5 same-padded convolution of one channel-major tensor.
Eigen::ArrayXd naive_conv(const Eigen::ArrayXd& x, int cin, const Dims& d, const double* w, const double* b, int cout) {
  const int nx = d[0], ny = d[1], nz = d[2];
  Eigen::ArrayXd y(static_cast<Eigen::Index>(cout) * nx * ny * nz);
  for (int o = 0; o < cout; ++o)
    for (int z = 0; z < nz; ++z)
      for (int yy = 0; yy < ny; ++yy)
        for (int xx = 0; xx < nx; ++xx) {
          double s = b[o];
          for (int c = 0; c < cin; ++c)
            for (int kz = 0; kz < 5; ++kz)
              for (int ky = 0; ky < 5; ++ky)
                for (int kx = 0; kx < 5; ++kx) {
                  const int sz = z + kz - 2, sy = yy + ky - 2, sx = xx + kx - 2;
                  if (sz < 0 || sy < 0 || sx < 0 || sz >= nz || sy >= ny || sx >= nx) continue;
                  s += w[((o * cin + c) * 5 + kz) * 25 + ky * 5 + kx] * x[((c * nz + sz) * ny + sy) * nx + sx];
                }
          y[((o * nz + z) * ny + yy) * nx + xx] = std::max(0.0, s);
        }
  return y;
}

}  // namespace

TEST_CASE("shape arithmetic of the builders") {
  const auto full = branch_shapes(build_single_modality({182, 218, 182}).branches[0], {182, 218, 182});
  CHECK(full[6].size() == 22 * 27 * 22 * 20);
  CHECK(full[6].size() == 261360);
  const auto small = branch_shapes(build_single_modality({32, 32, 32}).branches[0], {32, 32, 32});
  CHECK(small[6].size() == 1280);
  const NetworkSpec fusion = build_fusion({32, 32, 32});
  REQUIRE(fusion.branches.size() == 2);
  CHECK(branch_shapes(fusion.branches[1], {32, 32, 32})[6].size() == 640);
  CHECK(fusion.merge->outputs == 128);
  CHECK(full[0].dims == Dims{182, 218, 182});
  CHECK(full[1].dims == Dims{91, 109, 91});
  CHECK(full[3].dims == Dims{45, 54, 45});
  try {
    build_single_modality({4, 4, 4});
    FAIL("no error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InputTooSmall);
  }
  CHECK_THROWS_AS(build_fusion({8, 7, 8}), Error);
  CHECK_NOTHROW(build_fusion({8, 8, 8}));
}

TEST_CASE("spec invariants") {
  const NetworkSpec s = build_single_modality({16, 16, 16});
  for (const auto& l : s.branches[0])
    if (l.kind == LayerKind::Conv3D) CHECK(l.outputs == 20);
  for (const auto& l : build_fusion({16, 16, 16}).branches[1])
    if (l.kind == LayerKind::Conv3D) CHECK(l.outputs == 10);
  NetworkSpec bad = s;
  bad.branches[0].back().activation = Activation::Softmax;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = s;
  bad.branches[0].clear();
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = s;
  bad.branches.clear();
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("parameter counts match a layerwise enumeration") {
  CHECK(nftest::enumerate_single({32, 32, 32}) == 1545762);
  CHECK(count_parameters(build_single_modality({32, 32, 32})) == 1545762);
  CHECK(count_parameters(build_fusion({32, 32, 32})) == nftest::enumerate_fusion({32, 32, 32}));
  CHECK(nftest::enumerate_fusion({32, 32, 32}) == 1660882);
  for (const Dims d : {Dims{8, 8, 8}, Dims{16, 20, 24}, Dims{182, 218, 182}, Dims{40, 33, 9}}) {
    CHECK(count_parameters(build_single_modality(d)) == nftest::enumerate_single(d));
    CHECK(count_parameters(build_fusion(d)) == nftest::enumerate_fusion(d));
    CHECK(count_parameters(build_single_modality({8, 8, 8}), d) == nftest::enumerate_single(d));
  }
  const Network<float> net(build_single_modality({8, 8, 8}));
  CHECK(net.parameter_count() == count_parameters(net.spec()));
  Eigen::Index head = 0;
  for (const auto& b : net.blocks())
    if (b.name.rfind("head", 0) == 0) head += b.size;
  CHECK(head == 258);
}

TEST_CASE("fusion parity holds at full resolution") {
  const double single = static_cast<double>(count_parameters(build_single_modality({182, 218, 182})));
  const double fusion = static_cast<double>(count_parameters(build_fusion({182, 218, 182})));
  MESSAGE("full-size parity " << std::abs(fusion - single) / single);
  CHECK(std::abs(fusion - single) / single < 0.05);
  // at 32^3 the 128-node merge layer and two 1024-node stages dominate
  const double s32 = 1545762, f32 = 1660882;
  CHECK(std::abs(f32 - s32) / s32 == doctest::Approx(0.07447).epsilon(1e-3));
}

TEST_CASE("initialization") {
  const NetworkSpec spec = build_fusion({8, 8, 8});
  const Network<float> a(spec, 3), b(spec, 3), c(spec, 4);
  CHECK((a.parameters().array() == b.parameters().array()).all());
  CHECK((a.parameters().array() != c.parameters().array()).any());
  std::set<std::string> names;
  for (const auto& blk : a.blocks()) {
    CHECK(names.insert(blk.name).second);
    const auto seg = a.parameters().segment(blk.offset, blk.size);
    if (blk.bias) {
      CHECK(seg.isZero(0));
      continue;
    }
    // weight rows have fan-in columns; the bias block that follows holds one entry per row
    const Eigen::Index rows = (&blk + 1)->size;
    const double bound = std::sqrt(6.0 / static_cast<double>(blk.size / rows));
    CHECK(seg.cwiseAbs().maxCoeff() <= bound);
    CHECK(seg.cwiseAbs().maxCoeff() > 0.8 * bound);
  }
}

TEST_CASE("convolution and pooling agree with direct loops") {
  Rng rng(11);
  const Dims d{9, 8, 10};
  NetworkSpec spec = build_single_modality({8, 8, 8});
  spec.input_dims = d;
  const Network<double> net(spec, 5);
  const Tensor<double> x = random_input<double>(d, rng, -1, 1);
  const auto out = net.forward(std::span(&x, 1), Mode::Train);
  const auto& acts = out.cache.acts[0];
  const double* p = net.parameters().data();
  const auto& blocks = net.blocks();
  const Eigen::ArrayXd c1 = naive_conv(x.data(), 1, d, p + blocks[0].offset, p + blocks[1].offset, 20);
  CHECK((c1 - acts[1]).abs().maxCoeff() < 1e-12);
  // pooling: floor division drops the odd x column
  const Dims o{4, 4, 5};
  REQUIRE(acts[2].size() == 20 * 4 * 4 * 5);
  double worst = 0;
  for (int c = 0; c < 20; ++c)
    for (int z = 0; z < o[2]; ++z)
      for (int y = 0; y < o[1]; ++y)
        for (int xx = 0; xx < o[0]; ++xx) {
          double m = -1e300;
          for (int k = 0; k < 8; ++k)
            m = std::max(m, acts[1][((c * d[2] + 2 * z + (k >> 2)) * d[1] + 2 * y + ((k >> 1) & 1)) * d[0] + 2 * xx + (k & 1)]);
          worst = std::max(worst, std::abs(m - acts[2][((c * o[2] + z) * o[1] + y) * o[0] + xx]));
        }
  CHECK(worst == 0.0);
  const Eigen::ArrayXd c2 = naive_conv(acts[2], 20, o, p + blocks[2].offset, p + blocks[3].offset, 20);
  CHECK((c2 - acts[3]).abs().maxCoeff() < 1e-12);
}

TEST_CASE("softmax output is a probability simplex") {
  const Network<float> zero(build_single_modality({8, 8, 8}));
  Rng rng(2);
  const Tensor<float> x = random_input<float>({8, 8, 8}, rng);
  const auto p0 = zero.forward(std::span(&x, 1)).probs;
  CHECK(p0[0] == 0.5f);
  CHECK(p0[1] == 0.5f);
  for (int trial = 0; trial < 100; ++trial) {
    const Network<float> net(trial % 2 ? build_fusion({8, 8, 8}) : build_single_modality({8, 8, 8}),
                             static_cast<std::uint64_t>(trial));
    std::vector<Tensor<float>> in;
    for (std::size_t b = 0; b < net.spec().branches.size(); ++b) in.push_back(random_input<float>({8, 8, 8}, rng, 0, 3));
    const auto p = net.forward(in).probs;
    REQUIRE(p.minCoeff() >= 0.0f);
    REQUIRE(std::abs(p.sum() - 1.0f) <= 1e-6f);
  }
}

TEST_CASE("saturated ReLUs leave only the head bias") {
  Network<double> net(build_single_modality({8, 8, 8}), 9);
  for (const auto& b : net.blocks())
    if (b.bias && b.kind == LayerKind::Conv3D) net.parameters().segment(b.offset, b.size).setConstant(-1e6);
  const auto& head_bias = net.blocks().back();
  net.parameters()[head_bias.offset] = 0.3;
  net.parameters()[head_bias.offset + 1] = -0.2;
  Rng rng(4);
  const Tensor<double> x = random_input<double>({8, 8, 8}, rng);
  const auto out = net.forward(std::span(&x, 1));
  CHECK(out.cache.logits[0] == 0.3);
  CHECK(out.cache.logits[1] == -0.2);
}

TEST_CASE("forward rejects mismatched inputs") {
  const Network<float> single(build_single_modality({8, 8, 8}));
  const Network<float> fusion(build_fusion({8, 8, 8}));
  Rng rng(1);
  const std::vector<Tensor<float>> one{random_input<float>({8, 8, 8}, rng)};
  const std::vector<Tensor<float>> two{one[0], one[0]};
  const std::vector<Tensor<float>> wrong{random_input<float>({8, 8, 9}, rng)};
  for (auto* call : {+[](const Network<float>& n, const std::vector<Tensor<float>>& in) { n.forward(in); }}) {
    try {
      call(single, two);
      FAIL("no error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::ShapeMismatch);
    }
    CHECK_THROWS_AS(call(fusion, one), Error);
    CHECK_THROWS_AS(call(single, wrong), Error);
  }
  const auto infer = single.forward(one, Mode::Infer);
  CHECK_THROWS_AS(single.backward(infer, 0), Error);
}

TEST_CASE("gradients match central differences in 64-bit mode") {
  for (const bool fused : {false, true}) {
    CAPTURE(fused);
    const NetworkSpec spec = fused ? build_fusion({8, 8, 8}) : build_single_modality({8, 8, 8});
    Network<double> net(spec, 21);
    Rng rng(8);
    std::vector<Tensor<double>> in;
    for (std::size_t b = 0; b < spec.branches.size(); ++b) in.push_back(random_input<double>({8, 8, 8}, rng));
    const auto report = nftest::gradient_check(net, in, 1, 200, 77);
    MESSAGE("max relative error " << report.max_relative_error << " over " << report.checked << " parameters ("
                                   << report.replaced << " kink-straddling draws replaced), worst in "
                                   << report.worst_block << " (" << report.worst_analytic << " vs "
                                   << report.worst_numeric << ")");
    CHECK(report.checked >= 200);
    CHECK(report.kinds_covered == 3);
    CHECK(report.max_relative_error < 1e-4);
  }
}

TEST_CASE("softmax cross-entropy shortcut equals the composed chain") {
  Network<double> net(build_single_modality({8, 8, 8}), 6);
  Rng rng(3);
  const Tensor<double> x = random_input<double>({8, 8, 8}, rng);
  const auto out = net.forward(std::span(&x, 1), Mode::Train);
  const auto g = net.backward(out, 1);
  const Eigen::VectorXd p = out.probs;
  const Eigen::Vector2d t(0, 1);
  // dL/dz_j = sum_i (-t_i / p_i) * p_i (delta_ij - p_j)
  Eigen::Vector2d chain;
  for (int j = 0; j < 2; ++j) {
    chain[j] = 0;
    for (int i = 0; i < 2; ++i) chain[j] += (-t[i] / p[i]) * p[i] * ((i == j) - p[j]);
  }
  const auto& hb = net.blocks().back();
  CHECK(std::abs(g[hb.offset] - chain[0]) < 1e-12);
  CHECK(std::abs(g[hb.offset + 1] - chain[1]) < 1e-12);
}

TEST_CASE("zero gradient when probs equal the target") {
  Network<double> net(build_fusion({8, 8, 8}), 6);
  const auto& hb = net.blocks().back();
  net.parameters()[hb.offset] = 2000;
  net.parameters()[hb.offset + 1] = -2000;
  Rng rng(3);
  const std::vector<Tensor<double>> in{random_input<double>({8, 8, 8}, rng), random_input<double>({8, 8, 8}, rng)};
  const auto out = net.forward(in, Mode::Train);
  REQUIRE(out.probs[0] == 1.0);
  REQUIRE(out.probs[1] == 0.0);
  CHECK(net.backward(out, 0).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("float and double networks agree") {
  const Network<double> d(build_single_modality({8, 8, 8}), 12);
  const Network<float> f = d.cast<float>();
  Rng rng(5);
  const Tensor<double> x = random_input<double>({8, 8, 8}, rng);
  const Tensor<float> xf = x.cast<float>();
  CHECK(std::abs(d.forward(std::span(&x, 1)).probs[0] - f.forward(std::span(&xf, 1)).probs[0]) < 1e-5);
}

TEST_CASE("learning rate 0 leaves parameters bit-identical") {
  const auto data = nftest::blob_dataset<float>(16, 3);
  const Network<float> net(build_single_modality({8, 8, 8}), 1);
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  cfg.epochs = 3;
  const auto r = train(net, std::span(data), cfg);
  CHECK(std::memcmp(r.network.parameters().data(), net.parameters().data(), sizeof(float) * net.parameter_count()) == 0);
  CHECK(r.history.size() == 3);
}

TEST_CASE("separable blobs reach 100% training accuracy within 20 epochs") {
  const auto data = nftest::blob_dataset<float>(40, 10);
  TrainConfig cfg;
  cfg.epochs = 20;
  const auto r = train(Network<float>(build_single_modality({8, 8, 8}), 2), std::span(data), cfg);
  REQUIRE(r.history.size() == 20);
  double best = 0;
  for (const auto& h : r.history) best = std::max(best, h.accuracy);
  MESSAGE("final loss " << r.history.back().loss << ", best train accuracy " << best);
  CHECK(best == 1.0);
  CHECK(evaluate(r.network, std::span(data)).accuracy == 1.0);
}

TEST_CASE("fixed seed reproduces the loss history bitwise") {
  const auto data = nftest::blob_dataset<float>(12, 4);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.seed = 99;
  const Network<float> net(build_fusion({8, 8, 8}), 5);
  std::vector<Example<float>> fused;
  for (const auto& ex : data) fused.push_back({{ex.inputs[0], ex.inputs[0]}, ex.label, ex.id});
  const auto a = train(net, std::span(fused), cfg);
  const auto b = train(net, std::span(fused), cfg);
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    CHECK(std::memcmp(&a.history[i].loss, &b.history[i].loss, sizeof(double)) == 0);
  }
  CHECK((a.network.parameters().array() == b.network.parameters().array()).all());
  cfg.seed = 100;
  const auto c = train(net, std::span(fused), cfg);
  CHECK((c.network.parameters().array() != a.network.parameters().array()).any());
}

TEST_CASE("training errors") {
  auto data = nftest::blob_dataset<float>(6, 1);
  const Network<float> net(build_single_modality({8, 8, 8}), 1);
  TrainConfig cfg;
  cfg.epochs = 1;
  auto same = data;
  for (auto& ex : same) ex.label = 1;
  try {
    train(net, std::span(same), cfg);
    FAIL("no error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::SingleClassDataset);
  }
  data[2].inputs[0][5] = std::numeric_limits<float>::quiet_NaN();
  try {
    train(net, std::span(data), cfg);
    FAIL("no error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NonFiniteLoss);
    CHECK(std::string(e.what()).find("blob2") != std::string::npos);
  }
  cfg.momentum = 1.0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg.momentum = 0.9;
  cfg.learning_rate = -1;
  CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("loss trends down on a phantom cohort") {
  const auto data = nftest::phantom_examples(20, 0.5, 0.0, Modality::MRI, 31);
  TrainConfig cfg;
  cfg.epochs = 7;
  const auto r = train(Network<float>(build_single_modality(nftest::kSmallDims), 3), std::span(data), cfg);
  auto smooth = [&](int e) { return (r.history[e - 1].loss + r.history[e].loss + r.history[e + 1].loss) / 3.0; };
  MESSAGE("smoothed loss epoch 1: " << smooth(1) << ", epoch 5: " << smooth(5));
  CHECK(smooth(5) <= smooth(1));
}

TEST_CASE("evaluation metrics") {
  Network<float> net(build_single_modality({8, 8, 8}));
  net.parameters()[net.blocks().back().offset + 1] = 1.0f;  // always predicts class 1
  auto data = nftest::blob_dataset<float>(10, 2);
  for (auto& ex : data) ex.label = 1;
  const Evaluation e = evaluate(net, std::span(data));
  CHECK(e.accuracy == 1.0);
  CHECK(e.confusion(1, 1) == 10);
  CHECK(e.confusion(0, 1) == 0);
  CHECK(e.confusion(1, 0) == 0);
  CHECK(e.probs.size() == 10);

  // untrained net on a balanced set of 100 stays inside the binomial band
  const auto balanced = nftest::blob_dataset<float>(100, 7);
  const double acc = evaluate(Network<float>(build_single_modality({8, 8, 8}), 17), std::span(balanced)).accuracy;
  MESSAGE("random-guess accuracy " << acc);
  CHECK(acc >= 0.35);
  CHECK(acc <= 0.65);
}

TEST_CASE("checkpoint round trip") {
  const Network<float> net(build_fusion({8, 8, 10}), 44);
  const auto path = std::filesystem::temp_directory_path() / "nf_test.ckpt";
  save_checkpoint(path, net, {44, 20, "fused"});
  const Checkpoint c = load_checkpoint(path);
  CHECK(c.network.spec().architecture == Architecture::Fusion);
  CHECK(c.network.spec().input_dims == Dims{8, 8, 10});
  CHECK(c.info.epoch == 20);
  CHECK(c.info.seed == 44);
  CHECK(c.info.modality == "fused");
  CHECK(std::memcmp(c.network.parameters().data(), net.parameters().data(), 4 * net.parameter_count()) == 0);

  auto bytes = read_file(path);
  CHECK(std::string(bytes.begin(), bytes.begin() + 8) == "NFCKPT01");
  // first parameter sits right after the header, little-endian
  std::uint64_t hlen = 0;
  for (int i = 7; i >= 0; --i) hlen = (hlen << 8) | bytes[8 + i];
  std::uint32_t bits = 0;
  for (int i = 3; i >= 0; --i) bits = (bits << 8) | bytes[16 + hlen + i];
  float first;
  std::memcpy(&first, &bits, 4);
  CHECK(first == net.parameters()[0]);
  CHECK(bytes.size() == 16 + hlen + 4 * static_cast<std::size_t>(net.parameter_count()));

  bytes.pop_back();
  write_file(path, std::span<const std::uint8_t>(bytes));
  CHECK_THROWS_AS(load_checkpoint(path), Error);
  bytes[0] = 'X';
  write_file(path, std::span<const std::uint8_t>(bytes));
  try {
    load_checkpoint(path);
    FAIL("no error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::BadMagic);
  }
  std::filesystem::remove(path);
}
